//! End-to-end exercises of the four pipeline commands on synthetic scenes.

use fmg_core::config;
use fmg_core::error::Error;
use fmg_core::guidance::GuidanceSource;
use fmg_core::io::{load_tensor, save_tensor};
use fmg_core::metrics;
use fmg_core::net::Variant;
use fmg_core::pipeline::{
    cmd_degrade, cmd_evaluate, cmd_fuse, cmd_guide, DegradeOptions, EvaluateOptions, FuseOptions,
    GuideOptions,
};
use fmg_core::tensor::upsample_poly;
use fmg_core::{ImageTensor, SensorSpec};
use std::path::{Path, PathBuf};

fn test_sensor(bands: usize) -> SensorSpec {
    SensorSpec {
        name: "toy".into(),
        ratio: 4,
        ms_gains: (0..bands).map(|b| 0.30 + 0.02 * b as f64).collect(),
        pan_gain: 0.16,
        kernel_taps: 9,
    }
}

/// Procedural scene: per-band ramps plus shared sinusoid texture, in [0,1].
fn textured_scene(n: usize, bands: usize) -> ImageTensor {
    let mut data = Vec::with_capacity(n * n * bands);
    for b in 0..bands {
        let w = 0.7 + 0.1 * b as f64;
        for i in 0..n {
            for j in 0..n {
                let ramp = 0.15 * (i + j) as f64 / (2.0 * n as f64);
                let tex = 0.12 * (0.37 * i as f64).sin() * (0.29 * j as f64).cos()
                    + 0.06 * (0.81 * j as f64 + 0.13 * i as f64).sin();
                data.push((0.35 + 0.05 * b as f64 + ramp + w * tex).clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(n, n, bands, data, 0.0, 1.0).unwrap()
}

/// Nonnegative weighted band sum with a mild nonlinearity.
fn pan_from(hrms: &ImageTensor) -> ImageTensor {
    let plane = hrms.height() * hrms.width();
    let c = hrms.bands();
    let mut p = vec![0.0; plane];
    for b in 0..c {
        let w = 1.0 / c as f64;
        for (pv, &xv) in p.iter_mut().zip(hrms.band(b)) {
            *pv += w * xv;
        }
    }
    for v in &mut p {
        *v = (*v + 0.05 * *v * *v).clamp(0.0, 1.0);
    }
    ImageTensor::new(hrms.height(), hrms.width(), 1, p, 0.0, 1.0).unwrap()
}

/// Builds a reduced-resolution instance on disk; returns (lrms, pan, truth).
fn write_instance(dir: &Path, n: usize, bands: usize) -> (PathBuf, PathBuf, ImageTensor) {
    let spec = test_sensor(bands);
    let truth = textured_scene(n, bands);
    let pan = pan_from(&truth);
    let y = spec.degrade_ms(&truth, 0).unwrap();
    let lrms_path = dir.join("y.fmgt");
    let pan_path = dir.join("p.fmgt");
    save_tensor(&lrms_path, &y, None).unwrap();
    save_tensor(&pan_path, &pan, None).unwrap();
    (lrms_path, pan_path, truth)
}

fn fast_config(epochs: usize, seed: u64) -> config::AdaptationConfig {
    let mut cfg = config::resolve(&[]).unwrap();
    cfg.epochs = epochs;
    cfg.seed = seed;
    cfg
}

#[test]
fn fuse_writes_all_outputs_and_an_auditable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (lrms, pan, _) = write_instance(dir.path(), 64, 3);
    let opts = FuseOptions {
        lrms,
        pan,
        out: dir.path().join("fused.fmgt"),
        sensor: test_sensor(3),
        guidance: GuidanceSource::MtfGlp,
        config: fast_config(6, 11),
        dump_detail: true,
    };
    let outcome = cmd_fuse(&opts).unwrap();

    assert_eq!(
        (outcome.fused.height(), outcome.fused.width(), outcome.fused.bands()),
        (64, 64, 3)
    );
    assert!(outcome.fused.data().iter().all(|v| v.is_finite()));

    for path in [
        &outcome.paths.fused,
        &outcome.paths.manifest,
        &outcome.paths.loss_csv,
        &outcome.paths.params,
        &outcome.paths.detail,
        &outcome.paths.coefficients,
    ] {
        assert!(path.exists(), "missing output {}", path.display());
    }

    let csv = std::fs::read_to_string(&outcome.paths.loss_csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,l_pr,l_spe,l_phy,l_total");
    assert_eq!(lines.len(), 1 + 6, "one row per epoch");
    assert!(lines[1].starts_with("0,"));
    assert!(lines[6].starts_with("5,"));

    outcome.manifest.validate().unwrap();
    assert_eq!(outcome.manifest.diagnostics.coefficient_estimations, 1);
    assert_eq!(outcome.manifest.bands, 3);
    assert_eq!(outcome.manifest.guidance, "mtf-glp");

    let manifest_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&outcome.paths.manifest).unwrap()).unwrap();
    assert_eq!(manifest_json["seed"], 11);
    assert!(manifest_json["timing"]["training_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest_json["config"]["epochs"], 6);

    let coeffs_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&outcome.paths.coefficients).unwrap())
            .unwrap();
    let rows = coeffs_json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].as_array().unwrap().len(), 4);

    // The written tensor round-trips to the in-memory result (f32 storage).
    let (reloaded, sidecar) = load_tensor(&outcome.paths.fused).unwrap();
    assert_eq!(sidecar.unwrap().ratio, 4);
    for (a, b) in reloaded.data().iter().zip(outcome.fused.data()) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn fusion_is_deterministic_under_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (lrms, pan, _) = write_instance(dir.path(), 64, 2);
    let base = FuseOptions {
        lrms,
        pan,
        out: dir.path().join("a.fmgt"),
        sensor: test_sensor(2),
        guidance: GuidanceSource::MtfGlp,
        config: fast_config(4, 3),
        dump_detail: false,
    };
    cmd_fuse(&base).unwrap();
    let second = FuseOptions { out: dir.path().join("b.fmgt"), ..base };
    cmd_fuse(&second).unwrap();

    let a = std::fs::read(dir.path().join("a.fmgt")).unwrap();
    let b = std::fs::read(dir.path().join("b.fmgt")).unwrap();
    assert_eq!(a, b, "identical runs must produce byte-identical tensors");

    // A different seed changes the result.
    let mut cfg = fast_config(4, 4);
    cfg.lambda_phy = 10.0;
    let third = FuseOptions {
        out: dir.path().join("c.fmgt"),
        config: cfg,
        ..FuseOptions {
            lrms: dir.path().join("y.fmgt"),
            pan: dir.path().join("p.fmgt"),
            out: PathBuf::new(),
            sensor: test_sensor(2),
            guidance: GuidanceSource::MtfGlp,
            config: fast_config(4, 3),
            dump_detail: false,
        }
    };
    cmd_fuse(&third).unwrap();
    let c = std::fs::read(dir.path().join("c.fmgt")).unwrap();
    assert_ne!(a, c, "a different seed should change the fusion");
}

#[test]
fn bdsd_guidance_estimates_coefficients_once() {
    let dir = tempfile::tempdir().unwrap();
    let (lrms, pan, _) = write_instance(dir.path(), 64, 2);
    let opts = FuseOptions {
        lrms,
        pan,
        out: dir.path().join("fused.fmgt"),
        sensor: test_sensor(2),
        guidance: GuidanceSource::Bdsd,
        config: fast_config(3, 5),
        dump_detail: false,
    };
    let outcome = cmd_fuse(&opts).unwrap();
    assert_eq!(outcome.manifest.diagnostics.coefficient_estimations, 1);
    assert_eq!(outcome.manifest.guidance, "bdsd");
    outcome.manifest.validate().unwrap();
}

#[test]
fn warm_start_resumes_and_keeps_the_stored_variant() {
    let dir = tempfile::tempdir().unwrap();
    let (lrms, pan, _) = write_instance(dir.path(), 64, 2);

    let mut first_cfg = fast_config(3, 9);
    first_cfg.variant = Variant::Lightweight;
    let first = FuseOptions {
        lrms: lrms.clone(),
        pan: pan.clone(),
        out: dir.path().join("first.fmgt"),
        sensor: test_sensor(2),
        guidance: GuidanceSource::MtfGlp,
        config: first_cfg,
        dump_detail: false,
    };
    let first_out = cmd_fuse(&first).unwrap();

    // Resume from the saved parameters; the stored variant wins over the
    // (conflicting) configured one, and the manifest echoes the winner.
    let mut resume_cfg = fast_config(2, 9);
    resume_cfg.variant = Variant::Standard;
    resume_cfg.warm_start = Some(first_out.paths.params.clone());
    let resumed = cmd_fuse(&FuseOptions {
        lrms,
        pan,
        out: dir.path().join("resumed.fmgt"),
        sensor: test_sensor(2),
        guidance: GuidanceSource::MtfGlp,
        config: resume_cfg,
        dump_detail: false,
    })
    .unwrap();
    assert_eq!(resumed.manifest.config.variant, Variant::Lightweight);
    let csv = std::fs::read_to_string(&resumed.paths.loss_csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2);

    // Warm-starting an instance with a different band count is rejected.
    let other_dir = tempfile::tempdir().unwrap();
    let (lrms3, pan3, _) = write_instance(other_dir.path(), 64, 3);
    let mut bad_cfg = fast_config(2, 9);
    bad_cfg.warm_start = Some(first_out.paths.params.clone());
    let err = cmd_fuse(&FuseOptions {
        lrms: lrms3,
        pan: pan3,
        out: other_dir.path().join("bad.fmgt"),
        sensor: test_sensor(3),
        guidance: GuidanceSource::MtfGlp,
        config: bad_cfg,
        dump_detail: false,
    })
    .unwrap_err();
    let msg = format!("{err}");
    assert!(msg.contains("init:"), "error should name the stage: {msg}");
}

#[test]
fn degrade_simulates_a_reduced_instance() {
    let dir = tempfile::tempdir().unwrap();
    let spec = test_sensor(2);
    let truth = textured_scene(64, 2);
    let pan = pan_from(&truth);
    let hrms_path = dir.path().join("hrms.fmgt");
    let pan_path = dir.path().join("pan.fmgt");
    save_tensor(&hrms_path, &truth, None).unwrap();
    save_tensor(&pan_path, &pan, None).unwrap();

    cmd_degrade(&DegradeOptions {
        hrms: hrms_path,
        pan: Some(pan_path),
        out_lrms: dir.path().join("y.fmgt"),
        out_pan: Some(dir.path().join("p_lr.fmgt")),
        sensor: spec.clone(),
        decimation_offset: 0,
    })
    .unwrap();

    let (y, sidecar) = load_tensor(&dir.path().join("y.fmgt")).unwrap();
    assert_eq!((y.height(), y.width(), y.bands()), (16, 16, 2));
    assert_eq!(sidecar.unwrap().sensor, "toy");
    let (p_lr, _) = load_tensor(&dir.path().join("p_lr.fmgt")).unwrap();
    assert_eq!((p_lr.height(), p_lr.width(), p_lr.bands()), (16, 16, 1));

    // Round trip: naive upsampling of the simulated input is measurably
    // wrong against the retained original on a textured scene.
    let up = upsample_poly(&y, 4).unwrap();
    let report = metrics::reduced_metrics(&up, &truth, 4, 16).unwrap();
    assert!(report.scalars["sam"] > 0.0);
    assert!(report.scalars["ergas"] > 0.0);

    // A constant scene survives degradation unchanged.
    let flat = ImageTensor::constant(32, 32, 2, 0.42).unwrap();
    let flat_lr = spec.degrade_ms(&flat, 0).unwrap();
    for &v in flat_lr.data() {
        assert!((v - 0.42).abs() < 1e-12);
    }
}

#[test]
fn guide_materializes_each_source() {
    let dir = tempfile::tempdir().unwrap();
    let (lrms, pan, truth) = write_instance(dir.path(), 64, 2);
    let spec = test_sensor(2);

    // Built-in detail injection produces a full-resolution reference.
    let glp = cmd_guide(&GuideOptions {
        lrms: lrms.clone(),
        pan: pan.clone(),
        out: dir.path().join("glp.fmgt"),
        sensor: spec.clone(),
        source: GuidanceSource::MtfGlp,
        patch: 64,
        decimation_offset: 0,
    })
    .unwrap();
    assert_eq!(
        (glp.reference.height(), glp.reference.width(), glp.reference.bands()),
        (64, 64, 2)
    );
    assert!(dir.path().join("glp.fmgt").exists());

    // Band-dependent mixing estimates its coefficients exactly once.
    let bdsd = cmd_guide(&GuideOptions {
        lrms: lrms.clone(),
        pan: pan.clone(),
        out: dir.path().join("bdsd.fmgt"),
        sensor: spec.clone(),
        source: GuidanceSource::Bdsd,
        patch: 64,
        decimation_offset: 0,
    })
    .unwrap();
    assert_eq!(bdsd.coefficient_estimations, 1);

    // A file source is copied through with validation.
    let ext_path = dir.path().join("external.fmgt");
    save_tensor(&ext_path, &truth, None).unwrap();
    let filed = cmd_guide(&GuideOptions {
        lrms: lrms.clone(),
        pan: pan.clone(),
        out: dir.path().join("copied.fmgt"),
        sensor: spec.clone(),
        source: GuidanceSource::File(ext_path),
        patch: 64,
        decimation_offset: 0,
    })
    .unwrap();
    assert_eq!(filed.clamped_samples, 0);
    for (a, b) in filed.reference.data().iter().zip(truth.data()) {
        assert!((a - b).abs() < 1e-6);
    }

    // Constant panchromatic input: injection degenerates to the upsample.
    let flat_pan = ImageTensor::constant(64, 64, 1, 0.5).unwrap();
    let flat_pan_path = dir.path().join("flat_pan.fmgt");
    save_tensor(&flat_pan_path, &flat_pan, None).unwrap();
    let degenerate = cmd_guide(&GuideOptions {
        lrms: lrms.clone(),
        pan: flat_pan_path,
        out: dir.path().join("degenerate.fmgt"),
        sensor: spec.clone(),
        source: GuidanceSource::MtfGlp,
        patch: 64,
        decimation_offset: 0,
    })
    .unwrap();
    assert_eq!(degenerate.degenerate_gains, 2);
    let (y, _) = load_tensor(&lrms).unwrap();
    let yhat = upsample_poly(&y, 4).unwrap();
    assert_eq!(degenerate.reference.data(), yhat.data());
}

#[test]
fn evaluate_scores_both_protocols() {
    let dir = tempfile::tempdir().unwrap();
    let spec = test_sensor(2);
    let truth = textured_scene(128, 2);
    let pan = pan_from(&truth);
    let y = spec.degrade_ms(&truth, 0).unwrap();
    let lrms_path = dir.path().join("y.fmgt");
    let pan_path = dir.path().join("p.fmgt");
    let fused_path = dir.path().join("fused.fmgt");
    save_tensor(&lrms_path, &y, None).unwrap();
    save_tensor(&pan_path, &pan, None).unwrap();
    save_tensor(&fused_path, &truth, None).unwrap();

    // Full-resolution protocol with a heatmap.
    let report_path = dir.path().join("report.json");
    let heatmap_path = dir.path().join("map.png");
    let report = cmd_evaluate(&EvaluateOptions {
        fused: fused_path.clone(),
        lrms: Some(lrms_path.clone()),
        pan: Some(pan_path.clone()),
        truth: None,
        sensor: spec.clone(),
        out: report_path.clone(),
        heatmap: Some(heatmap_path.clone()),
        block: 32,
    })
    .unwrap();
    let dl = report.scalars["d_lambda"];
    let ds = report.scalars["d_s"];
    let h = report.scalars["hqnr"];
    assert_eq!(h, (1.0 - dl) * (1.0 - ds));

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(json["mode"], "full-res");
    assert!(json["block_map"]["values"].as_array().unwrap().len() == 16);

    let png = image::open(&heatmap_path).unwrap().to_luma8();
    let mean =
        png.pixels().map(|p| p.0[0] as f64).sum::<f64>() / (png.pixels().count() as f64 * 255.0);
    assert!((mean - h).abs() < 0.01, "heatmap mean {mean} vs hqnr {h}");

    // Reduced-resolution protocol against the retained truth.
    let truth_path = dir.path().join("truth.fmgt");
    save_tensor(&truth_path, &truth, None).unwrap();
    let reduced = cmd_evaluate(&EvaluateOptions {
        fused: fused_path.clone(),
        lrms: None,
        pan: None,
        truth: Some(truth_path),
        sensor: spec.clone(),
        out: dir.path().join("reduced.json"),
        heatmap: None,
        block: 32,
    })
    .unwrap();
    // The file round-trips through f32 storage, so scores are near-perfect
    // rather than exact.
    assert!(reduced.scalars["sam"] < 1e-4, "sam {}", reduced.scalars["sam"]);
    assert!(reduced.scalars["ergas"] < 1e-2);
    assert!(reduced.scalars["q2n"] > 1.0 - 1e-6);
    assert!(reduced.scalars["scc"] > 1.0 - 1e-6);

    // Missing references are a usage error.
    let err = cmd_evaluate(&EvaluateOptions {
        fused: fused_path,
        lrms: None,
        pan: None,
        truth: None,
        sensor: spec,
        out: dir.path().join("nope.json"),
        heatmap: None,
        block: 32,
    })
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn fuse_errors_name_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (lrms, pan, _) = write_instance(dir.path(), 64, 2);

    // Nonexistent input: fails while loading.
    let err = cmd_fuse(&FuseOptions {
        lrms: dir.path().join("missing.fmgt"),
        pan: pan.clone(),
        out: dir.path().join("out.fmgt"),
        sensor: test_sensor(2),
        guidance: GuidanceSource::MtfGlp,
        config: fast_config(2, 0),
        dump_detail: false,
    })
    .unwrap_err();
    assert!(format!("{err}").contains("load:"), "{err}");

    // Wrong-shaped external reference: fails in the guidance stage with a
    // format error, and no outputs appear.
    let bad_ref = dir.path().join("small.fmgt");
    save_tensor(&bad_ref, &ImageTensor::constant(16, 16, 2, 0.5).unwrap(), None).unwrap();
    let out = dir.path().join("never.fmgt");
    let err = cmd_fuse(&FuseOptions {
        lrms,
        pan,
        out: out.clone(),
        sensor: test_sensor(2),
        guidance: GuidanceSource::File(bad_ref),
        config: fast_config(2, 0),
        dump_detail: false,
    })
    .unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    assert!(format!("{err}").contains("guidance:"), "{err}");
    assert!(!out.exists(), "failed runs must not leave partial outputs");
}
