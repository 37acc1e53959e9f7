//! End-to-end commands.
//!
//! Four entry points mirror the CLI: `degrade` simulates a reduced-resolution
//! instance from real data, `guide` materializes a pseudo-reference, `fuse`
//! runs the per-image adaptation loop, and `evaluate` scores a fusion. `fuse`
//! records a run manifest with a wall-clock decomposition per stage and
//! enough configuration echo to reproduce the run bit for bit: given the same
//! inputs and seed, the output tensor is byte-identical.

use crate::config::AdaptationConfig;
use crate::error::{Error, Result};
use crate::guidance::{self, GuidanceSource};
use crate::io::{load_tensor, save_tensor, write_atomic, Sidecar};
use crate::losses;
use crate::metrics::{self, QualityReport};
use crate::net;
use crate::pf::{self, DetailCoefficients};
use crate::sensor::SensorSpec;
use crate::tensor::{upsample_poly, ImageTensor};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// One timed pipeline stage, in seconds since the run started.
#[derive(Debug, Clone, Serialize)]
pub struct StageSpan {
    pub stage: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Wall-clock decomposition of a fusion run.
#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub guidance_s: f64,
    pub pf_precompute_s: f64,
    pub training_s: f64,
    pub adaptive_inference_s: f64,
    /// Everything else: loading, upsampling, initialization, writing.
    pub other_s: f64,
    pub total_s: f64,
    pub timeline: Vec<StageSpan>,
}

/// Counters worth surfacing next to the outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    /// Mixing-coefficient estimations performed (the matrix is shared by the
    /// guidance and the physical loss, so this must be 1).
    pub coefficient_estimations: u32,
    /// Reference samples clamped into `[0,1]` when loading an external file.
    pub clamped_reference_samples: u64,
    /// Bands whose injection gain collapsed to a degenerate estimate.
    pub degenerate_gains: usize,
}

/// Everything needed to audit or reproduce one fusion run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub lrms: String,
    pub pan: String,
    pub sensor: String,
    pub ratio: usize,
    pub bands: usize,
    pub guidance: String,
    pub seed: u64,
    /// Effective configuration after all precedence layers (and after a warm
    /// start substitutes the stored network's variant).
    pub config: AdaptationConfig,
    pub outputs: BTreeMap<String, String>,
    pub timing: Timing,
    pub diagnostics: Diagnostics,
}

impl RunManifest {
    /// Checks the timing decomposition and stage ordering contracts.
    pub fn validate(&self) -> Result<()> {
        let t = &self.timing;
        for (name, v) in [
            ("guidance_s", t.guidance_s),
            ("pf_precompute_s", t.pf_precompute_s),
            ("training_s", t.training_s),
            ("adaptive_inference_s", t.adaptive_inference_s),
            ("other_s", t.other_s),
            ("total_s", t.total_s),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Contract(format!("stage time {name} is {v}")));
            }
        }
        let sum = t.guidance_s
            + t.pf_precompute_s
            + t.training_s
            + t.adaptive_inference_s
            + t.other_s;
        if sum > t.total_s + 1e-3 {
            return Err(Error::Contract(format!(
                "stage times sum to {sum}, exceeding total {}",
                t.total_s
            )));
        }
        let end_of = |stage: &str| -> f64 {
            t.timeline
                .iter()
                .filter(|s| s.stage == stage)
                .map(|s| s.end_s)
                .fold(0.0, f64::max)
        };
        if let Some(training) = t.timeline.iter().find(|s| s.stage == "training") {
            for dep in ["guidance", "pf_precompute"] {
                if end_of(dep) > training.start_s {
                    return Err(Error::Contract(format!(
                        "stage {dep} finished after training began"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Measures stages against a single run origin so spans can be ordered.
struct StageClock {
    origin: Instant,
    timeline: Vec<StageSpan>,
}

impl StageClock {
    fn new() -> Self {
        StageClock { origin: Instant::now(), timeline: Vec::new() }
    }

    /// Runs one stage, recording its span and tagging any error with the
    /// stage name.
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start_s = self.origin.elapsed().as_secs_f64();
        let out = f().map_err(|e| e.tagged(stage));
        let end_s = self.origin.elapsed().as_secs_f64();
        self.timeline.push(StageSpan { stage: stage.into(), start_s, end_s });
        out
    }

    fn seconds(&self, stage: &str) -> f64 {
        self.timeline
            .iter()
            .filter(|s| s.stage == stage)
            .map(|s| s.end_s - s.start_s)
            .sum()
    }

    fn finish(self) -> Timing {
        let total_s = self.origin.elapsed().as_secs_f64();
        let guidance_s = self.seconds("guidance");
        let pf_precompute_s = self.seconds("pf_precompute");
        let training_s = self.seconds("training");
        let adaptive_inference_s = self.seconds("adaptive_inference");
        let other_s =
            (total_s - guidance_s - pf_precompute_s - training_s - adaptive_inference_s).max(0.0);
        Timing {
            guidance_s,
            pf_precompute_s,
            training_s,
            adaptive_inference_s,
            other_s,
            total_s,
            timeline: self.timeline,
        }
    }
}

/// Side-output locations derived from the fused tensor's path.
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub fused: PathBuf,
    pub manifest: PathBuf,
    pub loss_csv: PathBuf,
    pub params: PathBuf,
    pub detail: PathBuf,
    pub coefficients: PathBuf,
}

/// Derives the family of output paths from the main output path.
pub fn derive_output_paths(out: &Path) -> OutputPaths {
    OutputPaths {
        fused: out.to_path_buf(),
        manifest: out.with_extension("manifest.json"),
        loss_csv: out.with_extension("loss.csv"),
        params: out.with_extension("params.fmgp"),
        detail: out.with_extension("detail.fmgt"),
        coefficients: out.with_extension("coefficients.json"),
    }
}

/// Inputs for one fusion run.
#[derive(Debug, Clone)]
pub struct FuseOptions {
    pub lrms: PathBuf,
    pub pan: PathBuf,
    pub out: PathBuf,
    pub sensor: SensorSpec,
    pub guidance: GuidanceSource,
    pub config: AdaptationConfig,
    /// Also write the precomputed detail tensor and mixing matrix.
    pub dump_detail: bool,
}

/// What a fusion run produced (everything is already on disk).
#[derive(Debug)]
pub struct FuseOutcome {
    pub fused: ImageTensor,
    pub manifest: RunManifest,
    pub paths: OutputPaths,
}

#[derive(Serialize)]
struct CoefficientDump<'a> {
    rows: &'a [Vec<f64>],
    residual_norm_sq: &'a [f64],
    degenerate: bool,
}

fn load_pair(
    lrms: &Path,
    pan_path: &Path,
    spec: &SensorSpec,
) -> Result<(ImageTensor, ImageTensor)> {
    let (y, _) = load_tensor(lrms)?;
    let (pan, _) = load_tensor(pan_path)?;
    if pan.bands() != 1 {
        return Err(Error::Dimension(format!(
            "panchromatic input has {} bands, expected 1",
            pan.bands()
        )));
    }
    if y.bands() != spec.bands() {
        return Err(Error::Dimension(format!(
            "multispectral input has {} bands, sensor '{}' expects {}",
            y.bands(),
            spec.name,
            spec.bands()
        )));
    }
    let r = spec.ratio;
    if pan.height() != y.height() * r || pan.width() != y.width() * r {
        return Err(Error::Dimension(format!(
            "panchromatic {}x{} is not {r}x the multispectral {}x{}",
            pan.height(),
            pan.width(),
            y.height(),
            y.width()
        )));
    }
    Ok((y, pan))
}

fn estimate_once(
    cache: &mut Option<DetailCoefficients>,
    count: &mut u32,
    y: &ImageTensor,
    pan: &ImageTensor,
    spec: &SensorSpec,
    patch: usize,
    offset: usize,
) -> Result<DetailCoefficients> {
    if cache.is_none() {
        let sys = pf::build_reduced_system(y, pan, spec, patch, offset)?;
        *cache = Some(pf::estimate_coefficients(&sys)?);
        *count += 1;
    }
    Ok(cache.as_ref().unwrap().clone())
}

/// Runs the full adaptation loop on one image pair and writes the fused
/// tensor, network parameters, loss history, and run manifest.
pub fn cmd_fuse(opts: &FuseOptions) -> Result<FuseOutcome> {
    opts.sensor.validate()?;
    opts.config.validate()?;
    let paths = derive_output_paths(&opts.out);
    let mut clock = StageClock::new();

    let (y, pan) = clock.run("load", || load_pair(&opts.lrms, &opts.pan, &opts.sensor))?;
    let r = opts.sensor.ratio;
    let c = y.bands();
    let yhat = clock.run("upsample", || upsample_poly(&y, r))?;

    let mut coeffs_cache: Option<DetailCoefficients> = None;
    let mut estimations = 0u32;
    let mut clamped_reference_samples = 0u64;
    let mut degenerate_gains = 0usize;

    let x_ref = clock.run("guidance", || match &opts.guidance {
        GuidanceSource::File(path) => {
            let (t, clamped) = guidance::load_reference(path, yhat.height(), yhat.width(), c)?;
            clamped_reference_samples = clamped;
            Ok(t)
        }
        GuidanceSource::MtfGlp => {
            let fused =
                guidance::fuse_mtf_glp(&y, &pan, &opts.sensor, opts.config.decimation_offset)?;
            degenerate_gains = fused.degenerate_bands;
            Ok(fused.image)
        }
        GuidanceSource::Bdsd => {
            let coeffs = estimate_once(
                &mut coeffs_cache,
                &mut estimations,
                &y,
                &pan,
                &opts.sensor,
                opts.config.patch,
                opts.config.decimation_offset,
            )?;
            let fused = guidance::fuse_bdsd(&yhat, &pan, &coeffs)?;
            degenerate_gains = fused.degenerate_bands;
            Ok(fused.image)
        }
    })?;

    let (coeffs, detail) = clock.run("pf_precompute", || {
        let coeffs = estimate_once(
            &mut coeffs_cache,
            &mut estimations,
            &y,
            &pan,
            &opts.sensor,
            opts.config.patch,
            opts.config.decimation_offset,
        )?;
        let detail = pf::synthesize_detail(&yhat, &pan, &coeffs)?;
        Ok((coeffs, detail))
    })?;

    let (mut params, delta) = clock.run("init", || {
        let params = match &opts.config.warm_start {
            Some(path) => {
                let loaded = net::load_params(path)?;
                loaded.check_bands(c)?;
                loaded
            }
            None => net::init_params(opts.config.variant, c, opts.config.seed)?,
        };
        let delta = net::build_input(&pan, &yhat)?;
        Ok((params, delta))
    })?;
    let mut effective = opts.config.clone();
    effective.variant = params.variant;

    let mut csv = String::from("epoch,l_pr,l_spe,l_phy,l_total\n");
    clock.run("training", || {
        for epoch in 0..effective.epochs {
            let (x_star, cache) = net::forward(&params, &delta, &yhat)?;
            let breakdown =
                losses::total_loss(&x_star, &x_ref, &y, &detail, &opts.sensor, &effective)?;
            let grads = net::backward(&params, &cache, &breakdown.grad_x_star)?;
            net::adam_step(&mut params, &grads, &effective)?;
            csv.push_str(&format!(
                "{epoch},{},{},{},{}\n",
                breakdown.l_pr, breakdown.l_spe, breakdown.l_phy, breakdown.l_total
            ));
        }
        Ok(())
    })?;

    let fused =
        clock.run("adaptive_inference", || Ok(net::forward(&params, &delta, &yhat)?.0))?;

    let sidecar = Sidecar { sensor: opts.sensor.name.clone(), ratio: r };
    let mut outputs = BTreeMap::new();
    outputs.insert("fused".into(), paths.fused.display().to_string());
    outputs.insert("manifest".into(), paths.manifest.display().to_string());
    outputs.insert("loss_csv".into(), paths.loss_csv.display().to_string());
    outputs.insert("params".into(), paths.params.display().to_string());
    if opts.dump_detail {
        outputs.insert("detail".into(), paths.detail.display().to_string());
        outputs.insert("coefficients".into(), paths.coefficients.display().to_string());
    }

    clock.run("write", || {
        save_tensor(&paths.fused, &fused, Some(&sidecar))?;
        net::save_params(&params, &paths.params)?;
        write_atomic(&paths.loss_csv, csv.as_bytes())?;
        if opts.dump_detail {
            save_tensor(&paths.detail, &detail, Some(&sidecar))?;
            let dump = CoefficientDump {
                rows: coeffs.rows(),
                residual_norm_sq: &coeffs.residual_norm_sq,
                degenerate: coeffs.degenerate,
            };
            let json = serde_json::to_string_pretty(&dump)
                .map_err(|e| Error::Format(format!("coefficient serialization failed: {e}")))?;
            write_atomic(&paths.coefficients, json.as_bytes())?;
        }
        Ok(())
    })?;

    let manifest = RunManifest {
        lrms: opts.lrms.display().to_string(),
        pan: opts.pan.display().to_string(),
        sensor: opts.sensor.name.clone(),
        ratio: r,
        bands: c,
        guidance: opts.guidance.label(),
        seed: effective.seed,
        config: effective,
        outputs,
        timing: clock.finish(),
        diagnostics: Diagnostics {
            coefficient_estimations: estimations,
            clamped_reference_samples,
            degenerate_gains,
        },
    };
    manifest.validate()?;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
    write_atomic(&paths.manifest, json.as_bytes())?;

    Ok(FuseOutcome { fused, manifest, paths })
}

/// Inputs for reduced-resolution simulation.
#[derive(Debug, Clone)]
pub struct DegradeOptions {
    pub hrms: PathBuf,
    pub pan: Option<PathBuf>,
    pub out_lrms: PathBuf,
    pub out_pan: Option<PathBuf>,
    pub sensor: SensorSpec,
    pub decimation_offset: usize,
}

/// Blur-and-decimate a full-resolution pair so the originals can serve as
/// ground truth at the reduced scale.
pub fn cmd_degrade(opts: &DegradeOptions) -> Result<()> {
    opts.sensor.validate()?;
    let (hrms, _) = load_tensor(&opts.hrms)?;
    let y = opts.sensor.degrade_ms(&hrms, opts.decimation_offset)?;
    let sidecar = Sidecar { sensor: opts.sensor.name.clone(), ratio: opts.sensor.ratio };
    save_tensor(&opts.out_lrms, &y, Some(&sidecar))?;
    if let Some(pan_path) = &opts.pan {
        let out_pan = opts.out_pan.as_ref().ok_or_else(|| {
            Error::Config("an output path for the degraded panchromatic image is required".into())
        })?;
        let (pan, _) = load_tensor(pan_path)?;
        let pan_lr = opts.sensor.degrade_pan(&pan, opts.decimation_offset)?;
        save_tensor(out_pan, &pan_lr, Some(&sidecar))?;
    }
    Ok(())
}

/// Inputs for materializing a pseudo-reference.
#[derive(Debug, Clone)]
pub struct GuideOptions {
    pub lrms: PathBuf,
    pub pan: PathBuf,
    pub out: PathBuf,
    pub sensor: SensorSpec,
    pub source: GuidanceSource,
    pub patch: usize,
    pub decimation_offset: usize,
}

/// What `cmd_guide` produced.
#[derive(Debug)]
pub struct GuideOutcome {
    pub reference: ImageTensor,
    pub degenerate_gains: usize,
    pub clamped_samples: u64,
    pub coefficient_estimations: u32,
}

/// Produces and writes the pseudo-reference for an image pair.
pub fn cmd_guide(opts: &GuideOptions) -> Result<GuideOutcome> {
    opts.sensor.validate()?;
    let (y, pan) = load_pair(&opts.lrms, &opts.pan, &opts.sensor)?;
    let c = y.bands();
    let mut outcome = GuideOutcome {
        reference: ImageTensor::zeros(1, 1, 1)?,
        degenerate_gains: 0,
        clamped_samples: 0,
        coefficient_estimations: 0,
    };
    outcome.reference = match &opts.source {
        GuidanceSource::File(path) => {
            let (t, clamped) =
                guidance::load_reference(path, pan.height(), pan.width(), c)?;
            outcome.clamped_samples = clamped;
            t
        }
        GuidanceSource::MtfGlp => {
            let fused = guidance::fuse_mtf_glp(&y, &pan, &opts.sensor, opts.decimation_offset)?;
            outcome.degenerate_gains = fused.degenerate_bands;
            fused.image
        }
        GuidanceSource::Bdsd => {
            let mut cache = None;
            let coeffs = estimate_once(
                &mut cache,
                &mut outcome.coefficient_estimations,
                &y,
                &pan,
                &opts.sensor,
                opts.patch,
                opts.decimation_offset,
            )?;
            let yhat = upsample_poly(&y, opts.sensor.ratio)?;
            let fused = guidance::fuse_bdsd(&yhat, &pan, &coeffs)?;
            outcome.degenerate_gains = fused.degenerate_bands;
            fused.image
        }
    };
    let sidecar = Sidecar { sensor: opts.sensor.name.clone(), ratio: opts.sensor.ratio };
    save_tensor(&opts.out, &outcome.reference, Some(&sidecar))?;
    Ok(outcome)
}

/// Inputs for scoring a fused image.
#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub fused: PathBuf,
    /// Full-resolution protocol references.
    pub lrms: Option<PathBuf>,
    pub pan: Option<PathBuf>,
    /// Reduced-resolution protocol reference; selects that protocol.
    pub truth: Option<PathBuf>,
    pub sensor: SensorSpec,
    pub out: PathBuf,
    pub heatmap: Option<PathBuf>,
    pub block: usize,
}

/// Scores a fused tensor and writes the report (plus an optional heatmap).
pub fn cmd_evaluate(opts: &EvaluateOptions) -> Result<QualityReport> {
    opts.sensor.validate()?;
    let (fused, _) = load_tensor(&opts.fused)?;
    let report = if let Some(truth_path) = &opts.truth {
        let (truth, _) = load_tensor(truth_path)?;
        metrics::reduced_metrics(&fused, &truth, opts.sensor.ratio, opts.block)?
    } else {
        let lrms = opts.lrms.as_ref().ok_or_else(|| {
            Error::Config(
                "full-resolution evaluation needs the original multispectral and panchromatic \
                 inputs (or pass a ground truth for the reduced-resolution protocol)"
                    .into(),
            )
        })?;
        let pan_path = opts.pan.as_ref().ok_or_else(|| {
            Error::Config("full-resolution evaluation needs the panchromatic input".into())
        })?;
        let (y, pan) = load_pair(lrms, pan_path, &opts.sensor)?;
        metrics::hqnr(&fused, &y, &pan, &opts.sensor, opts.block)?
    };
    report.validate()?;
    write_atomic(&opts.out, report.to_json()?.as_bytes())?;
    if let Some(heatmap) = &opts.heatmap {
        let map = report.block_map.as_ref().ok_or_else(|| {
            Error::Config("heatmaps are only produced by full-resolution evaluation".into())
        })?;
        metrics::write_heatmap_png(map, report.block_size, heatmap)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config;

    #[test]
    fn output_paths_follow_the_fused_path() {
        let paths = derive_output_paths(Path::new("/tmp/run/x.fmgt"));
        assert_eq!(paths.manifest, Path::new("/tmp/run/x.manifest.json"));
        assert_eq!(paths.loss_csv, Path::new("/tmp/run/x.loss.csv"));
        assert_eq!(paths.params, Path::new("/tmp/run/x.params.fmgp"));
        assert_eq!(paths.detail, Path::new("/tmp/run/x.detail.fmgt"));
        assert_eq!(paths.coefficients, Path::new("/tmp/run/x.coefficients.json"));
    }

    #[test]
    fn stage_clock_accounts_for_all_time() {
        let mut clock = StageClock::new();
        clock.run("guidance", || Ok(std::hint::black_box(1 + 1))).unwrap();
        clock.run("training", || Ok(std::hint::black_box(2 + 2))).unwrap();
        let timing = clock.finish();
        assert!(timing.guidance_s >= 0.0);
        assert!(timing.training_s >= 0.0);
        assert!(timing.other_s >= 0.0);
        let sum = timing.guidance_s
            + timing.pf_precompute_s
            + timing.training_s
            + timing.adaptive_inference_s
            + timing.other_s;
        assert!(sum <= timing.total_s + 1e-3);
        assert_eq!(timing.timeline.len(), 2);
        assert!(timing.timeline[0].end_s <= timing.timeline[1].start_s);
    }

    #[test]
    fn stage_errors_keep_their_class() {
        let mut clock = StageClock::new();
        let err = clock
            .run("load", || -> Result<()> { Err(Error::Dimension("bad shape".into())) })
            .unwrap_err();
        match &err {
            Error::Dimension(msg) => assert!(msg.starts_with("load:"), "{msg}"),
            other => panic!("variant changed: {other:?}"),
        }
        assert_eq!(err.exit_code(), 3);
        // The failed stage still appears in the timeline.
        assert_eq!(clock.timeline.len(), 1);
    }

    fn manifest_with_timing(timing: Timing) -> RunManifest {
        RunManifest {
            lrms: "y.fmgt".into(),
            pan: "p.fmgt".into(),
            sensor: "wv3".into(),
            ratio: 4,
            bands: 8,
            guidance: "mtf-glp".into(),
            seed: 0,
            config: config::resolve(&[]).unwrap(),
            outputs: BTreeMap::new(),
            timing,
            diagnostics: Diagnostics {
                coefficient_estimations: 1,
                clamped_reference_samples: 0,
                degenerate_gains: 0,
            },
        }
    }

    #[test]
    fn manifest_validation_rejects_bad_timing() {
        let good = Timing {
            guidance_s: 0.1,
            pf_precompute_s: 0.2,
            training_s: 1.0,
            adaptive_inference_s: 0.05,
            other_s: 0.05,
            total_s: 1.4,
            timeline: vec![
                StageSpan { stage: "guidance".into(), start_s: 0.0, end_s: 0.1 },
                StageSpan { stage: "pf_precompute".into(), start_s: 0.1, end_s: 0.3 },
                StageSpan { stage: "training".into(), start_s: 0.3, end_s: 1.3 },
            ],
        };
        manifest_with_timing(good.clone()).validate().unwrap();

        let mut negative = good.clone();
        negative.training_s = -0.5;
        assert!(matches!(manifest_with_timing(negative).validate(), Err(Error::Contract(_))));

        let mut oversum = good.clone();
        oversum.other_s = 10.0;
        assert!(matches!(manifest_with_timing(oversum).validate(), Err(Error::Contract(_))));

        let mut out_of_order = good;
        out_of_order.timeline[1] =
            StageSpan { stage: "pf_precompute".into(), start_s: 0.5, end_s: 0.9 };
        assert!(matches!(
            manifest_with_timing(out_of_order).validate(),
            Err(Error::Contract(_))
        ));
    }
}
