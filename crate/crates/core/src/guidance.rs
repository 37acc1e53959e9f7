//! Pseudo-reference providers.
//!
//! Adaptation needs a full-resolution reference image `X` to pull toward.
//! It can come from any external pretrained model via a tensor file, or from
//! one of two built-in classical fusers — a gradient-free detail injector
//! driven by the sensor's blur model, and a band-dependent mixer that reuses
//! the detail-synthesis coefficients. The built-ins are deliberately simple:
//! they make the pipeline self-contained and deterministic, not
//! state-of-the-art.

use crate::error::{Error, Result};
use crate::io::load_tensor;
use crate::pf::{synthesize_detail, DetailCoefficients};
use crate::sensor::SensorSpec;
use crate::tensor::{upsample_poly, ImageTensor};
use std::path::{Path, PathBuf};

/// Gains below this are treated as "no panchromatic contribution".
const GAIN_TOL: f64 = 1e-8;
/// Variance below this makes the global regression meaningless.
const VARIANCE_TOL: f64 = 1e-12;

/// Where the pseudo-reference image comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuidanceSource {
    /// A tensor produced by an external model, `file:<path>` on the CLI.
    File(PathBuf),
    /// Built-in detail injection from the panchromatic high-pass.
    MtfGlp,
    /// Built-in band-dependent mixing via the estimated coefficients.
    Bdsd,
}

impl GuidanceSource {
    /// Parses the CLI form: `file:<path>`, `mtf-glp`, or `bdsd`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("file:") {
            if path.is_empty() {
                return Err(Error::Config("guidance file path is empty".into()));
            }
            return Ok(GuidanceSource::File(PathBuf::from(path)));
        }
        match s {
            "mtf-glp" => Ok(GuidanceSource::MtfGlp),
            "bdsd" => Ok(GuidanceSource::Bdsd),
            other => Err(Error::Config(format!(
                "unknown guidance source '{other}' (expected file:<path>, mtf-glp, or bdsd)"
            ))),
        }
    }

    /// The CLI form, for echoing into run manifests.
    pub fn label(&self) -> String {
        match self {
            GuidanceSource::File(p) => format!("file:{}", p.display()),
            GuidanceSource::MtfGlp => "mtf-glp".into(),
            GuidanceSource::Bdsd => "bdsd".into(),
        }
    }
}

/// Loads an externally produced reference and forces it onto the unit scale.
///
/// Returns the tensor and the number of samples that had to be clamped into
/// `[0, 1]` — a nonzero count is worth surfacing, not an error.
pub fn load_reference(
    path: &Path,
    height: usize,
    width: usize,
    bands: usize,
) -> Result<(ImageTensor, u64)> {
    let (tensor, _) = load_tensor(path)?;
    if tensor.height() != height || tensor.width() != width || tensor.bands() != bands {
        return Err(Error::Format(format!(
            "{}: reference is {}x{}x{}, instance needs {height}x{width}x{bands}",
            path.display(),
            tensor.height(),
            tensor.width(),
            tensor.bands()
        )));
    }
    let mut clamped = 0u64;
    let mut data = tensor.data().to_vec();
    for v in &mut data {
        if *v < 0.0 {
            *v = 0.0;
            clamped += 1;
        } else if *v > 1.0 {
            *v = 1.0;
            clamped += 1;
        }
    }
    Ok((tensor.like_with_data(data)?, clamped))
}

/// A built-in fuser's output plus how its injection gains were obtained.
#[derive(Debug, Clone)]
pub struct FusedGuidance {
    pub image: ImageTensor,
    /// Per-band detail-injection gains actually applied.
    pub gains: Vec<f64>,
    /// How many bands fell back to a degenerate gain estimate.
    pub degenerate_bands: usize,
}

fn check_pair(y: &ImageTensor, pan: &ImageTensor, spec: &SensorSpec) -> Result<()> {
    if pan.bands() != 1 {
        return Err(Error::Dimension("panchromatic image must have one band".into()));
    }
    if y.bands() != spec.bands() {
        return Err(Error::Dimension(format!(
            "image has {} bands, sensor '{}' expects {}",
            y.bands(),
            spec.name,
            spec.bands()
        )));
    }
    if pan.height() != y.height() * spec.ratio || pan.width() != y.width() * spec.ratio {
        return Err(Error::Dimension(format!(
            "panchromatic {}x{} is not {}x the multispectral {}x{}",
            pan.height(),
            pan.width(),
            spec.ratio,
            y.height(),
            y.width()
        )));
    }
    Ok(())
}

/// Detail injection guided by the sensor's blur model.
///
/// The panchromatic band is degraded and re-upsampled to isolate the spatial
/// detail it carries beyond the multispectral resolution: `P − P_low`. Each
/// band receives that detail scaled by its global regression gain
/// `cov(Ŷ_b, P_low) / var(P_low)`. If `P_low` carries no variance the
/// regression is undefined; the fuser then reports unit gains with a
/// degeneracy flag and injects nothing (there is no detail to scale).
pub fn fuse_mtf_glp(
    y: &ImageTensor,
    pan: &ImageTensor,
    spec: &SensorSpec,
    decimation_offset: usize,
) -> Result<FusedGuidance> {
    check_pair(y, pan, spec)?;
    let c = y.bands();
    let yhat = upsample_poly(y, spec.ratio)?;
    let pan_lr = spec.degrade_pan(pan, decimation_offset)?;
    let p_low = upsample_poly(&pan_lr, spec.ratio)?;

    let pl = p_low.band(0);
    let n = pl.len() as f64;
    let mean_pl = pl.iter().sum::<f64>() / n;
    let var_pl = pl.iter().map(|v| (v - mean_pl) * (v - mean_pl)).sum::<f64>() / n;
    if var_pl <= VARIANCE_TOL {
        return Ok(FusedGuidance {
            image: yhat.clone(),
            gains: vec![1.0; c],
            degenerate_bands: c,
        });
    }

    let p = pan.band(0);
    let mut gains = Vec::with_capacity(c);
    let mut data = Vec::with_capacity(yhat.data().len());
    for b in 0..c {
        let band = yhat.band(b);
        let mean_b = band.iter().sum::<f64>() / n;
        let cov = band
            .iter()
            .zip(pl)
            .map(|(yv, pv)| (yv - mean_b) * (pv - mean_pl))
            .sum::<f64>()
            / n;
        let g = cov / var_pl;
        gains.push(g);
        for ((yv, pv), plv) in band.iter().zip(p).zip(pl) {
            data.push(yv + g * (pv - plv));
        }
    }
    Ok(FusedGuidance { image: yhat.like_with_data(data)?, gains, degenerate_bands: 0 })
}

/// Band-dependent detail mixing from the estimated coefficient matrix.
///
/// Row `i` of `H` is split into a panchromatic gain `g_i` and mixing weights
/// `w_{k,i} = −H[i][k]/g_i`, and the band is fused as
/// `X_i = Ŷ_i + g_i·(P − Σ_k w_{k,i}·Ŷ_k)`. A band whose gain falls below
/// tolerance keeps no mixing weights, so it receives only the (negligible)
/// direct panchromatic term. The coefficients are estimated once per
/// instance and shared with the physical loss.
pub fn fuse_bdsd(
    yhat: &ImageTensor,
    pan: &ImageTensor,
    coeffs: &DetailCoefficients,
) -> Result<FusedGuidance> {
    let c = coeffs.bands();
    let mut gains = Vec::with_capacity(c);
    let mut degenerate_bands = 0;
    let mut effective = Vec::with_capacity(c);
    for row in coeffs.rows() {
        let g = row[c];
        gains.push(g);
        if g > GAIN_TOL {
            effective.push(row.clone());
        } else {
            degenerate_bands += 1;
            let mut only_pan = vec![0.0; c + 1];
            only_pan[c] = g;
            effective.push(only_pan);
        }
    }
    let detail = synthesize_detail(yhat, pan, &DetailCoefficients::from_rows(effective)?)?;
    let data: Vec<f64> =
        yhat.data().iter().zip(detail.data()).map(|(a, b)| a + b).collect();
    Ok(FusedGuidance { image: yhat.like_with_data(data)?, gains, degenerate_bands })
}
