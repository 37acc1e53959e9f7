//! Detail synthesis coefficients.
//!
//! The physical model says the missing high-frequency detail of each band is
//! a fixed linear mix of the upsampled bands and the panchromatic image. The
//! mix is estimated where both sides are observable: on a central patch,
//! degraded to the low-resolution grid, each band's high-pass residual
//! `Y_i - blur(Y_i)` is regressed onto the degraded stack `[Yhat bands | P]`
//! under the sign constraints of a band-differencing model (non-positive band
//! weights, non-negative panchromatic gain).

use crate::error::{Error, Result};
use crate::nnls::{nnls, Columns};
use crate::sensor::SensorSpec;
use crate::tensor::{decimate, mode3_multiply, upsample_poly, ImageTensor};

/// The estimated `bands x (bands + 1)` mixing matrix.
///
/// Row `i` holds the weights applied to the upsampled bands (first `bands`
/// entries, each `<= 0`) and to the panchromatic band (last entry, `>= 0`).
#[derive(Debug, Clone)]
pub struct DetailCoefficients {
    rows: Vec<Vec<f64>>,
    /// Squared residual of each band's regression.
    pub residual_norm_sq: Vec<f64>,
    /// Set when any band's system was rank-deficient.
    pub degenerate: bool,
}

impl DetailCoefficients {
    /// Wraps an explicit `bands x (bands + 1)` matrix (no residual record).
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let c = rows.len();
        if c == 0 {
            return Err(Error::Dimension("coefficient matrix needs at least one row".into()));
        }
        for row in &rows {
            if row.len() != c + 1 {
                return Err(Error::Dimension(format!(
                    "coefficient rows must have {} entries, got {}",
                    c + 1,
                    row.len()
                )));
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::Config("coefficients must be finite".into()));
            }
        }
        Ok(DetailCoefficients { rows, residual_norm_sq: vec![0.0; c], degenerate: false })
    }

    pub fn bands(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Panchromatic gain of band `i` (the last entry of row `i`).
    pub fn gain(&self, i: usize) -> f64 {
        self.rows[i][self.rows.len()]
    }
}

/// The per-band regression system assembled on the reduced grid.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    /// `bands + 1` regressor rows (degraded upsampled bands, then degraded
    /// panchromatic), each holding one sample per patch pixel.
    pub regressors: Vec<Vec<f64>>,
    /// One high-pass target row per band.
    pub targets: Vec<Vec<f64>>,
    /// Top-left corner of the analysis patch on the panchromatic grid.
    pub patch_origin: (usize, usize),
    /// Patch side length on the panchromatic grid.
    pub patch: usize,
}

impl ReducedSystem {
    pub fn bands(&self) -> usize {
        self.targets.len()
    }

    fn validate(&self) -> Result<()> {
        if self.regressors.len() != self.targets.len() + 1 {
            return Err(Error::Dimension(format!(
                "{} regressor rows for {} bands; expected bands + 1",
                self.regressors.len(),
                self.targets.len()
            )));
        }
        let n = self.regressors[0].len();
        if n == 0 {
            return Err(Error::Dimension("empty regression system".into()));
        }
        for row in self.regressors.iter().chain(self.targets.iter()) {
            if row.len() != n {
                return Err(Error::Dimension("ragged regression system".into()));
            }
        }
        Ok(())
    }
}

/// Stacks the upsampled bands and the panchromatic band into one tensor.
pub fn build_m(yhat: &ImageTensor, pan: &ImageTensor) -> Result<ImageTensor> {
    if pan.bands() != 1 {
        return Err(Error::Dimension(format!(
            "panchromatic image must have one band, got {}",
            pan.bands()
        )));
    }
    if yhat.height() != pan.height() || yhat.width() != pan.width() {
        return Err(Error::Dimension(format!(
            "stack operands disagree: {}x{} vs {}x{}",
            yhat.height(),
            yhat.width(),
            pan.height(),
            pan.width()
        )));
    }
    let mut data = Vec::with_capacity(yhat.data().len() + pan.data().len());
    data.extend_from_slice(yhat.data());
    data.extend_from_slice(pan.data());
    yhat.with_range_of(yhat.height(), yhat.width(), yhat.bands() + 1, data)
}

/// Crops the central `patch x patch` panchromatic window (and the matching
/// low-resolution window), degrades the `[Yhat | P]` stack to the reduced
/// grid, and pairs it with each band's high-pass target.
pub fn build_reduced_system(
    y: &ImageTensor,
    pan: &ImageTensor,
    spec: &SensorSpec,
    patch: usize,
    decimation_offset: usize,
) -> Result<ReducedSystem> {
    let r = spec.ratio;
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
    if pan.height() != y.height() * r || pan.width() != y.width() * r {
        return Err(Error::Dimension(format!(
            "panchromatic {}x{} is not {r}x the multispectral {}x{}",
            pan.height(),
            pan.width(),
            y.height(),
            y.width()
        )));
    }
    if patch == 0 || patch % r != 0 {
        return Err(Error::Config(format!("patch {patch} must be a positive multiple of {r}")));
    }
    if patch > pan.height() || patch > pan.width() {
        return Err(Error::Dimension(format!(
            "patch {patch} exceeds panchromatic extent {}x{}",
            pan.height(),
            pan.width()
        )));
    }

    let lr_patch = patch / r;
    let lr_y0 = (y.height() - lr_patch) / 2;
    let lr_x0 = (y.width() - lr_patch) / 2;
    let origin = (lr_y0 * r, lr_x0 * r);

    let y_crop = y.crop(lr_y0, lr_x0, lr_patch, lr_patch)?;
    let pan_crop = pan.crop(origin.0, origin.1, patch, patch)?;
    let yhat_crop = upsample_poly(&y_crop, r)?;
    let stack = build_m(&yhat_crop, &pan_crop)?;

    // Degrade the stack band by band: multispectral kernels first, then pan.
    let blurred_ms = spec.blur_ms(&stack.crop_bands(0, y.bands())?)?;
    let blurred_pan = spec.blur_pan(&stack.crop_band(y.bands())?)?;
    let blurred = build_m(&blurred_ms, &blurred_pan)?;
    let reduced = decimate(&blurred, r, decimation_offset)?;
    let regressors: Vec<Vec<f64>> = (0..reduced.bands()).map(|b| reduced.band(b).to_vec()).collect();

    // High-pass targets: blur the full band (the kernel may exceed the crop),
    // then evaluate on the cropped grid. The decimated-equivalent kernels
    // keep the target's passband aligned with the degraded regressors; the
    // high-resolution sigma would high-pass far more of the band than the
    // regressors retain and inflate the panchromatic gain several-fold.
    let y_blurred = spec.blur_ms_lowres(y)?;
    let mut targets = Vec::with_capacity(y.bands());
    for b in 0..y.bands() {
        let mut row = Vec::with_capacity(lr_patch * lr_patch);
        let band = y.band(b);
        let blurred_band = y_blurred.band(b);
        for py in lr_y0..lr_y0 + lr_patch {
            for px in lr_x0..lr_x0 + lr_patch {
                let idx = py * y.width() + px;
                row.push(band[idx] - blurred_band[idx]);
            }
        }
        targets.push(row);
    }

    let sys = ReducedSystem { regressors, targets, patch_origin: origin, patch };
    sys.validate()?;
    Ok(sys)
}

/// Estimates the mixing matrix row by row under the sign constraints.
///
/// Band rows are constrained non-positive and the panchromatic entry
/// non-negative, so each row solves an NNLS problem on sign-flipped band
/// regressors.
pub fn estimate_coefficients(sys: &ReducedSystem) -> Result<DetailCoefficients> {
    sys.validate()?;
    let c = sys.bands();
    let n = sys.regressors[0].len();

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(c + 1);
    for (j, row) in sys.regressors.iter().enumerate() {
        if j < c {
            columns.push(row.iter().map(|v| -v).collect());
        } else {
            columns.push(row.clone());
        }
    }
    let a = Columns::new(n, columns)?;

    let mut rows = Vec::with_capacity(c);
    let mut residual_norm_sq = Vec::with_capacity(c);
    let mut degenerate = false;
    for target in &sys.targets {
        let sol = nnls(&a, target)?;
        let mut row: Vec<f64> = sol.x[..c].iter().map(|z| -z).collect();
        row.push(sol.x[c]);
        rows.push(row);
        residual_norm_sq.push(sol.residual_norm_sq);
        degenerate |= sol.degenerate;
    }
    Ok(DetailCoefficients { rows, residual_norm_sq, degenerate })
}

/// Applies the mixing matrix to the full-scale `[Yhat | P]` stack.
pub fn synthesize_detail(
    yhat: &ImageTensor,
    pan: &ImageTensor,
    coeffs: &DetailCoefficients,
) -> Result<ImageTensor> {
    if coeffs.bands() != yhat.bands() {
        return Err(Error::Dimension(format!(
            "coefficients cover {} bands, image has {}",
            coeffs.bands(),
            yhat.bands()
        )));
    }
    let stack = build_m(yhat, pan)?;
    mode3_multiply(&stack, coeffs.rows())
}

impl ImageTensor {
    /// Copies out bands `[first, first + count)` as their own tensor.
    pub fn crop_bands(&self, first: usize, count: usize) -> Result<ImageTensor> {
        if first + count > self.bands() || count == 0 {
            return Err(Error::Dimension(format!(
                "band range {first}..{} out of range {}",
                first + count,
                self.bands()
            )));
        }
        let plane = self.height() * self.width();
        let data = self.data()[first * plane..(first + count) * plane].to_vec();
        self.with_range_of(self.height(), self.width(), count, data)
    }
}
