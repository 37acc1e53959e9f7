//! Image-quality indices.
//!
//! Two evaluation protocols are supported. At full resolution there is no
//! ground truth, so quality is split into a spectral distortion (how well the
//! degraded fusion matches the original multispectral input) and a spatial
//! distortion (how consistently each band correlates with the panchromatic
//! image across scales); their complements multiply into a single HQNR score
//! with an optional per-block map for heatmaps. At reduced resolution the
//! original image acts as ground truth and the classic reference indices
//! apply: spectral angle, relative global error, spatial correlation, and the
//! hypercomplex quality index.

use crate::error::{Error, Result};
use crate::sensor::SensorSpec;
use crate::tensor::ImageTensor;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

/// Default side length (and stride) of the quality-index blocks.
pub const DEFAULT_BLOCK: usize = 32;
/// Added to both denominator factors of the blockwise Q index so that
/// near-constant blocks stay finite without noticeably biasing natural ones.
const Q_STABILIZER: f64 = 1e-16;

/// Which evaluation protocol produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReportMode {
    #[serde(rename = "full-res")]
    FullRes,
    #[serde(rename = "reduced-res")]
    ReducedRes,
}

/// A per-block raster of index values (row-major, `rows × cols` blocks).
#[derive(Debug, Clone, Serialize)]
pub struct BlockMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl BlockMap {
    /// Mean block value; equals the scalar index when blocks tile exactly.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Named index values plus enough context to reproduce them.
#[derive(Debug, Clone, Serialize)]
pub struct QualityReport {
    pub mode: ReportMode,
    pub scalars: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_map: Option<BlockMap>,
    pub block_size: usize,
    /// Convention echo: block constants and filter choices are not forced by
    /// the index definitions, so they are recorded with every report.
    pub config: BTreeMap<String, String>,
}

impl QualityReport {
    /// Checks the report's internal consistency contracts.
    pub fn validate(&self) -> Result<()> {
        let get = |k: &str| -> Result<f64> {
            self.scalars
                .get(k)
                .copied()
                .ok_or_else(|| Error::Contract(format!("report is missing scalar '{k}'")))
        };
        match self.mode {
            ReportMode::FullRes => {
                let dl = get("d_lambda")?;
                let ds = get("d_s")?;
                let h = get("hqnr")?;
                if (h - (1.0 - dl) * (1.0 - ds)).abs() > 1e-9 {
                    return Err(Error::Contract(format!(
                        "hqnr {h} is not (1-{dl})*(1-{ds})"
                    )));
                }
                for (name, v) in [("d_lambda", dl), ("d_s", ds)] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Contract(format!("{name} {v} outside [0,1]")));
                    }
                }
            }
            ReportMode::ReducedRes => {
                let sam = get("sam")?;
                let ergas = get("ergas")?;
                let scc = get("scc")?;
                let q2n = get("q2n")?;
                if sam < 0.0 || ergas < 0.0 {
                    return Err(Error::Contract("sam and ergas must be nonnegative".into()));
                }
                if !(-1.0..=1.0).contains(&scc) {
                    return Err(Error::Contract(format!("scc {scc} outside [-1,1]")));
                }
                if !(0.0..=1.0).contains(&q2n) {
                    return Err(Error::Contract(format!("q2n {q2n} outside [0,1]")));
                }
            }
        }
        Ok(())
    }

    /// Pretty JSON for writing to disk.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("report serialization failed: {e}")))
    }
}

fn block_grid(height: usize, width: usize, block: usize) -> Result<(usize, usize)> {
    if block == 0 {
        return Err(Error::Dimension("block size must be positive".into()));
    }
    if block > height || block > width {
        return Err(Error::Dimension(format!(
            "block {block} larger than image {height}x{width}"
        )));
    }
    Ok((height / block, width / block))
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// Universal quality index of one co-located block pair:
/// `4·σ_ab·μ_a·μ_b / ((σ_a²+σ_b²)(μ_a²+μ_b²))` with population moments.
fn q_block_pair(a: &[f64], b: &[f64]) -> f64 {
    if is_constant(a) && is_constant(b) && a[0] == b[0] {
        return 1.0;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut cov = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    va /= n;
    vb /= n;
    cov /= n;
    4.0 * cov * ma * mb / ((va + vb + Q_STABILIZER) * (ma * ma + mb * mb + Q_STABILIZER))
}

fn gather_block(src: &[f64], width: usize, bi: usize, bj: usize, block: usize, out: &mut Vec<f64>) {
    out.clear();
    for row in 0..block {
        let start = (bi * block + row) * width + bj * block;
        out.extend_from_slice(&src[start..start + block]);
    }
}

fn q_blocks(a: &[f64], b: &[f64], height: usize, width: usize, block: usize) -> Result<BlockMap> {
    let (rows, cols) = block_grid(height, width, block)?;
    let mut values = Vec::with_capacity(rows * cols);
    let mut ba = Vec::with_capacity(block * block);
    let mut bb = Vec::with_capacity(block * block);
    for bi in 0..rows {
        for bj in 0..cols {
            gather_block(a, width, bi, bj, block, &mut ba);
            gather_block(b, width, bi, bj, block, &mut bb);
            values.push(q_block_pair(&ba, &bb));
        }
    }
    Ok(BlockMap { rows, cols, values })
}

fn check_same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() || a.bands() != b.bands() {
        return Err(Error::Dimension(format!(
            "shape mismatch: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.bands(),
            b.height(),
            b.width(),
            b.bands()
        )));
    }
    Ok(())
}

/// Blockwise universal quality index of two single-band images, averaged over
/// full `block × block` tiles at stride `block`.
pub fn q_index(a: &ImageTensor, b: &ImageTensor, block: usize) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.bands() != 1 {
        return Err(Error::Dimension("q_index expects single-band images".into()));
    }
    Ok(q_blocks(a.band(0), b.band(0), a.height(), a.width(), block)?.mean())
}

fn next_power_of_two(c: usize) -> usize {
    let mut p = 1;
    while p < c {
        p *= 2;
    }
    p
}

/// Negates every component but the first: the hypercomplex conjugate.
fn cd_conj(x: &mut [f64]) {
    for v in &mut x[1..] {
        *v = -*v;
    }
}

/// Cayley–Dickson product of two 2^k-dimensional hypercomplex numbers:
/// `(a1,a2)(b1,b2) = (a1b1 − b2*·a2, b2·a1 + a2·b1*)`.
fn cd_mult(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    if n == 1 {
        return vec![a[0] * b[0]];
    }
    let h = n / 2;
    let (a1, a2) = a.split_at(h);
    let (b1, b2) = b.split_at(h);
    let p1 = cd_mult(a1, b1);
    let mut b2c = b2.to_vec();
    cd_conj(&mut b2c);
    let p2 = cd_mult(&b2c, a2);
    let q1 = cd_mult(b2, a1);
    let mut b1c = b1.to_vec();
    cd_conj(&mut b1c);
    let q2 = cd_mult(a2, &b1c);
    let mut out = Vec::with_capacity(n);
    for i in 0..h {
        out.push(p1[i] - p2[i]);
    }
    for i in 0..h {
        out.push(q1[i] + q2[i]);
    }
    out
}

/// Hypercomplex Q of one block pair: the classic index with means, variances,
/// and covariance replaced by their hypercomplex moduli.
fn q2n_block(bands_a: &[&[f64]], bands_b: &[&[f64]], dims: usize) -> f64 {
    let c = bands_a.len();
    let n = bands_a[0].len();
    let all_const_equal = (0..c).all(|d| {
        is_constant(bands_a[d]) && is_constant(bands_b[d]) && bands_a[d][0] == bands_b[d][0]
    });
    if all_const_equal {
        return 1.0;
    }

    let mut mu_a = vec![0.0; dims];
    let mut mu_b = vec![0.0; dims];
    for d in 0..c {
        mu_a[d] = bands_a[d].iter().sum::<f64>() / n as f64;
        mu_b[d] = bands_b[d].iter().sum::<f64>() / n as f64;
    }

    // E[z_a · conj(z_b)] accumulated componentwise, then the mean product
    // is subtracted; variances are plain squared-modulus moments.
    let mut e_ab = vec![0.0; dims];
    let mut e_aa = 0.0;
    let mut e_bb = 0.0;
    let mut za = vec![0.0; dims];
    let mut zb = vec![0.0; dims];
    for p in 0..n {
        for d in 0..dims {
            za[d] = if d < c { bands_a[d][p] } else { 0.0 };
            zb[d] = if d < c { bands_b[d][p] } else { 0.0 };
        }
        e_aa += za.iter().map(|v| v * v).sum::<f64>();
        e_bb += zb.iter().map(|v| v * v).sum::<f64>();
        cd_conj(&mut zb);
        let prod = cd_mult(&za, &zb);
        for (acc, v) in e_ab.iter_mut().zip(&prod) {
            *acc += v;
        }
    }
    for v in &mut e_ab {
        *v /= n as f64;
    }
    e_aa /= n as f64;
    e_bb /= n as f64;

    let mod2_mu_a: f64 = mu_a.iter().map(|v| v * v).sum();
    let mod2_mu_b: f64 = mu_b.iter().map(|v| v * v).sum();
    let var_a = e_aa - mod2_mu_a;
    let var_b = e_bb - mod2_mu_b;
    let mut mu_b_conj = mu_b.clone();
    cd_conj(&mut mu_b_conj);
    let mu_prod = cd_mult(&mu_a, &mu_b_conj);
    let cov_mod = e_ab
        .iter()
        .zip(&mu_prod)
        .map(|(e, m)| (e - m) * (e - m))
        .sum::<f64>()
        .sqrt();

    let num = 4.0 * cov_mod * mod2_mu_a.sqrt() * mod2_mu_b.sqrt();
    let den = (var_a + var_b + Q_STABILIZER) * (mod2_mu_a + mod2_mu_b + Q_STABILIZER);
    num / den
}

fn q2n_blocks(a: &ImageTensor, b: &ImageTensor, block: usize) -> Result<BlockMap> {
    check_same_shape(a, b)?;
    let (rows, cols) = block_grid(a.height(), a.width(), block)?;
    let c = a.bands();
    let dims = next_power_of_two(c);
    let mut values = Vec::with_capacity(rows * cols);
    let mut blocks_a: Vec<Vec<f64>> = vec![Vec::with_capacity(block * block); c];
    let mut blocks_b: Vec<Vec<f64>> = vec![Vec::with_capacity(block * block); c];
    for bi in 0..rows {
        for bj in 0..cols {
            for d in 0..c {
                gather_block(a.band(d), a.width(), bi, bj, block, &mut blocks_a[d]);
                gather_block(b.band(d), b.width(), bi, bj, block, &mut blocks_b[d]);
            }
            let refs_a: Vec<&[f64]> = blocks_a.iter().map(|v| v.as_slice()).collect();
            let refs_b: Vec<&[f64]> = blocks_b.iter().map(|v| v.as_slice()).collect();
            values.push(q2n_block(&refs_a, &refs_b, dims));
        }
    }
    Ok(BlockMap { rows, cols, values })
}

/// Hypercomplex multiband quality index: each pixel's spectral vector is
/// embedded as a 2^k-dimensional Cayley–Dickson number (bands zero-padded to
/// the next power of two) and the universal index is evaluated blockwise on
/// hypercomplex moduli. Reduces to [`q_index`] for one band.
pub fn q2n(a: &ImageTensor, b: &ImageTensor, block: usize) -> Result<f64> {
    Ok(q2n_blocks(a, b, block)?.mean())
}

fn check_fusion_shapes(
    fused: &ImageTensor,
    y: &ImageTensor,
    pan: Option<&ImageTensor>,
    spec: &SensorSpec,
) -> Result<()> {
    let r = spec.ratio;
    if fused.bands() != y.bands() {
        return Err(Error::Dimension(format!(
            "fused has {} bands, multispectral input has {}",
            fused.bands(),
            y.bands()
        )));
    }
    if fused.height() != y.height() * r || fused.width() != y.width() * r {
        return Err(Error::Dimension(format!(
            "fused {}x{} is not {r}x the multispectral {}x{}",
            fused.height(),
            fused.width(),
            y.height(),
            y.width()
        )));
    }
    if let Some(p) = pan {
        if p.bands() != 1 {
            return Err(Error::Dimension("panchromatic image must have one band".into()));
        }
        if p.height() != fused.height() || p.width() != fused.width() {
            return Err(Error::Dimension(format!(
                "panchromatic {}x{} does not match fused {}x{}",
                p.height(),
                p.width(),
                fused.height(),
                fused.width()
            )));
        }
    }
    Ok(())
}

/// Spectral distortion: the fused image is degraded back to the input grid
/// and compared against the multispectral input, `D_λ = 1 − Q2n`.
pub fn d_lambda_khan(
    fused: &ImageTensor,
    y: &ImageTensor,
    spec: &SensorSpec,
    block: usize,
) -> Result<f64> {
    check_fusion_shapes(fused, y, None, spec)?;
    let degraded = spec.degrade_ms(fused, 0)?;
    Ok((1.0 - q2n(&degraded, y, block)?).clamp(0.0, 1.0))
}

/// Spatial distortion: the mean absolute gap between each band's correlation
/// with the panchromatic image at full scale and at the input scale,
/// `D_s = (1/c)·Σ_b |Q(fused_b, P) − Q(y_b, P̃)|`.
pub fn d_s(
    fused: &ImageTensor,
    y: &ImageTensor,
    pan: &ImageTensor,
    spec: &SensorSpec,
    block: usize,
) -> Result<f64> {
    check_fusion_shapes(fused, y, Some(pan), spec)?;
    let pan_lr = spec.degrade_pan(pan, 0)?;
    let c = fused.bands();
    let mut total = 0.0;
    for b in 0..c {
        let q_hr = q_blocks(fused.band(b), pan.band(0), fused.height(), fused.width(), block)?;
        let q_lr = q_blocks(y.band(b), pan_lr.band(0), y.height(), y.width(), block)?;
        total += (q_hr.mean() - q_lr.mean()).abs();
    }
    Ok((total / c as f64).clamp(0.0, 1.0))
}

fn echo_conventions(spec: &SensorSpec, block: usize) -> BTreeMap<String, String> {
    let mut cfg = BTreeMap::new();
    cfg.insert("block_size".into(), block.to_string());
    cfg.insert("block_stride".into(), block.to_string());
    cfg.insert("d_s_exponent".into(), "1".into());
    cfg.insert("q_denominator_stabilizer".into(), format!("{Q_STABILIZER:e}"));
    cfg.insert("sensor".into(), spec.name.clone());
    cfg.insert("ratio".into(), spec.ratio.to_string());
    cfg
}

/// Full-resolution no-reference assessment: `HQNR = (1−D_λ)(1−D_s)` plus a
/// per-block diagnostic map on the full-resolution block grid.
///
/// The map spreads each scalar's blockwise variation around the other's
/// global value, `½[(1−dλ_b)(1−D_s) + (1−D_λ)(1−ds_b)]`, with input-scale
/// blocks broadcast to the full-resolution grid. Block values are raw (they
/// may leave `[0,1]`); when blocks tile both grids exactly the map mean
/// equals the scalar HQNR. The per-band absolute gaps in `D_s` are expanded
/// blockwise with the sign of each band's global gap so that the identity
/// survives the absolute value.
pub fn hqnr(
    fused: &ImageTensor,
    y: &ImageTensor,
    pan: &ImageTensor,
    spec: &SensorSpec,
    block: usize,
) -> Result<QualityReport> {
    check_fusion_shapes(fused, y, Some(pan), spec)?;
    let r = spec.ratio;
    let c = fused.bands();

    let degraded = spec.degrade_ms(fused, 0)?;
    let dl_blocks = q2n_blocks(&degraded, y, block)?;
    let d_lambda = (1.0 - dl_blocks.mean()).clamp(0.0, 1.0);

    let pan_lr = spec.degrade_pan(pan, 0)?;
    let mut hr_maps = Vec::with_capacity(c);
    let mut lr_maps = Vec::with_capacity(c);
    let mut signs = Vec::with_capacity(c);
    let mut total = 0.0;
    for b in 0..c {
        let q_hr = q_blocks(fused.band(b), pan.band(0), fused.height(), fused.width(), block)?;
        let q_lr = q_blocks(y.band(b), pan_lr.band(0), y.height(), y.width(), block)?;
        let gap = q_hr.mean() - q_lr.mean();
        signs.push(if gap < 0.0 { -1.0 } else { 1.0 });
        total += gap.abs();
        hr_maps.push(q_hr);
        lr_maps.push(q_lr);
    }
    let d_s_scalar = (total / c as f64).clamp(0.0, 1.0);
    let hqnr_scalar = (1.0 - d_lambda) * (1.0 - d_s_scalar);

    let rows = hr_maps[0].rows;
    let cols = hr_maps[0].cols;
    let lr_rows = dl_blocks.rows;
    let lr_cols = dl_blocks.cols;
    let lr_of = |i: usize, limit: usize| (i / r).min(limit - 1);
    let mut values = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let li = lr_of(i, lr_rows);
            let lj = lr_of(j, lr_cols);
            let dl_b = 1.0 - dl_blocks.values[li * lr_cols + lj];
            let mut ds_b = 0.0;
            for b in 0..c {
                let hr = hr_maps[b].values[i * cols + j];
                let lr = lr_maps[b].values[li * lr_cols + lj];
                ds_b += signs[b] * (hr - lr);
            }
            ds_b /= c as f64;
            values.push(0.5 * ((1.0 - dl_b) * (1.0 - d_s_scalar) + (1.0 - d_lambda) * (1.0 - ds_b)));
        }
    }

    let mut scalars = BTreeMap::new();
    scalars.insert("d_lambda".into(), d_lambda);
    scalars.insert("d_s".into(), d_s_scalar);
    scalars.insert("hqnr".into(), hqnr_scalar);
    Ok(QualityReport {
        mode: ReportMode::FullRes,
        scalars,
        block_map: Some(BlockMap { rows, cols, values }),
        block_size: block,
        config: echo_conventions(spec, block),
    })
}

/// Mean spectral angle between pixel vectors, in degrees, plus the number of
/// pixels skipped because either vector was zero.
pub fn sam_degrees(a: &ImageTensor, b: &ImageTensor) -> Result<(f64, u64)> {
    check_same_shape(a, b)?;
    let plane = a.height() * a.width();
    let c = a.bands();
    let mut sum = 0.0;
    let mut valid = 0u64;
    let mut skipped = 0u64;
    for p in 0..plane {
        let mut na = 0.0;
        let mut nb = 0.0;
        for band in 0..c {
            let va = a.data()[band * plane + p];
            let vb = b.data()[band * plane + p];
            na += va * va;
            nb += vb * vb;
        }
        if na == 0.0 || nb == 0.0 {
            skipped += 1;
            continue;
        }
        // Angle via the stable two-argument form: with unit vectors u, v the
        // angle is 2·atan2(‖u−v‖, ‖u+v‖), exact at 0° and robust near it.
        let (sa, sb) = (na.sqrt(), nb.sqrt());
        let mut diff2 = 0.0;
        let mut sum2 = 0.0;
        for band in 0..c {
            let u = a.data()[band * plane + p] / sa;
            let v = b.data()[band * plane + p] / sb;
            diff2 += (u - v) * (u - v);
            sum2 += (u + v) * (u + v);
        }
        sum += 2.0 * diff2.sqrt().atan2(sum2.sqrt()).to_degrees();
        valid += 1;
    }
    let sam = if valid == 0 { 0.0 } else { sum / valid as f64 };
    Ok((sam, skipped))
}

/// Relative dimensionless global error:
/// `100/r · sqrt((1/c)·Σ_b MSE_b / μ_b²)` with band means from the truth.
pub fn ergas(fused: &ImageTensor, truth: &ImageTensor, ratio: usize) -> Result<f64> {
    check_same_shape(fused, truth)?;
    let c = truth.bands();
    let n = (truth.height() * truth.width()) as f64;
    let mut acc = 0.0;
    for b in 0..c {
        let mu = truth.band(b).iter().sum::<f64>() / n;
        if mu == 0.0 {
            return Err(Error::Degeneracy(format!(
                "truth band {b} has zero mean; relative error is undefined"
            )));
        }
        let mse = fused
            .band(b)
            .iter()
            .zip(truth.band(b))
            .map(|(f, t)| (f - t) * (f - t))
            .sum::<f64>()
            / n;
        acc += mse / (mu * mu);
    }
    Ok(100.0 / ratio as f64 * (acc / c as f64).sqrt())
}

fn laplacian_valid(band: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((height - 2) * (width - 2));
    for i in 1..height - 1 {
        for j in 1..width - 1 {
            let c = band[i * width + j];
            let up = band[(i - 1) * width + j];
            let down = band[(i + 1) * width + j];
            let left = band[i * width + j - 1];
            let right = band[i * width + j + 1];
            out.push(4.0 * c - up - down - left - right);
        }
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut cov = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    if va == 0.0 && vb == 0.0 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Spatial correlation coefficient: Pearson correlation of Laplacian
/// high-pass responses (interior pixels), averaged over bands.
pub fn scc(fused: &ImageTensor, truth: &ImageTensor) -> Result<f64> {
    check_same_shape(fused, truth)?;
    if fused.height() < 3 || fused.width() < 3 {
        return Err(Error::Dimension(
            "image too small for the high-pass correlation (needs 3x3 interiors)".into(),
        ));
    }
    let c = fused.bands();
    let mut total = 0.0;
    for b in 0..c {
        let hf = laplacian_valid(fused.band(b), fused.height(), fused.width());
        let ht = laplacian_valid(truth.band(b), truth.height(), truth.width());
        total += pearson(&hf, &ht);
    }
    Ok(total / c as f64)
}

/// Reduced-resolution reference assessment against a known ground truth.
pub fn reduced_metrics(
    fused: &ImageTensor,
    truth: &ImageTensor,
    ratio: usize,
    block: usize,
) -> Result<QualityReport> {
    check_same_shape(fused, truth)?;
    let (sam, skipped) = sam_degrees(fused, truth)?;
    let ergas_v = ergas(fused, truth, ratio)?;
    let scc_v = scc(fused, truth)?;
    let q2n_v = q2n(fused, truth, block)?;

    let mut scalars = BTreeMap::new();
    scalars.insert("sam".into(), sam);
    scalars.insert("sam_skipped_pixels".into(), skipped as f64);
    scalars.insert("ergas".into(), ergas_v);
    scalars.insert("scc".into(), scc_v.clamp(-1.0, 1.0));
    scalars.insert("q2n".into(), q2n_v.clamp(0.0, 1.0));

    let mut config = BTreeMap::new();
    config.insert("block_size".into(), block.to_string());
    config.insert("block_stride".into(), block.to_string());
    config.insert("ratio".into(), ratio.to_string());
    config.insert("scc_filter".into(), "3x3 laplacian [[0,-1,0],[-1,4,-1],[0,-1,0]]".into());
    Ok(QualityReport {
        mode: ReportMode::ReducedRes,
        scalars,
        block_map: None,
        block_size: block,
        config,
    })
}

/// Renders a block map as a grayscale PNG, one `block × block` tile per
/// value, with `[0,1]` mapped to `[0,255]` (values clamped at export only).
pub fn write_heatmap_png(map: &BlockMap, block: usize, path: &Path) -> Result<()> {
    let height = map.rows * block;
    let width = map.cols * block;
    let mut img = image::GrayImage::new(width as u32, height as u32);
    for i in 0..height {
        for j in 0..width {
            let v = map.values[(i / block) * map.cols + j / block].clamp(0.0, 1.0);
            img.put_pixel(j as u32, i as u32, image::Luma([(v * 255.0).round() as u8]));
        }
    }
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png encoding failed: {e}")))?;
    crate::io::write_atomic(path, &bytes)
}
