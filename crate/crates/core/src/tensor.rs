//! Planar image tensors and the handful of linear operators the rest of the
//! library is built from: boundary-aware convolution, its adjoint, polynomial
//! upsampling, decimation, and band mixing.

use crate::error::{Error, Result};

/// How samples outside the image are produced during convolution.
///
/// Only half-sample symmetric reflection is supported: `x[-1] == x[0]`,
/// `x[n] == x[n-1]`. Reflection keeps unit-sum symmetric kernels exactly
/// mean-preserving, which the degradation model relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    SymmetricReflect,
}

/// A square convolution kernel with an odd tap count.
///
/// Kernels built as an outer product of a 1-D factor remember that factor so
/// convolution can run as two separable passes.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    taps: usize,
    weights: Vec<f64>,
    separable: Option<Vec<f64>>,
    boundary: Boundary,
}

impl KernelSpec {
    /// Builds a dense kernel from row-major `taps x taps` weights.
    pub fn new(taps: usize, weights: Vec<f64>) -> Result<Self> {
        if taps == 0 || taps % 2 == 0 {
            return Err(Error::Config(format!("kernel taps must be odd, got {taps}")));
        }
        if weights.len() != taps * taps {
            return Err(Error::Dimension(format!(
                "kernel weights: expected {} entries, got {}",
                taps * taps,
                weights.len()
            )));
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::Config("kernel weights must be finite".into()));
        }
        Ok(KernelSpec { taps, weights, separable: None, boundary: Boundary::default() })
    }

    /// Builds the separable kernel `factor ⊗ factor`.
    pub fn separable(factor: &[f64]) -> Result<Self> {
        let taps = factor.len();
        if taps == 0 || taps % 2 == 0 {
            return Err(Error::Config(format!("kernel taps must be odd, got {taps}")));
        }
        if !factor.iter().all(|w| w.is_finite()) {
            return Err(Error::Config("kernel weights must be finite".into()));
        }
        let mut weights = Vec::with_capacity(taps * taps);
        for &a in factor {
            for &b in factor {
                weights.push(a * b);
            }
        }
        Ok(KernelSpec {
            taps,
            weights,
            separable: Some(factor.to_vec()),
            boundary: Boundary::default(),
        })
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Sum of all weights; 1 for a normalized low-pass kernel.
    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// The kernel rotated by 180 degrees (used to form the adjoint).
    pub fn flipped(&self) -> KernelSpec {
        let mut weights = self.weights.clone();
        weights.reverse();
        let separable = self.separable.as_ref().map(|f| {
            let mut f = f.clone();
            f.reverse();
            f
        });
        KernelSpec { taps: self.taps, weights, separable, boundary: self.boundary }
    }
}

/// A multi-band raster held as band-major planar `f64` samples.
///
/// Samples are kept on the unit scale; `min_valid`/`max_valid` record the
/// radiometric range of the source digital numbers so containers can restore
/// it on save. Every public constructor rejects non-finite samples, and all
/// operators preserve finiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    bands: usize,
    min_valid: f64,
    max_valid: f64,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        data: Vec<f64>,
        min_valid: f64,
        max_valid: f64,
    ) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Dimension(format!(
                "tensor dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(Error::Dimension(format!(
                "tensor data: expected {} samples, got {}",
                height * width * bands,
                data.len()
            )));
        }
        if !(min_valid.is_finite() && max_valid.is_finite() && max_valid > min_valid) {
            return Err(Error::Config(format!(
                "invalid radiometric range [{min_valid}, {max_valid}]"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("tensor samples must be finite".into()));
        }
        Ok(ImageTensor { height, width, bands, min_valid, max_valid, data })
    }

    /// All-zero tensor on the unit range.
    pub fn zeros(height: usize, width: usize, bands: usize) -> Result<Self> {
        Self::new(height, width, bands, vec![0.0; height * width * bands], 0.0, 1.0)
    }

    /// Constant-valued tensor on the unit range.
    pub fn constant(height: usize, width: usize, bands: usize, value: f64) -> Result<Self> {
        Self::new(height, width, bands, vec![value; height * width * bands], 0.0, 1.0)
    }

    /// New tensor with the same shape and radiometric range but fresh data.
    pub fn like_with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.height, self.width, self.bands, data, self.min_valid, self.max_valid)
    }

    /// New tensor with this tensor's radiometric range but a different shape.
    pub fn with_range_of(
        &self,
        height: usize,
        width: usize,
        bands: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        Self::new(height, width, bands, data, self.min_valid, self.max_valid)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn min_valid(&self) -> f64 {
        self.min_valid
    }

    pub fn max_valid(&self) -> f64 {
        self.max_valid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[b * plane..(b + 1) * plane]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f64] {
        let plane = self.height * self.width;
        &mut self.data[b * plane..(b + 1) * plane]
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> f64 {
        self.data[(b * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, b: usize, y: usize, x: usize, v: f64) {
        self.data[(b * self.height + y) * self.width + x] = v;
    }

    /// Mean of one band.
    pub fn band_mean(&self, b: usize) -> f64 {
        let band = self.band(b);
        band.iter().sum::<f64>() / band.len() as f64
    }

    /// Axis-aligned crop of `nh x nw` pixels starting at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, nh: usize, nw: usize) -> Result<ImageTensor> {
        if y0 + nh > self.height || x0 + nw > self.width || nh == 0 || nw == 0 {
            return Err(Error::Dimension(format!(
                "crop {nh}x{nw}@({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(nh * nw * self.bands);
        for b in 0..self.bands {
            let band = self.band(b);
            for y in y0..y0 + nh {
                data.extend_from_slice(&band[y * self.width + x0..y * self.width + x0 + nw]);
            }
        }
        self.with_range_of(nh, nw, self.bands, data)
    }

    /// True when shapes and all samples match exactly (range ignored).
    pub fn same_samples(&self, other: &ImageTensor) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.bands == other.bands
            && self.data == other.data
    }
}

/// Mirrors `i` into `[0, n)` with half-sample symmetric reflection.
pub(crate) fn reflect_index(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    debug_assert!(n > 0);
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

fn check_kernel_fits(img: &ImageTensor, kernel: &KernelSpec) -> Result<()> {
    if kernel.taps > img.height || kernel.taps > img.width {
        return Err(Error::Dimension(format!(
            "kernel of {} taps exceeds image {}x{}",
            kernel.taps, img.height, img.width
        )));
    }
    Ok(())
}

/// Same-size convolution of every band with `kernel` under reflection padding.
///
/// This is a true convolution (the kernel is flipped); for the symmetric
/// kernels used by the degradation model the distinction from correlation
/// vanishes.
pub fn conv2d_same(img: &ImageTensor, kernel: &KernelSpec) -> Result<ImageTensor> {
    correlate(img, &kernel.flipped())
}

/// Adjoint of `conv2d_same` with a matching boundary treatment.
///
/// Implemented as correlation with the same kernel; for images whose support
/// stays a kernel radius away from the border this is the exact adjoint, and
/// for symmetric kernels it coincides with the forward operator.
pub fn adjoint_conv2d(img: &ImageTensor, kernel: &KernelSpec) -> Result<ImageTensor> {
    correlate(img, kernel)
}

fn correlate(img: &ImageTensor, kernel: &KernelSpec) -> Result<ImageTensor> {
    check_kernel_fits(img, kernel)?;
    let (h, w) = (img.height, img.width);
    let mut out = vec![0.0; img.data.len()];
    match &kernel.separable {
        Some(factor) => {
            let mut tmp = vec![0.0; h * w];
            for b in 0..img.bands {
                let src = img.band(b);
                let dst = &mut out[b * h * w..(b + 1) * h * w];
                sep_pass_rows(src, h, w, factor, &mut tmp);
                sep_pass_cols(&tmp, h, w, factor, dst);
            }
        }
        None => {
            for b in 0..img.bands {
                let src = img.band(b);
                let dst = &mut out[b * h * w..(b + 1) * h * w];
                dense_conv(src, h, w, kernel, dst);
            }
        }
    }
    img.like_with_data(out)
}

fn sep_pass_rows(src: &[f64], h: usize, w: usize, factor: &[f64], dst: &mut [f64]) {
    let taps = factor.len();
    let c = taps / 2;
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut dst[y * w..(y + 1) * w];
        if w >= taps {
            for (o, win) in out[c..w - c].iter_mut().zip(row.windows(taps)) {
                *o = win.iter().zip(factor).map(|(a, f)| a * f).sum();
            }
            for x in 0..c {
                out[x] = reflect_dot(row, w, x, factor, c);
            }
            for x in w - c..w {
                out[x] = reflect_dot(row, w, x, factor, c);
            }
        } else {
            for x in 0..w {
                out[x] = reflect_dot(row, w, x, factor, c);
            }
        }
    }
}

fn sep_pass_cols(src: &[f64], h: usize, w: usize, factor: &[f64], dst: &mut [f64]) {
    let taps = factor.len();
    let c = taps / 2;
    dst.fill(0.0);
    for y in 0..h {
        let out = &mut dst[y * w..(y + 1) * w];
        for (t, &f) in factor.iter().enumerate() {
            let sy = reflect_index(y as isize + t as isize - c as isize, h);
            let srow = &src[sy * w..(sy + 1) * w];
            for (o, &s) in out.iter_mut().zip(srow) {
                *o += f * s;
            }
        }
    }
}

fn reflect_dot(row: &[f64], n: usize, x: usize, factor: &[f64], c: usize) -> f64 {
    factor
        .iter()
        .enumerate()
        .map(|(t, &f)| f * row[reflect_index(x as isize + t as isize - c as isize, n)])
        .sum()
}

fn dense_conv(src: &[f64], h: usize, w: usize, kernel: &KernelSpec, dst: &mut [f64]) {
    let taps = kernel.taps;
    let c = taps / 2;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in 0..taps {
                let sy = reflect_index(y as isize + dy as isize - c as isize, h);
                let srow = &src[sy * w..(sy + 1) * w];
                let wrow = &kernel.weights[dy * taps..(dy + 1) * taps];
                for dx in 0..taps {
                    let sx = reflect_index(x as isize + dx as isize - c as isize, w);
                    acc += wrow[dx] * srow[sx];
                }
            }
            dst[y * w + x] = acc;
        }
    }
}

/// Half-coefficients of the 23-tap interpolation kernel at odd offsets 1..11;
/// even offsets are zero, so original samples pass through untouched.
const INTERP23_ODD: [f64; 6] = [
    0.305334091185,
    -0.072698593239,
    0.021809577942,
    -0.005192756653,
    0.000807762146,
    -0.000060081482,
];

/// 12-tap odd-phase filter for one 2x doubling pass, normalized to unit sum.
fn odd_phase_taps() -> [f64; 12] {
    let mut taps = [0.0; 12];
    for (d, &cd) in INTERP23_ODD.iter().enumerate() {
        // Input offset delta contributes at kernel distance |2*delta - 1|.
        taps[5 - d] = 2.0 * cd;
        taps[6 + d] = 2.0 * cd;
    }
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Upsamples by `r` (a power of two) with the separable 23-tap polynomial
/// interpolator, doubling once per pass. Original samples are reproduced
/// exactly at stride-`r` grid sites.
pub fn upsample_poly(img: &ImageTensor, r: usize) -> Result<ImageTensor> {
    if r < 2 || !r.is_power_of_two() {
        return Err(Error::Config(format!("upsample ratio must be a power of two >= 2, got {r}")));
    }
    let phase = odd_phase_taps();
    let mut cur = img.clone();
    let mut passes = r;
    while passes > 1 {
        cur = double_once(&cur, &phase)?;
        passes /= 2;
    }
    Ok(cur)
}

fn double_once(img: &ImageTensor, phase: &[f64; 12]) -> Result<ImageTensor> {
    let (h, w, bands) = (img.height, img.width, img.bands);
    // Widen rows, then columns; each direction keeps known samples at even
    // sites and fills odd sites with the 12-tap odd-phase filter.
    let mut wide = vec![0.0; h * 2 * w * bands];
    for b in 0..bands {
        let src = img.band(b);
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let out = &mut wide[(b * h + y) * 2 * w..(b * h + y + 1) * 2 * w];
            double_line(row, phase, out);
        }
    }
    let mut tall = vec![0.0; 2 * h * 2 * w * bands];
    let w2 = 2 * w;
    let mut col_in = vec![0.0; h];
    let mut col_out = vec![0.0; 2 * h];
    for b in 0..bands {
        let plane = &wide[b * h * w2..(b + 1) * h * w2];
        let out_plane = &mut tall[b * 2 * h * w2..(b + 1) * 2 * h * w2];
        for x in 0..w2 {
            for y in 0..h {
                col_in[y] = plane[y * w2 + x];
            }
            double_line(&col_in, phase, &mut col_out);
            for y in 0..2 * h {
                out_plane[y * w2 + x] = col_out[y];
            }
        }
    }
    img.with_range_of(2 * h, 2 * w, bands, tall)
}

fn double_line(src: &[f64], phase: &[f64; 12], dst: &mut [f64]) {
    let n = src.len();
    debug_assert_eq!(dst.len(), 2 * n);
    for (i, &v) in src.iter().enumerate() {
        dst[2 * i] = v;
        let mut acc = 0.0;
        for (t, &f) in phase.iter().enumerate() {
            // Tap t corresponds to input offset delta = t - 5.
            let j = reflect_index(i as isize + t as isize - 5, n);
            acc += f * src[j];
        }
        dst[2 * i + 1] = acc;
    }
}

/// Keeps every `r`-th sample starting at `(offset, offset)`.
pub fn decimate(img: &ImageTensor, r: usize, offset: usize) -> Result<ImageTensor> {
    if r == 0 {
        return Err(Error::Config("decimation ratio must be positive".into()));
    }
    if offset >= r {
        return Err(Error::Config(format!("decimation offset {offset} must be < ratio {r}")));
    }
    if img.height % r != 0 || img.width % r != 0 {
        return Err(Error::Dimension(format!(
            "decimation ratio {r} must divide image {}x{}",
            img.height, img.width
        )));
    }
    let (nh, nw) = (img.height / r, img.width / r);
    let mut data = Vec::with_capacity(nh * nw * img.bands);
    for b in 0..img.bands {
        let band = img.band(b);
        for y in 0..nh {
            let row = &band[(offset + y * r) * img.width..];
            for x in 0..nw {
                data.push(row[offset + x * r]);
            }
        }
    }
    img.with_range_of(nh, nw, img.bands, data)
}

/// Mixes bands along the spectral axis: `out[i] = Σ_j coeffs[i][j] * band[j]`.
///
/// Each coefficient row must have exactly `img.bands()` entries; the output
/// has one band per row.
pub fn mode3_multiply(img: &ImageTensor, coeffs: &[Vec<f64>]) -> Result<ImageTensor> {
    if coeffs.is_empty() {
        return Err(Error::Dimension("band-mixing matrix must have at least one row".into()));
    }
    for (i, row) in coeffs.iter().enumerate() {
        if row.len() != img.bands {
            return Err(Error::Dimension(format!(
                "band-mixing row {i} has {} entries, expected {}",
                row.len(),
                img.bands
            )));
        }
    }
    let plane = img.height * img.width;
    let mut data = vec![0.0; plane * coeffs.len()];
    for (i, row) in coeffs.iter().enumerate() {
        let out = &mut data[i * plane..(i + 1) * plane];
        for (j, &c) in row.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let band = img.band(j);
            for (o, &v) in out.iter_mut().zip(band) {
                *o += c * v;
            }
        }
    }
    img.with_range_of(img.height, img.width, coeffs.len(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor_from(h: usize, w: usize, vals: &[f64]) -> ImageTensor {
        ImageTensor::new(h, w, 1, vals.to_vec(), 0.0, 1.0).unwrap()
    }

    fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, bands: usize) -> ImageTensor {
        let data: Vec<f64> = (0..h * w * bands).map(|_| rng.gen_range(0.0..1.0)).collect();
        ImageTensor::new(h, w, bands, data, 0.0, 1.0).unwrap()
    }

    #[test]
    fn mean_kernel_center_value() {
        let img = tensor_from(3, 3, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let kernel = KernelSpec::new(3, vec![1.0 / 9.0; 9]).unwrap();
        let out = conv2d_same(&img, &kernel).unwrap();
        assert_relative_eq!(out.get(0, 1, 1), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_image_fixed_under_unit_sum_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let raw: Vec<f64> = (0..25).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let kernel = KernelSpec::new(5, raw.iter().map(|v| v / s).collect()).unwrap();
        let img = ImageTensor::constant(9, 11, 2, 0.37).unwrap();
        let out = conv2d_same(&img, &kernel).unwrap();
        for &v in out.data() {
            assert_relative_eq!(v, 0.37, epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetric_kernel_preserves_global_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = random_tensor(&mut rng, 17, 13, 1);
        let factor = {
            // Symmetric unit-sum 1-D factor.
            let half = [0.05, 0.2, 0.5];
            vec![half[0], half[1], half[2], half[1], half[0]]
        };
        let kernel = KernelSpec::separable(&factor).unwrap();
        let out = conv2d_same(&img, &kernel).unwrap();
        let mean_in = img.band_mean(0);
        let mean_out = out.band_mean(0);
        assert_relative_eq!(mean_in, mean_out, max_relative = 1e-6);
    }

    #[test]
    fn adjoint_stamps_flipped_kernel_on_delta() {
        let mut img = ImageTensor::zeros(9, 9, 1).unwrap();
        img.set(0, 4, 4, 1.0);
        let w: Vec<f64> = (1..=9).map(|v| v as f64 / 45.0).collect();
        let kernel = KernelSpec::new(3, w.clone()).unwrap();
        let out = adjoint_conv2d(&img, &kernel).unwrap();
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let got = out.get(0, (4 + dy) as usize, (4 + dx) as usize);
                let want = w[((1 - dy) * 3 + (1 - dx)) as usize];
                assert_relative_eq!(got, want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn adjoint_dot_product_identity_on_zero_border_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = ImageTensor::zeros(32, 32, 1).unwrap();
        let mut y = ImageTensor::zeros(32, 32, 1).unwrap();
        for iy in 8..24 {
            for ix in 8..24 {
                x.set(0, iy, ix, rng.gen_range(-1.0..1.0));
                y.set(0, iy, ix, rng.gen_range(-1.0..1.0));
            }
        }
        let raw: Vec<f64> = (0..81).map(|_| rng.gen_range(-0.5..1.0)).collect();
        let kernel = KernelSpec::new(9, raw).unwrap();
        let ax = conv2d_same(&x, &kernel).unwrap();
        let aty = adjoint_conv2d(&y, &kernel).unwrap();
        let lhs: f64 = ax.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()).max(1.0));
    }

    #[test]
    fn upsample_preserves_samples_at_even_sites() {
        let img = tensor_from(2, 2, &[0.1, 0.4, 0.7, 0.9]);
        let up = upsample_poly(&img, 2).unwrap();
        assert_eq!(up.height(), 4);
        assert_eq!(up.width(), 4);
        for y in 0..2 {
            for x in 0..2 {
                assert_relative_eq!(up.get(0, 2 * y, 2 * x), img.get(0, y, x), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn upsample_preserves_constants() {
        let img = ImageTensor::constant(4, 6, 2, 3.0).unwrap();
        let up = upsample_poly(&img, 4).unwrap();
        assert_eq!((up.height(), up.width()), (16, 24));
        for &v in up.data() {
            assert_relative_eq!(v, 3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn decimate_recovers_upsampled_ramp() {
        let mut img = ImageTensor::zeros(16, 16, 1).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                img.set(0, y, x, 0.2 + 0.03 * y as f64 + 0.01 * x as f64);
            }
        }
        let up = upsample_poly(&img, 4).unwrap();
        let back = decimate(&up, 4, 0).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn decimate_offset_oracle() {
        let img = tensor_from(4, 4, &(0..16).map(|v| v as f64).collect::<Vec<_>>());
        let out = decimate(&img, 4, 2).unwrap();
        assert_eq!((out.height(), out.width()), (1, 1));
        assert_relative_eq!(out.get(0, 0, 0), 10.0, epsilon = 0.0);
    }

    #[test]
    fn decimate_rejects_bad_offset_and_ratio() {
        let img = ImageTensor::zeros(8, 8, 1).unwrap();
        assert!(matches!(decimate(&img, 4, 4), Err(Error::Config(_))));
        assert!(matches!(decimate(&img, 3, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn mode3_identity_rows_copy_bands() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_tensor(&mut rng, 4, 5, 3);
        // [I | 0] against the bands plus one extra zero-weighted band.
        let mut extended_data = img.data().to_vec();
        extended_data.extend(std::iter::repeat(0.5).take(20));
        let extended = ImageTensor::new(4, 5, 4, extended_data, 0.0, 1.0).unwrap();
        let coeffs: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let out = mode3_multiply(&extended, &coeffs).unwrap();
        assert!(out.same_samples(&img));
    }

    #[test]
    fn mode3_single_band_difference() {
        let mut data = vec![0.0; 12];
        data[..6].copy_from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        data[6..].copy_from_slice(&[0.6, 0.5, 0.4, 0.3, 0.2, 0.1]);
        let img = ImageTensor::new(2, 3, 2, data, 0.0, 1.0).unwrap();
        let out = mode3_multiply(&img, &[vec![-1.0, 1.0]]).unwrap();
        for y in 0..2 {
            for x in 0..3 {
                let want = img.get(1, y, x) - img.get(0, y, x);
                assert_relative_eq!(out.get(0, y, x), want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn kernel_validation() {
        assert!(matches!(KernelSpec::new(4, vec![0.0; 16]), Err(Error::Config(_))));
        assert!(matches!(KernelSpec::new(3, vec![0.0; 8]), Err(Error::Dimension(_))));
        assert!(matches!(KernelSpec::new(3, vec![f64::NAN; 9]), Err(Error::Config(_))));
        let img = ImageTensor::zeros(4, 4, 1).unwrap();
        let kernel = KernelSpec::new(5, vec![0.04; 25]).unwrap();
        assert!(matches!(conv2d_same(&img, &kernel), Err(Error::Dimension(_))));
    }

    #[test]
    fn tensor_validation() {
        assert!(matches!(ImageTensor::new(2, 2, 1, vec![0.0; 3], 0.0, 1.0), Err(Error::Dimension(_))));
        assert!(matches!(
            ImageTensor::new(2, 2, 1, vec![f64::INFINITY; 4], 0.0, 1.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(ImageTensor::new(2, 2, 1, vec![0.0; 4], 1.0, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn reflect_index_examples() {
        assert_eq!(reflect_index(-1, 3), 0);
        assert_eq!(reflect_index(-2, 3), 1);
        assert_eq!(reflect_index(3, 3), 2);
        assert_eq!(reflect_index(4, 3), 1);
        assert_eq!(reflect_index(0, 1), 0);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn separable_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let img = random_tensor(&mut rng, 10, 12, 2);
        let factor: Vec<f64> = vec![0.1, 0.2, 0.4, 0.2, 0.1];
        let sep = KernelSpec::separable(&factor).unwrap();
        let dense = KernelSpec::new(5, sep.weights().to_vec()).unwrap();
        let a = conv2d_same(&img, &sep).unwrap();
        let b = conv2d_same(&img, &dense).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn conv_is_linear(seed in 0u64..1000, alpha in -2.0f64..2.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_tensor(&mut rng, 8, 8, 1);
                let y = random_tensor(&mut rng, 8, 8, 1);
                let kernel = KernelSpec::separable(&[0.25, 0.5, 0.25]).unwrap();
                let combo_data: Vec<f64> =
                    x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + b).collect();
                let combo = x.like_with_data(combo_data).unwrap();
                let lhs = conv2d_same(&combo, &kernel).unwrap();
                let cx = conv2d_same(&x, &kernel).unwrap();
                let cy = conv2d_same(&y, &kernel).unwrap();
                for ((l, a), b) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
                    prop_assert!((l - (alpha * a + b)).abs() < 1e-9);
                }
            }

            #[test]
            fn upsample_then_decimate_is_identity(seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_tensor(&mut rng, 6, 5, 2);
                let up = upsample_poly(&x, 2).unwrap();
                let back = decimate(&up, 2, 0).unwrap();
                prop_assert!(back.same_samples(&x));
            }
        }
    }
}
