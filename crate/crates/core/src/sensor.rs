//! Sensor degradation model: per-band Gaussian blur matched to a modulation
//! gain at the reduced-grid Nyquist frequency, followed by decimation.
//!
//! Each band's blur kernel is a plain truncated Gaussian whose standard
//! deviation is chosen so the continuous frequency response equals the
//! sensor's gain at the Nyquist frequency of the low-resolution grid:
//! `sigma = (ratio / pi) * sqrt(2 ln(1 / gain))` in high-resolution samples.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{adjoint_conv2d, conv2d_same, decimate, ImageTensor, KernelSpec};

/// Default tap count for degradation kernels.
pub const DEFAULT_KERNEL_TAPS: usize = 41;

fn default_taps() -> usize {
    DEFAULT_KERNEL_TAPS
}

/// A sensor's resolution ratio and modulation gains.
///
/// Presets ship as editable JSON; `ms_gains` holds one Nyquist gain per
/// multispectral band and `pan_gain` the panchromatic gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub name: String,
    pub ratio: usize,
    pub ms_gains: Vec<f64>,
    pub pan_gain: f64,
    #[serde(default = "default_taps")]
    pub kernel_taps: usize,
}

const BUILTIN_PRESETS: &[(&str, &str)] = &[
    ("wv3", include_str!("../presets/wv3.json")),
    ("wv2", include_str!("../presets/wv2.json")),
    ("gf2", include_str!("../presets/gf2.json")),
    ("qb", include_str!("../presets/qb.json")),
];

impl SensorSpec {
    /// Returns a built-in preset by name.
    pub fn preset(name: &str) -> Result<SensorSpec> {
        let lowered = name.to_ascii_lowercase();
        for (key, text) in BUILTIN_PRESETS {
            if *key == lowered {
                let spec: SensorSpec = serde_json::from_str(text)
                    .map_err(|e| Error::Format(format!("preset {key}: {e}")))?;
                spec.validate()?;
                return Ok(spec);
            }
        }
        Err(Error::Config(format!(
            "unknown sensor preset '{name}' (built-in: {})",
            BUILTIN_PRESETS.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
        )))
    }

    /// Names of the built-in presets.
    pub fn builtin_names() -> Vec<&'static str> {
        BUILTIN_PRESETS.iter().map(|(k, _)| *k).collect()
    }

    /// Reads a preset from a JSON file.
    pub fn from_json_file(path: &Path) -> Result<SensorSpec> {
        let text = std::fs::read_to_string(path)?;
        let spec: SensorSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Resolves `arg` as a built-in preset name or, failing that, a file path.
    pub fn resolve(arg: &str) -> Result<SensorSpec> {
        match SensorSpec::preset(arg) {
            Ok(spec) => Ok(spec),
            Err(Error::Config(_)) if Path::new(arg).exists() => {
                SensorSpec::from_json_file(Path::new(arg))
            }
            Err(e) => Err(e),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio == 2 || self.ratio == 4) {
            return Err(Error::Config(format!("sensor ratio must be 2 or 4, got {}", self.ratio)));
        }
        if self.ms_gains.is_empty() {
            return Err(Error::Config("sensor needs at least one band gain".into()));
        }
        for (i, &g) in self.ms_gains.iter().enumerate() {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::Config(format!("band {i} gain {g} outside (0, 1)")));
            }
        }
        if !(self.pan_gain > 0.0 && self.pan_gain < 1.0) {
            return Err(Error::Config(format!("pan gain {} outside (0, 1)", self.pan_gain)));
        }
        if self.kernel_taps < 3 || self.kernel_taps % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel taps must be odd and >= 3, got {}",
                self.kernel_taps
            )));
        }
        Ok(())
    }

    pub fn bands(&self) -> usize {
        self.ms_gains.len()
    }

    /// Blurs a multispectral image with each band's kernel.
    pub fn blur_ms(&self, img: &ImageTensor) -> Result<ImageTensor> {
        if img.bands() != self.ms_gains.len() {
            return Err(Error::Dimension(format!(
                "image has {} bands, sensor '{}' expects {}",
                img.bands(),
                self.name,
                self.ms_gains.len()
            )));
        }
        blur_per_band(img, &self.ms_gains, self.ratio, self.kernel_taps, false)
    }

    /// Adjoint of [`Self::blur_ms`]: correlation with each band's kernel.
    ///
    /// The kernels are symmetric, so away from the borders this coincides
    /// with the forward blur; within a kernel radius of an edge it is the
    /// standard approximation to the reflection-boundary adjoint.
    pub fn adjoint_blur_ms(&self, img: &ImageTensor) -> Result<ImageTensor> {
        if img.bands() != self.ms_gains.len() {
            return Err(Error::Dimension(format!(
                "image has {} bands, sensor '{}' expects {}",
                img.bands(),
                self.name,
                self.ms_gains.len()
            )));
        }
        blur_per_band(img, &self.ms_gains, self.ratio, self.kernel_taps, true)
    }

    /// Blurs an image that already lives on the low-resolution grid with the
    /// decimated equivalent of each band's kernel.
    ///
    /// Decimating a blurred high-resolution image compresses the kernel's
    /// frequency response by the ratio, so on the low-resolution grid the
    /// equivalent Gaussian has `sigma / ratio` in these samples — the band's
    /// Nyquist gain placed at this grid's own Nyquist frequency. Using the
    /// high-resolution sigma here instead would cut `ratio` times deeper and
    /// misattribute mid-frequency content. Tap counts shrink by the ratio
    /// (kept odd, floored at 7, still covering several sigma).
    pub fn blur_ms_lowres(&self, img: &ImageTensor) -> Result<ImageTensor> {
        if img.bands() != self.ms_gains.len() {
            return Err(Error::Dimension(format!(
                "image has {} bands, sensor '{}' expects {}",
                img.bands(),
                self.name,
                self.ms_gains.len()
            )));
        }
        blur_per_band(img, &self.ms_gains, 1, self.lowres_taps(), false)
    }

    /// Tap count for [`Self::blur_ms_lowres`]: `kernel_taps / ratio`, odd,
    /// at least 7.
    pub fn lowres_taps(&self) -> usize {
        let shrunk = self.kernel_taps.div_ceil(self.ratio);
        let odd = if shrunk % 2 == 0 { shrunk + 1 } else { shrunk };
        odd.max(7)
    }

    /// Blurs a single-band panchromatic image with the pan kernel.
    pub fn blur_pan(&self, img: &ImageTensor) -> Result<ImageTensor> {
        if img.bands() != 1 {
            return Err(Error::Dimension(format!(
                "panchromatic image must have one band, got {}",
                img.bands()
            )));
        }
        blur_per_band(img, &[self.pan_gain], self.ratio, self.kernel_taps, false)
    }

    /// Blur + decimate for a multispectral image.
    pub fn degrade_ms(&self, img: &ImageTensor, offset: usize) -> Result<ImageTensor> {
        decimate(&self.blur_ms(img)?, self.ratio, offset)
    }

    /// Blur + decimate for a panchromatic image.
    pub fn degrade_pan(&self, img: &ImageTensor, offset: usize) -> Result<ImageTensor> {
        decimate(&self.blur_pan(img)?, self.ratio, offset)
    }
}

/// Standard deviation (in samples) of the Gaussian whose frequency response
/// equals `gain` at the reduced grid's Nyquist frequency.
pub fn gaussian_sigma(gain: f64, ratio: usize) -> Result<f64> {
    if !(gain > 0.0 && gain < 1.0) {
        return Err(Error::Config(format!("Nyquist gain must lie in (0, 1), got {gain}")));
    }
    if ratio == 0 {
        return Err(Error::Config("ratio must be positive".into()));
    }
    Ok(ratio as f64 / std::f64::consts::PI * (2.0 * (1.0 / gain).ln()).sqrt())
}

/// Separable, unit-sum truncated Gaussian kernel for one band.
pub fn mtf_kernel(gain: f64, ratio: usize, taps: usize) -> Result<KernelSpec> {
    let sigma = gaussian_sigma(gain, ratio)?;
    let c = (taps / 2) as f64;
    let mut factor: Vec<f64> = (0..taps)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = factor.iter().sum();
    for f in &mut factor {
        *f /= sum;
    }
    KernelSpec::separable(&factor)
}

fn blur_per_band(
    img: &ImageTensor,
    gains: &[f64],
    ratio: usize,
    taps: usize,
    adjoint: bool,
) -> Result<ImageTensor> {
    let mut out = img.clone();
    for (b, &g) in gains.iter().enumerate() {
        let kernel = mtf_kernel(g, ratio, taps)?;
        // Convolve one band at a time; bands may carry different kernels.
        let single = img.crop_band(b)?;
        let blurred =
            if adjoint { adjoint_conv2d(&single, &kernel)? } else { conv2d_same(&single, &kernel)? };
        out.band_mut(b).copy_from_slice(blurred.band(0));
    }
    Ok(out)
}

impl ImageTensor {
    /// Single-band view copied out as its own tensor.
    pub fn crop_band(&self, b: usize) -> Result<ImageTensor> {
        if b >= self.bands() {
            return Err(Error::Dimension(format!("band {b} out of range {}", self.bands())));
        }
        self.with_range_of(self.height(), self.width(), 1, self.band(b).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::upsample_poly;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigma_matches_closed_form() {
        let sigma = gaussian_sigma(0.3, 4).unwrap();
        let expected = 4.0 / std::f64::consts::PI * (2.0 * (1.0f64 / 0.3).ln()).sqrt();
        assert_relative_eq!(sigma, expected, epsilon = 1e-15);
        assert!((sigma - 1.9755).abs() < 5e-4, "sigma = {sigma}");
    }

    #[test]
    fn near_unity_gain_gives_near_delta_kernel() {
        let kernel = mtf_kernel(0.999, 4, DEFAULT_KERNEL_TAPS).unwrap();
        let taps = kernel.taps();
        let center = kernel.weights()[(taps / 2) * taps + taps / 2];
        assert!(center > 0.99, "center weight = {center}");
    }

    #[test]
    fn kernel_is_unit_sum_and_symmetric() {
        for &g in &[0.15, 0.3, 0.365] {
            let kernel = mtf_kernel(g, 4, DEFAULT_KERNEL_TAPS).unwrap();
            assert!((kernel.weight_sum() - 1.0).abs() <= 1e-9);
            let taps = kernel.taps();
            let w = kernel.weights();
            for i in 0..w.len() {
                assert_relative_eq!(w[i], w[w.len() - 1 - i], epsilon = 1e-15);
            }
            assert_eq!(taps, DEFAULT_KERNEL_TAPS);
        }
    }

    #[test]
    fn lower_gain_blurs_more() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<f64> = (0..64 * 64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = ImageTensor::new(64, 64, 1, data, 0.0, 1.0).unwrap();
        let variance = |t: &ImageTensor| {
            let m = t.band_mean(0);
            t.band(0).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t.band(0).len() as f64
        };
        let a = blur_per_band(&img, &[0.2], 4, 41, false).unwrap();
        let b = blur_per_band(&img, &[0.4], 4, 41, false).unwrap();
        assert!(variance(&a) <= variance(&b));
        assert!(variance(&b) < variance(&img));
    }

    #[test]
    fn degrade_shape_and_range() {
        let spec = SensorSpec::preset("qb").unwrap();
        let img = ImageTensor::constant(64, 64, 4, 0.5).unwrap();
        let lr = spec.degrade_ms(&img, 0).unwrap();
        assert_eq!((lr.height(), lr.width(), lr.bands()), (16, 16, 4));
        for &v in lr.data() {
            assert_relative_eq!(v, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn degrade_matches_dense_matrix_oracle() {
        // Build the operator matrix column by column from basis images, then
        // check linearity on random input: degrade(x) == sum x_i degrade(e_i).
        let spec = SensorSpec {
            name: "toy".into(),
            ratio: 2,
            ms_gains: vec![0.3],
            pan_gain: 0.15,
            kernel_taps: 5,
        };
        let n = 8usize;
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n * n);
        for i in 0..n * n {
            let mut basis = vec![0.0; n * n];
            basis[i] = 1.0;
            let img = ImageTensor::new(n, n, 1, basis, 0.0, 1.0).unwrap();
            columns.push(spec.degrade_ms(&img, 0).unwrap().data().to_vec());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = ImageTensor::new(n, n, 1, x.clone(), 0.0, 1.0).unwrap();
        let direct = spec.degrade_ms(&img, 0).unwrap();
        let m = direct.data().len();
        let mut predicted = vec![0.0; m];
        for (i, col) in columns.iter().enumerate() {
            for (p, &c) in predicted.iter_mut().zip(col) {
                *p += x[i] * c;
            }
        }
        for (a, b) in direct.data().iter().zip(&predicted) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn degrade_of_upsampled_ramp_commutes_with_lowres_blur() {
        let spec = SensorSpec {
            name: "toy".into(),
            ratio: 4,
            ms_gains: vec![0.3],
            pan_gain: 0.15,
            kernel_taps: 11,
        };
        let n = 24usize;
        let mut data = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                data[y * n + x] = 0.1 + 0.012 * y as f64 + 0.02 * x as f64;
            }
        }
        let y_img = ImageTensor::new(n, n, 1, data, 0.0, 1.0).unwrap();
        let up = upsample_poly(&y_img, 4).unwrap();
        let via_degrade = spec.degrade_ms(&up, 0).unwrap();
        let via_lr_blur = spec.blur_ms(&y_img).unwrap();
        let max_abs = via_degrade
            .data()
            .iter()
            .zip(via_lr_blur.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_abs < 5e-2, "max abs deviation {max_abs}");
    }

    #[test]
    fn lowres_blur_matches_degraded_highres_blur_on_texture() {
        // degrade(upsample(y)) and the decimated-equivalent kernel applied
        // directly to y share the same frequency response, so they must agree
        // on textured content where the high-resolution sigma (four times
        // wider on this grid) lands far away.
        let spec = SensorSpec {
            name: "toy".into(),
            ratio: 4,
            ms_gains: vec![0.3],
            pan_gain: 0.15,
            kernel_taps: 41,
        };
        assert_eq!(spec.lowres_taps(), 11);
        let n = 48usize;
        let mut data = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                data[y * n + x] = 0.5
                    + 0.2 * (0.9 * y as f64).sin() * (0.7 * x as f64).cos()
                    + 0.1 * (0.45 * (x + y) as f64).sin();
            }
        }
        let y_img = ImageTensor::new(n, n, 1, data, 0.0, 1.0).unwrap();
        let oracle = spec.degrade_ms(&upsample_poly(&y_img, 4).unwrap(), 0).unwrap();
        let via_lowres = spec.blur_ms_lowres(&y_img).unwrap();
        let via_highres_sigma = spec.blur_ms(&y_img).unwrap();
        let max_gap = |a: &ImageTensor, b: &ImageTensor| {
            let m = 8; // skip borders where the upsampling oracle differs
            let mut worst = 0.0f64;
            for yy in m..n - m {
                for xx in m..n - m {
                    worst = worst.max((a.get(0, yy, xx) - b.get(0, yy, xx)).abs());
                }
            }
            worst
        };
        let gap_lowres = max_gap(&oracle, &via_lowres);
        let gap_highres = max_gap(&oracle, &via_highres_sigma);
        assert!(gap_lowres < 0.02, "decimated-equivalent gap {gap_lowres}");
        assert!(gap_lowres < 0.2 * gap_highres, "{gap_lowres} vs {gap_highres}");
    }

    #[test]
    fn builtin_presets_are_consistent() {
        for name in SensorSpec::builtin_names() {
            let spec = SensorSpec::preset(name).unwrap();
            assert_eq!(spec.ratio, 4);
            assert_relative_eq!(spec.pan_gain, 0.15);
            assert_eq!(spec.kernel_taps, 41);
        }
        assert_eq!(SensorSpec::preset("wv3").unwrap().bands(), 8);
        assert_eq!(SensorSpec::preset("wv2").unwrap().bands(), 8);
        assert_eq!(SensorSpec::preset("gf2").unwrap().bands(), 4);
        assert_eq!(SensorSpec::preset("qb").unwrap().bands(), 4);
        assert_relative_eq!(SensorSpec::preset("WV3").unwrap().ms_gains[0], 0.325);
        assert!(matches!(SensorSpec::preset("spot"), Err(Error::Config(_))));
    }

    #[test]
    fn preset_file_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("custom.json");
        std::fs::write(
            &path,
            r#"{"name":"custom","ratio":4,"ms_gains":[0.3,0.31],"pan_gain":0.2}"#,
        )
        .unwrap();
        let spec = SensorSpec::from_json_file(&path).unwrap();
        assert_eq!(spec.kernel_taps, DEFAULT_KERNEL_TAPS);
        assert_eq!(spec.bands(), 2);

        std::fs::write(&path, r#"{"name":"bad","ratio":3,"ms_gains":[0.3],"pan_gain":0.2}"#)
            .unwrap();
        assert!(matches!(SensorSpec::from_json_file(&path), Err(Error::Config(_))));
        std::fs::write(&path, "junk").unwrap();
        assert!(matches!(SensorSpec::from_json_file(&path), Err(Error::Format(_))));
    }

    #[test]
    fn band_count_mismatch_is_dimension_error() {
        let spec = SensorSpec::preset("qb").unwrap();
        let img = ImageTensor::constant(64, 64, 3, 0.5).unwrap();
        assert!(matches!(spec.blur_ms(&img), Err(Error::Dimension(_))));
        assert!(matches!(spec.blur_pan(&img), Err(Error::Dimension(_))));
    }
}
