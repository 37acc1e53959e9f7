//! The three fidelity losses and their analytic gradients.
//!
//! Training pulls the fused estimate `X*` toward three targets at once: the
//! pseudo-reference image produced by the guidance model, the observed
//! low-resolution bands after re-degradation, and the physically synthesized
//! detail layer. Each component reports its value together with the exact
//! gradient with respect to `X*`; the weighted total is what the optimizer
//! consumes.
//!
//! Values are mean-square normalized by default so the loss weights transfer
//! across image sizes; raw squared sums are available via
//! [`LossNorm::Sum`]. Gradients of the blur-based components use the
//! correlation adjoint, which the symmetric kernels make exact away from the
//! image borders.

use crate::config::{AdaptationConfig, LossNorm};
use crate::error::{Error, Result};
use crate::sensor::SensorSpec;
use crate::tensor::ImageTensor;

/// All loss components of one epoch plus the gradient fed to the network.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub l_pr: f64,
    pub l_spe: f64,
    pub l_phy: f64,
    pub l_total: f64,
    pub grad_x_star: ImageTensor,
}

fn check_same_shape(a: &ImageTensor, b: &ImageTensor, what: &str) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() || a.bands() != b.bands() {
        return Err(Error::Dimension(format!(
            "{what}: {}x{}x{} vs {}x{}x{}",
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

fn divisor(norm: LossNorm, n: usize) -> f64 {
    match norm {
        LossNorm::Mean => n as f64,
        LossNorm::Sum => 1.0,
    }
}

/// Squared distance to the pseudo-reference image.
pub fn loss_pr(
    x_star: &ImageTensor,
    x_ref: &ImageTensor,
    norm: LossNorm,
) -> Result<(f64, ImageTensor)> {
    check_same_shape(x_star, x_ref, "fused and reference shapes differ")?;
    let n = divisor(norm, x_star.data().len());
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(x_star.data().len());
    for (a, b) in x_star.data().iter().zip(x_ref.data()) {
        let d = a - b;
        value += d * d;
        grad.push(2.0 * d / n);
    }
    Ok((value / n, x_star.like_with_data(grad)?))
}

/// Spectral consistency: the fused image must re-degrade to the observed
/// low-resolution bands.
///
/// The gradient is the adjoint chain of blur-then-decimate: the residual is
/// zero-inserted back onto the fine grid and pushed through each band's
/// kernel adjoint, scaled by `−2/N`.
pub fn loss_spe(
    x_star: &ImageTensor,
    y: &ImageTensor,
    spec: &SensorSpec,
    offset: usize,
    norm: LossNorm,
) -> Result<(f64, ImageTensor)> {
    let r = spec.ratio;
    if x_star.height() != y.height() * r || x_star.width() != y.width() * r {
        return Err(Error::Dimension(format!(
            "fused {}x{} is not {r}x the low-resolution {}x{}",
            x_star.height(),
            x_star.width(),
            y.height(),
            y.width()
        )));
    }
    if x_star.bands() != y.bands() {
        return Err(Error::Dimension("band counts differ".into()));
    }
    let degraded = spec.degrade_ms(x_star, offset)?;
    let n = divisor(norm, y.data().len());
    let mut value = 0.0;
    let mut residual = Vec::with_capacity(y.data().len());
    for (obs, deg) in y.data().iter().zip(degraded.data()) {
        let s = obs - deg;
        value += s * s;
        residual.push(s);
    }

    // Zero-insertion upsample of the residual onto the fine grid.
    let mut up = vec![0.0; x_star.data().len()];
    let (hw, ww) = (x_star.height(), x_star.width());
    for b in 0..y.bands() {
        for ly in 0..y.height() {
            for lx in 0..y.width() {
                let v = residual[(b * y.height() + ly) * y.width() + lx];
                up[(b * hw + offset + ly * r) * ww + offset + lx * r] = v;
            }
        }
    }
    let up = x_star.like_with_data(up)?;
    let mut grad = spec.adjoint_blur_ms(&up)?;
    for g in grad.data_mut() {
        *g *= -2.0 / n;
    }
    Ok((value / n, grad))
}

/// Physical consistency: the high-pass of the fused image must match the
/// synthesized detail layer.
pub fn loss_phy(
    x_star: &ImageTensor,
    detail: &ImageTensor,
    spec: &SensorSpec,
    norm: LossNorm,
) -> Result<(f64, ImageTensor)> {
    check_same_shape(x_star, detail, "fused and detail shapes differ")?;
    let blurred = spec.blur_ms(x_star)?;
    let n = divisor(norm, x_star.data().len());
    let mut value = 0.0;
    let mut t = Vec::with_capacity(x_star.data().len());
    for ((x, bx), d) in x_star.data().iter().zip(blurred.data()).zip(detail.data()) {
        let res = x - bx - d;
        value += res * res;
        t.push(res);
    }
    let t = x_star.like_with_data(t)?;
    let bt = spec.adjoint_blur_ms(&t)?;
    let grad: Vec<f64> =
        t.data().iter().zip(bt.data()).map(|(a, b)| 2.0 * (a - b) / n).collect();
    Ok((value / n, x_star.like_with_data(grad)?))
}

/// Combines component values with the configured weights.
pub fn weighted_total(cfg: &AdaptationConfig, l_pr: f64, l_spe: f64, l_phy: f64) -> f64 {
    cfg.lambda_pr * l_pr + cfg.lambda_spe * l_spe + cfg.lambda_phy * l_phy
}

/// Evaluates all three components and their weighted sum.
pub fn total_loss(
    x_star: &ImageTensor,
    x_ref: &ImageTensor,
    y: &ImageTensor,
    detail: &ImageTensor,
    spec: &SensorSpec,
    cfg: &AdaptationConfig,
) -> Result<LossBreakdown> {
    let (l_pr, g_pr) = loss_pr(x_star, x_ref, cfg.loss_norm)?;
    let (l_spe, g_spe) = loss_spe(x_star, y, spec, cfg.decimation_offset, cfg.loss_norm)?;
    let (l_phy, g_phy) = loss_phy(x_star, detail, spec, cfg.loss_norm)?;
    let mut grad = Vec::with_capacity(x_star.data().len());
    for ((a, b), c) in g_pr.data().iter().zip(g_spe.data()).zip(g_phy.data()) {
        grad.push(cfg.lambda_pr * a + cfg.lambda_spe * b + cfg.lambda_phy * c);
    }
    Ok(LossBreakdown {
        l_pr,
        l_spe,
        l_phy,
        l_total: weighted_total(cfg, l_pr, l_spe, l_phy),
        grad_x_star: x_star.like_with_data(grad)?,
    })
}
