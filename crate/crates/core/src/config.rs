//! Adaptation run configuration with layered defaults.
//!
//! Effective settings are resolved from ordered overlays — built-in defaults,
//! then a config file, then command-line flags — with later layers winning.
//! The resolved [`AdaptationConfig`] is echoed verbatim into the run manifest
//! so no effective value stays implicit.

use crate::error::{Error, Result};
use crate::net::Variant;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Default learning rate for the per-instance optimizer.
pub const DEFAULT_LR: f64 = 1.8e-3;
/// Default epoch count when the guidance model matches the sensor.
pub const DEFAULT_EPOCHS: usize = 80;
/// Default epoch count under cross-sensor guidance.
pub const DEFAULT_EPOCHS_CROSS: usize = 350;
/// Default fine-tuning epochs when warm-starting from saved parameters.
pub const DEFAULT_EPOCHS_WARM: usize = 30;
/// Default fine-tuning epochs when warm-starting under cross-sensor guidance.
pub const DEFAULT_EPOCHS_WARM_CROSS: usize = 100;
/// Default pseudo-reference loss weight.
pub const DEFAULT_LAMBDA_PR: f64 = 1.0;
/// Default spectral-consistency loss weight.
pub const DEFAULT_LAMBDA_SPE: f64 = 0.5;
/// Default physical-consistency loss weight.
pub const DEFAULT_LAMBDA_PHY: f64 = 10.0;
/// Default coefficient-estimation patch side, in panchromatic pixels.
pub const DEFAULT_PATCH: usize = 64;
/// Default RNG seed.
pub const DEFAULT_SEED: u64 = 0;

/// How squared-error losses are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// Divide by the element count, so loss weights transfer across sizes.
    Mean,
    /// Raw squared sums.
    Sum,
}

/// Fully resolved training settings for one adaptation run.
#[derive(Debug, Clone, Serialize)]
pub struct AdaptationConfig {
    pub lr: f64,
    pub epochs: usize,
    pub lambda_pr: f64,
    pub lambda_spe: f64,
    pub lambda_phy: f64,
    pub seed: u64,
    pub warm_start: Option<PathBuf>,
    pub variant: Variant,
    pub loss_norm: LossNorm,
    /// Coefficient-estimation patch side at panchromatic scale.
    pub patch: usize,
    /// Sampling phase used when decimating blurred images.
    pub decimation_offset: usize,
    /// Whether the guidance model was trained on a different sensor.
    pub cross_sensor: bool,
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        for (name, v) in [
            ("lambda_pr", self.lambda_pr),
            ("lambda_spe", self.lambda_spe),
            ("lambda_phy", self.lambda_phy),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.patch == 0 {
            return Err(Error::Config("patch must be positive".into()));
        }
        Ok(())
    }
}

/// One layer of optional settings; unset fields defer to lower layers.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverlay {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub lambda_pr: Option<f64>,
    pub lambda_spe: Option<f64>,
    pub lambda_phy: Option<f64>,
    pub seed: Option<u64>,
    pub warm_start: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub loss_norm: Option<LossNorm>,
    pub patch: Option<usize>,
    pub decimation_offset: Option<usize>,
    pub cross_sensor: Option<bool>,
}

impl ConfigOverlay {
    /// Reads an overlay from a JSON config file; unknown keys are rejected.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))
    }

    fn fold(&mut self, higher: &ConfigOverlay) {
        macro_rules! take {
            ($field:ident) => {
                if higher.$field.is_some() {
                    self.$field = higher.$field.clone();
                }
            };
        }
        take!(lr);
        take!(epochs);
        take!(lambda_pr);
        take!(lambda_spe);
        take!(lambda_phy);
        take!(seed);
        take!(warm_start);
        take!(variant);
        take!(loss_norm);
        take!(patch);
        take!(decimation_offset);
        take!(cross_sensor);
    }
}

/// Resolves overlays (lowest precedence first) into a concrete config.
///
/// The epoch default depends on the resolved mode: 80 normally, 350 under
/// `cross_sensor`, and 30 / 100 respectively when warm-starting; an explicit
/// `epochs` in any overlay overrides the schedule.
pub fn resolve(overlays: &[&ConfigOverlay]) -> Result<AdaptationConfig> {
    let mut merged = ConfigOverlay::default();
    for layer in overlays {
        merged.fold(layer);
    }
    let cross = merged.cross_sensor.unwrap_or(false);
    let warm = merged.warm_start.is_some();
    let default_epochs = match (warm, cross) {
        (false, false) => DEFAULT_EPOCHS,
        (false, true) => DEFAULT_EPOCHS_CROSS,
        (true, false) => DEFAULT_EPOCHS_WARM,
        (true, true) => DEFAULT_EPOCHS_WARM_CROSS,
    };
    let cfg = AdaptationConfig {
        lr: merged.lr.unwrap_or(DEFAULT_LR),
        epochs: merged.epochs.unwrap_or(default_epochs),
        lambda_pr: merged.lambda_pr.unwrap_or(DEFAULT_LAMBDA_PR),
        lambda_spe: merged.lambda_spe.unwrap_or(DEFAULT_LAMBDA_SPE),
        lambda_phy: merged.lambda_phy.unwrap_or(DEFAULT_LAMBDA_PHY),
        seed: merged.seed.unwrap_or(DEFAULT_SEED),
        warm_start: merged.warm_start,
        variant: merged.variant.unwrap_or(Variant::Standard),
        loss_norm: merged.loss_norm.unwrap_or(LossNorm::Mean),
        patch: merged.patch.unwrap_or(DEFAULT_PATCH),
        decimation_offset: merged.decimation_offset.unwrap_or(0),
        cross_sensor: cross,
    };
    cfg.validate()?;
    Ok(cfg)
}
