//! JSON run configuration. Every key is optional; unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocks::WfiConfig;
use crate::diffusion::{DenoiserConfig, ScheduleConfig};
use crate::error::{Error, Result};
use crate::losses::{NoiseNorm, Stage1Weights};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub wfi: WfiConfig,
    pub denoiser: DenoiserConfig,
    pub diffusion: ScheduleConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub stage1_steps: usize,
    pub stage1_lr: f64,
    pub loss_weights: Stage1Weights,
    /// Stage 1 stops once the loss falls below this fraction of the
    /// initial loss (when `early_stop` is set).
    pub stage1_target: f64,
    pub stage2_steps: usize,
    pub stage2_lr: f64,
    pub noise_norm: NoiseNorm,
    /// Stage 2 compares trailing and initial moving averages of this many
    /// steps.
    pub window: usize,
    pub stage2_target: f64,
    pub early_stop: bool,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stage1_steps: 2000,
            stage1_lr: 1e-3,
            loss_weights: Stage1Weights::default(),
            stage1_target: 0.2,
            stage2_steps: 2000,
            stage2_lr: 2e-3,
            noise_norm: NoiseNorm::L1,
            window: 50,
            stage2_target: 0.5,
            early_stop: true,
            clip_norm: 1.0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.wfi.validate()?;
        self.denoiser.validate()?;
        self.diffusion.build()?;
        let t = &self.train;
        let positive = [
            ("stage1_lr", t.stage1_lr),
            ("stage2_lr", t.stage2_lr),
            ("stage1_target", t.stage1_target),
            ("stage2_target", t.stage2_target),
            ("clip_norm", t.clip_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("train.{name} must be positive, got {v}")));
            }
        }
        let w = t.loss_weights;
        if !(w.high >= 0.0 && w.amplitude >= 0.0 && w.high + w.amplitude > 0.0) {
            return Err(Error::Config("loss weights must be nonnegative and not both zero".into()));
        }
        if t.window == 0 {
            return Err(Error::Config("train.window must be positive".into()));
        }
        Ok(())
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    RunConfig::from_json(&text)
}
