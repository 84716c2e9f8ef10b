use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precomputed noise schedule. Arrays are indexed by `t` in `0..=T`; entry
/// 0 holds the convention `alpha_bar[0] = 1` (and `beta[0] = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    steps: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// Posterior variance `(1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t`.
    pub sigma2: Vec<f64>,
}

/// Serializable schedule parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    /// 50 steps, with the 1000-step range 1e-4..0.02 scaled by 1000/50.
    fn default() -> Self {
        Self {
            steps: 50,
            beta_start: 0.002,
            beta_end: 0.4,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }

    /// Same per-trajectory noise budget with a different step count:
    /// both β endpoints are scaled by `steps / new_steps`.
    pub fn with_steps(&self, new_steps: usize) -> Result<Self> {
        if new_steps == 0 {
            return Err(Error::Config("step count must be at least 1".into()));
        }
        let f = self.steps as f64 / new_steps as f64;
        let out = Self {
            steps: new_steps,
            beta_start: self.beta_start * f,
            beta_end: self.beta_end * f,
        };
        out.build()?;
        Ok(out)
    }
}

/// Linear β from `beta_start` at `t = 1` to `beta_end` at `t = T`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(Error::Config("diffusion needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let mut beta = vec![0.0; steps + 1];
    for (t, b) in beta.iter_mut().enumerate().skip(1) {
        *b = if steps == 1 {
            beta_start
        } else {
            beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64
        };
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = vec![1.0; steps + 1];
    for t in 1..=steps {
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
    }
    let mut sigma2 = vec![0.0; steps + 1];
    for t in 1..=steps {
        sigma2[t] = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
    }
    Ok(DiffusionSchedule {
        steps,
        beta,
        alpha,
        alpha_bar,
        sigma2,
    })
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.steps
            )));
        }
        Ok(())
    }
}
