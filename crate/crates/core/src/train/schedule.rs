use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Learning-rate and temperature schedules, evaluated per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub tau_anneal_epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ScheduleConfig {
    /// 500 epochs, 120 warm-up, τ from 30 to 1 over 30 epochs.
    pub fn long() -> Self {
        ScheduleConfig {
            lr_max: 1e-3,
            lr_min: 5e-6,
            warmup_epochs: 120,
            total_epochs: 500,
            tau_start: 30.0,
            tau_end: 1.0,
            tau_anneal_epochs: 30,
        }
    }

    /// The same shapes over 60 epochs with 10 warm-up and a 6-epoch anneal.
    pub fn desk() -> Self {
        ScheduleConfig { warmup_epochs: 10, total_epochs: 60, tau_anneal_epochs: 6, ..Self::long() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return Err(Error::config("learning rates need 0 <= lr_min <= lr_max < inf"));
        }
        if self.total_epochs == 0 || self.warmup_epochs >= self.total_epochs {
            return Err(Error::config("need total_epochs > warmup_epochs"));
        }
        if !(self.tau_end > 0.0 && self.tau_start > 0.0 && self.tau_start.is_finite()) {
            return Err(Error::config("temperatures must be positive"));
        }
        Ok(())
    }
}

/// Linear warm-up from `lr_min` to `lr_max`, then a half cosine back down.
pub fn cosine_lr(epoch: usize, cfg: &ScheduleConfig) -> f64 {
    let (hi, lo) = (cfg.lr_max, cfg.lr_min);
    if epoch < cfg.warmup_epochs {
        return lo + (hi - lo) * epoch as f64 / cfg.warmup_epochs as f64;
    }
    let t = (epoch - cfg.warmup_epochs) as f64 / (cfg.total_epochs - cfg.warmup_epochs) as f64;
    // cos(πt) as sin(π(½ − t)) is exactly 0 at the midpoint and 1 at t = 0
    let c = (std::f64::consts::PI * (0.5 - t)).sin();
    0.5 * (hi + lo) + 0.5 * (hi - lo) * c
}

/// Linear from `tau_start` to `tau_end` over the anneal, then constant.
pub fn tau_schedule(epoch: usize, cfg: &ScheduleConfig) -> f64 {
    if epoch >= cfg.tau_anneal_epochs {
        return cfg.tau_end;
    }
    cfg.tau_start + (cfg.tau_end - cfg.tau_start) * epoch as f64 / cfg.tau_anneal_epochs as f64
}
