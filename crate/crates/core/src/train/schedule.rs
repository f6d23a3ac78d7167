use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate at the start of warmup.
pub const WARMUP_START: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Decay {
    Constant,
    /// Divide by `factor` at each milestone (absolute iteration index).
    StepDecay { milestones: Vec<u64>, factor: f64 },
    /// Half-cosine from the base rate at the end of warmup to 0 at `total_iters`.
    Cosine { total_iters: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    /// Linear warmup from 1e-6 to `base_lr`; 0 disables it.
    #[serde(default)]
    pub warmup_iters: u64,
    pub decay: Decay,
}

impl LrSchedule {
    pub fn constant(base_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            warmup_iters: 0,
            decay: Decay::Constant,
        }
    }

    pub fn step_decay(base_lr: f64, milestones: &[u64], factor: f64) -> Self {
        LrSchedule {
            base_lr,
            warmup_iters: 0,
            decay: Decay::StepDecay {
                milestones: milestones.to_vec(),
                factor,
            },
        }
    }

    pub fn cosine(base_lr: f64, total_iters: u64) -> Self {
        LrSchedule {
            base_lr,
            warmup_iters: 0,
            decay: Decay::Cosine { total_iters },
        }
    }

    pub fn with_warmup(mut self, iters: u64) -> Self {
        self.warmup_iters = iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0) || !self.base_lr.is_finite() {
            return Err(Error::InvalidArgument(format!("base_lr must be finite and ≥ 0, got {}", self.base_lr)));
        }
        match &self.decay {
            Decay::StepDecay { milestones, factor } => {
                if !(*factor > 0.0) {
                    return Err(Error::InvalidArgument("step decay factor must be positive".into()));
                }
                if milestones.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::InvalidArgument("milestones must be sorted".into()));
                }
            }
            Decay::Cosine { total_iters } if *total_iters <= self.warmup_iters => {
                return Err(Error::InvalidArgument("cosine total_iters must exceed warmup".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn lr_at(schedule: &LrSchedule, iteration: u64) -> f64 {
    let base = schedule.base_lr;
    let warm = schedule.warmup_iters;
    if iteration < warm {
        return WARMUP_START + (base - WARMUP_START) * iteration as f64 / warm as f64;
    }
    match &schedule.decay {
        Decay::Constant => base,
        Decay::StepDecay { milestones, factor } => {
            let passed = milestones.iter().filter(|&&m| iteration >= m).count();
            base / factor.powi(passed as i32)
        }
        Decay::Cosine { total_iters } => {
            let t = (iteration - warm) as f64;
            let span = (total_iters - warm) as f64;
            if t >= span {
                0.0
            } else {
                0.5 * base * (1.0 + (PI * t / span).cos())
            }
        }
    }
}
