use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warm-up to `base_lr`, then cosine annealing to zero at
/// `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: u64,
    pub warmup_fraction: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: u64, warmup_fraction: f64) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::contract(format!("base learning rate {base_lr}")));
        }
        if !(warmup_fraction > 0.0 && warmup_fraction < 1.0) {
            return Err(Error::contract(format!("warm-up fraction {warmup_fraction}")));
        }
        Ok(Self {
            base_lr,
            total_steps,
            warmup_fraction,
        })
    }

    /// `⌈warmup_fraction · total_steps⌉`, kept below `total_steps` so the
    /// cosine phase is never empty.
    pub fn warmup_steps(&self) -> u64 {
        let w = (self.warmup_fraction * self.total_steps as f64).ceil() as u64;
        w.min(self.total_steps.saturating_sub(1))
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::contract(format!(
                "step {step} beyond schedule length {}",
                self.total_steps
            )));
        }
        let warm = self.warmup_steps();
        if step < warm {
            return Ok(self.base_lr * step as f64 / warm as f64);
        }
        let span = (self.total_steps - warm) as f64;
        if span == 0.0 {
            return Ok(0.0);
        }
        let progress = (step - warm) as f64 / span;
        Ok(0.5 * self.base_lr * (1.0 + (PI * progress).cos()))
    }
}
