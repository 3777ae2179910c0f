use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub total_steps: usize,
    #[serde(default)]
    pub warmup_steps: usize,
}

impl ScheduleSpec {
    /// Learning rate at `step`, for `0 <= step <= total_steps`.
    ///
    /// During warmup the rate ramps linearly from 0; afterwards the decay
    /// runs over the remaining steps.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::input(format!(
                "step {step} beyond schedule length {}",
                self.total_steps
            )));
        }
        if step < self.warmup_steps {
            return Ok(self.base_lr * step as f64 / self.warmup_steps as f64);
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return Ok(self.base_lr);
        }
        let frac = (step - self.warmup_steps) as f64 / span as f64;
        let lr = match self.kind {
            ScheduleKind::Constant => self.base_lr,
            ScheduleKind::Linear => self.base_lr * (1.0 - frac),
            ScheduleKind::Cosine => self.base_lr * 0.5 * (1.0 + (PI * frac).cos()),
        };
        Ok(lr.max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ScheduleKind, base: f64, total: usize) -> ScheduleSpec {
        ScheduleSpec {
            kind,
            base_lr: base,
            total_steps: total,
            warmup_steps: 0,
        }
    }

    #[test]
    fn linear_starts_at_base() {
        assert_eq!(spec(ScheduleKind::Linear, 2e-5, 100).lr_at(0).unwrap(), 2e-5);
        assert_eq!(spec(ScheduleKind::Linear, 2e-5, 100).lr_at(100).unwrap(), 0.0);
    }

    #[test]
    fn cosine_endpoints() {
        let s = spec(ScheduleKind::Cosine, 1e-6, 100);
        assert_eq!(s.lr_at(0).unwrap(), 1e-6);
        assert_eq!(s.lr_at(100).unwrap(), 0.0);
        assert!((s.lr_at(50).unwrap() - 5e-7).abs() < 1e-21);
    }

    #[test]
    fn constant_and_bounds() {
        let s = spec(ScheduleKind::Constant, 0.3, 10);
        assert!((0..=10).all(|k| s.lr_at(k).unwrap() == 0.3));
        assert!(s.lr_at(11).is_err());
    }

    #[test]
    fn warmup_ramps_then_decays() {
        let s = ScheduleSpec {
            kind: ScheduleKind::Linear,
            base_lr: 1.0,
            total_steps: 10,
            warmup_steps: 4,
        };
        assert_eq!(s.lr_at(0).unwrap(), 0.0);
        assert_eq!(s.lr_at(2).unwrap(), 0.5);
        assert_eq!(s.lr_at(4).unwrap(), 1.0);
        assert_eq!(s.lr_at(7).unwrap(), 0.5);
    }

    #[test]
    fn never_negative() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine, ScheduleKind::Constant] {
            let s = spec(kind, 0.1, 37);
            assert!((0..=37).all(|k| s.lr_at(k).unwrap() >= 0.0));
        }
    }
}
