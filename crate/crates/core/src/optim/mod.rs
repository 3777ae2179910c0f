//! First-order optimization: Adam, learning-rate schedules, and the
//! supervised fine-tuning loop.

mod adam;
mod schedule;
mod sft;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use schedule::{ScheduleKind, ScheduleSpec};
pub use sft::{sft_loss, train_sft, SftDataset, SftOutput, SftRecord};

use crate::error::{Error, Result};

/// A flat view over a parameter record, so one optimizer serves every model.
pub trait Parameters: Clone {
    fn values(&self) -> &[f64];
    fn values_mut(&mut self) -> &mut [f64];
    fn zeros_like(&self) -> Self;
}

/// Shared knobs of the minibatch training loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: ScheduleKind,
    pub warmup_steps: usize,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 16,
            lr: 1e-2,
            schedule: ScheduleKind::Linear,
            warmup_steps: 0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub(crate) fn schedule_for(&self, n: usize) -> ScheduleSpec {
        ScheduleSpec {
            kind: self.schedule,
            base_lr: self.lr,
            total_steps: self.epochs * self.steps_per_epoch(n),
            warmup_steps: self.warmup_steps,
        }
    }

    pub(crate) fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// One optimizer step, as written to metrics JSONL.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Per-epoch shuffled minibatches of `0..n`.
pub(crate) fn epoch_batches(
    n: usize,
    batch_size: usize,
    epoch: usize,
    stream: &crate::RngStream,
) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream.child(epoch as u64).rng());
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
