//! Supervised fine-tuning: maximize `Σ log π(y | x)` over demonstration pairs.
//! Only response tokens carry loss; the prompt is context.

use serde::{Deserialize, Serialize};

use super::{adam_step, epoch_batches, AdamState, Parameters, StepMetrics, TrainConfig};
use crate::error::{Error, Result};
use crate::toylm::{Prompt, Response, RngStream, ToyLMParams, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: Prompt,
    pub response: Response,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SftDataset {
    records: Vec<SftRecord>,
}

impl SftDataset {
    pub fn new(records: Vec<SftRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::input("SFT dataset is empty"));
        }
        Ok(Self { records })
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            r.prompt
                .validate(vocab)
                .and_then(|_| r.response.validate(vocab))
                .map_err(|e| Error::input(format!("record {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[SftRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mean_response_len(&self) -> f64 {
        self.records.iter().map(|r| r.response.len()).sum::<usize>() as f64 / self.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct SftOutput {
    pub params: ToyLMParams,
    pub trace: Vec<StepMetrics>,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean negative log-likelihood of the dataset's responses.
pub fn sft_loss(model: &ToyLMParams, data: &SftDataset) -> Result<f64> {
    let mut total = 0.0;
    for r in data.records() {
        total -= model.sequence_logprob(&r.prompt, &r.response)?;
    }
    Ok(total / data.len() as f64)
}

pub fn train_sft(
    init: &ToyLMParams,
    data: &SftDataset,
    cfg: &TrainConfig,
    stream: &RngStream,
) -> Result<SftOutput> {
    cfg.validate()?;
    data.validate(&init.vocab())?;
    let schedule = cfg.schedule_for(data.len());
    let adam = cfg.adam();
    let mut params = init.clone();
    let mut state = AdamState::for_params(&params);
    let mut trace = Vec::with_capacity(schedule.total_steps);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut grad = params.zeros_like();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let batches = epoch_batches(data.len(), cfg.batch_size, epoch, stream);
        let n_batches = batches.len();
        for batch in batches {
            grad.values_mut().fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in &batch {
                let r = &data.records()[i];
                // Gradient of the loss -log π is the negated log-likelihood gradient.
                loss -= params.accumulate_logprob_grad(
                    r.prompt.tokens(),
                    r.response.tokens(),
                    -scale,
                    grad.values_mut(),
                );
            }
            loss *= scale;
            let lr = schedule.lr_at(step)?;
            adam_step(&mut params, &grad, &mut state, &adam, lr)?;
            trace.push(StepMetrics { step, lr, loss });
            epoch_loss += loss;
            step += 1;
        }
        epoch_losses.push(epoch_loss / n_batches as f64);
    }
    Ok(SftOutput {
        params,
        trace,
        epoch_losses,
    })
}
