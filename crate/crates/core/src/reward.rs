//! Scalar reward model, Bradley-Terry preference probability, and pairwise
//! logistic training.
//!
//! The score of a response is the mean over its positions of
//! `b_r + Σ_i S_i[ctx_i, y_t]`, using the same c-token context window as the
//! policy. Mean pooling keeps scores independent of response length.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::optim::{adam_step, epoch_batches, AdamState, Parameters, StepMetrics, TrainConfig};
use crate::toylm::{Prompt, Response, RngStream, TokenId, Vocab, PAD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RewardRecord", into = "RewardRecord")]
pub struct RewardModelParams {
    vocab: Vocab,
    context_len: usize,
    /// `S_1..S_c` row-major, then the scalar bias.
    values: Vec<f64>,
}

impl RewardModelParams {
    pub fn zeros(vocab: Vocab, context_len: usize) -> Result<Self> {
        if context_len == 0 {
            return Err(Error::config("context length must be positive"));
        }
        let v = vocab.size();
        Ok(Self {
            vocab,
            context_len,
            values: vec![0.0; context_len * v * v + 1],
        })
    }

    pub fn random<R: Rng + ?Sized>(
        vocab: Vocab,
        context_len: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(vocab, context_len)?;
        for x in &mut p.values {
            *x = rng.random_range(-scale..=scale);
        }
        Ok(p)
    }

    pub fn from_values(vocab: Vocab, context_len: usize, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(vocab, context_len)?;
        if values.len() != p.values.len() {
            return Err(Error::input(format!(
                "expected {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("non-finite parameter"));
        }
        p.values = values;
        Ok(p)
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    fn offset(&self, back: usize, prev: TokenId, next: TokenId) -> usize {
        let v = self.vocab.size();
        (back - 1) * v * v + prev as usize * v + next as usize
    }

    pub fn table(&self, back: usize, prev: TokenId, next: TokenId) -> f64 {
        self.values[self.offset(back, prev, next)]
    }

    pub fn table_mut(&mut self, back: usize, prev: TokenId, next: TokenId) -> &mut f64 {
        let off = self.offset(back, prev, next);
        &mut self.values[off]
    }

    pub fn bias(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn set_bias(&mut self, b: f64) {
        let last = self.values.len() - 1;
        self.values[last] = b;
    }

    fn check(&self, prompt: &Prompt, response: &Response) -> Result<()> {
        prompt.validate(&self.vocab)?;
        response.validate(&self.vocab)
    }

    /// `R(x, y)`.
    pub fn score(&self, prompt: &Prompt, response: &Response) -> Result<f64> {
        self.check(prompt, response)?;
        Ok(self.score_unchecked(prompt, response))
    }

    fn score_unchecked(&self, prompt: &Prompt, response: &Response) -> f64 {
        let p = prompt.tokens();
        let r = response.tokens();
        let token_at = |pos: usize| if pos < p.len() { p[pos] } else { r[pos - p.len()] };
        let mut total = 0.0;
        for t in 0..r.len() {
            let pos = p.len() + t;
            total += self.bias();
            for back in 1..=self.context_len {
                let prev = if pos >= back { token_at(pos - back) } else { PAD };
                total += self.table(back, prev, r[t]);
            }
        }
        total / r.len() as f64
    }

    /// Adds `scale * ∇R(x, y)` into `grad`.
    fn accumulate_score_grad(&self, prompt: &Prompt, response: &Response, scale: f64, grad: &mut [f64]) {
        let p = prompt.tokens();
        let r = response.tokens();
        let token_at = |pos: usize| if pos < p.len() { p[pos] } else { r[pos - p.len()] };
        let w = scale / r.len() as f64;
        for t in 0..r.len() {
            let pos = p.len() + t;
            for back in 1..=self.context_len {
                let prev = if pos >= back { token_at(pos - back) } else { PAD };
                grad[self.offset(back, prev, r[t])] += w;
            }
        }
        let last = grad.len() - 1;
        grad[last] += scale;
    }
}

impl Parameters for RewardModelParams {
    fn values(&self) -> &[f64] {
        &self.values
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn zeros_like(&self) -> Self {
        Self {
            vocab: self.vocab,
            context_len: self.context_len,
            values: vec![0.0; self.values.len()],
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RewardRecord {
    vocab_size: usize,
    context_len: usize,
    tables: Vec<Vec<f64>>,
    bias: f64,
}

impl From<RewardModelParams> for RewardRecord {
    fn from(p: RewardModelParams) -> Self {
        let v = p.vocab.size();
        let bias = p.bias();
        let tables = p.values[..p.values.len() - 1]
            .chunks(v * v)
            .map(<[f64]>::to_vec)
            .collect();
        Self {
            vocab_size: v,
            context_len: p.context_len,
            tables,
            bias,
        }
    }
}

impl TryFrom<RewardRecord> for RewardModelParams {
    type Error = Error;
    fn try_from(r: RewardRecord) -> Result<Self> {
        if r.tables.len() != r.context_len {
            return Err(Error::input("table count does not match context length"));
        }
        let mut values: Vec<f64> = r.tables.into_iter().flatten().collect();
        values.push(r.bias);
        RewardModelParams::from_values(Vocab::new(r.vocab_size)?, r.context_len, values)
    }
}

/// `p(y_w ≻ y_l) = exp(r_w) / (exp(r_w) + exp(r_l)) = σ(r_w − r_l)`.
pub fn bt_probability(r_w: f64, r_l: f64) -> f64 {
    sigmoid(r_w - r_l)
}

/// One preference: `chosen` (y_w) is preferred over `rejected` (y_l).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub prompt: Prompt,
    pub chosen: Response,
    pub rejected: Response,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_sigma: Option<f64>,
}

impl PreferenceTriple {
    pub fn new(
        prompt: Prompt,
        chosen: Response,
        rejected: Response,
        gap_sigma: Option<f64>,
    ) -> Result<Self> {
        let t = Self {
            prompt,
            chosen,
            rejected,
            gap_sigma,
        };
        t.check_shape()?;
        Ok(t)
    }

    fn check_shape(&self) -> Result<()> {
        if self.chosen == self.rejected {
            return Err(Error::input("chosen and rejected responses are identical"));
        }
        if let Some(g) = self.gap_sigma {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::input(format!("gap_sigma must be in (0, 1), got {g}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        self.prompt.validate(vocab)?;
        self.chosen.validate(vocab)?;
        self.rejected.validate(vocab)?;
        self.check_shape()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreferenceDataset {
    triples: Vec<PreferenceTriple>,
}

impl PreferenceDataset {
    pub fn new(triples: Vec<PreferenceTriple>) -> Self {
        Self { triples }
    }

    pub fn triples(&self) -> &[PreferenceTriple] {
        &self.triples
    }

    pub fn into_triples(self) -> Vec<PreferenceTriple> {
        self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        for (i, t) in self.triples.iter().enumerate() {
            t.validate(vocab)
                .map_err(|e| Error::input(format!("triple {i}: {e}")))?;
        }
        Ok(())
    }

    /// First `n` triples.
    pub fn head(&self, n: usize) -> Self {
        Self::new(self.triples[..n.min(self.len())].to_vec())
    }

    pub fn prompts(&self) -> Vec<Prompt> {
        self.triples.iter().map(|t| t.prompt.clone()).collect()
    }
}

impl FromIterator<PreferenceTriple> for PreferenceDataset {
    fn from_iter<I: IntoIterator<Item = PreferenceTriple>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Score difference `R(x, y_w) − R(x, y_l)`.
pub fn reward_margin(rm: &RewardModelParams, triple: &PreferenceTriple) -> Result<f64> {
    Ok(rm.score(&triple.prompt, &triple.chosen)? - rm.score(&triple.prompt, &triple.rejected)?)
}

/// Pairwise logistic loss `−log σ(R(x,y_w) − R(x,y_l))` and its gradient.
pub fn rm_loss_and_grad(
    rm: &RewardModelParams,
    triple: &PreferenceTriple,
) -> Result<(f64, RewardModelParams)> {
    let mut grad = rm.zeros_like();
    let loss = accumulate_rm_grad(rm, triple, 1.0, grad.values_mut())?;
    Ok((loss, grad))
}

fn accumulate_rm_grad(
    rm: &RewardModelParams,
    triple: &PreferenceTriple,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    rm.check(&triple.prompt, &triple.chosen)?;
    rm.check(&triple.prompt, &triple.rejected)?;
    let delta = rm.score_unchecked(&triple.prompt, &triple.chosen)
        - rm.score_unchecked(&triple.prompt, &triple.rejected);
    // d/dΔ of softplus(−Δ) is −σ(−Δ).
    let coef = -sigmoid(-delta) * scale;
    rm.accumulate_score_grad(&triple.prompt, &triple.chosen, coef, grad);
    rm.accumulate_score_grad(&triple.prompt, &triple.rejected, -coef, grad);
    Ok(softplus(-delta))
}

/// Fraction of triples the model orders correctly (`Δ > 0`).
pub fn pairwise_accuracy(rm: &RewardModelParams, data: &PreferenceDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::input("empty preference dataset"));
    }
    let mut correct = 0usize;
    for t in data.triples() {
        if reward_margin(rm, t)? > 0.0 {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmEpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct RmOutput {
    pub params: RewardModelParams,
    pub trace: Vec<StepMetrics>,
    pub epochs: Vec<RmEpochMetrics>,
}

pub fn train_rm(
    init: &RewardModelParams,
    data: &PreferenceDataset,
    cfg: &TrainConfig,
    stream: &RngStream,
) -> Result<RmOutput> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::input("empty preference dataset"));
    }
    data.validate(&init.vocab())?;
    let schedule = cfg.schedule_for(data.len());
    let adam = cfg.adam();
    let mut params = init.clone();
    let mut state = AdamState::for_params(&params);
    let mut grad = params.zeros_like();
    let mut trace = Vec::with_capacity(schedule.total_steps);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(data.len(), cfg.batch_size, epoch, stream);
        let n_batches = batches.len();
        let mut epoch_loss = 0.0;
        for batch in batches {
            grad.values_mut().fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in &batch {
                loss += accumulate_rm_grad(&params, &data.triples()[i], scale, grad.values_mut())?;
            }
            loss *= scale;
            let lr = schedule.lr_at(step)?;
            adam_step(&mut params, &grad, &mut state, &adam, lr)?;
            trace.push(StepMetrics { step, lr, loss });
            epoch_loss += loss;
            step += 1;
        }
        epochs.push(RmEpochMetrics {
            epoch,
            loss: epoch_loss / n_batches as f64,
            accuracy: pairwise_accuracy(&params, data)?,
        });
    }
    Ok(RmOutput {
        params,
        trace,
        epochs,
    })
}
