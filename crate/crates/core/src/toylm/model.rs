//! Linear c-gram softmax language model.
//!
//! The logit of token `t` after a context is `b[t] + Σ_i T_i[ctx_i, t]`, where
//! `ctx_i` is the token `i` positions back (PAD before the start of the
//! sequence). There are no hidden layers, so log-likelihood gradients are the
//! usual indicator-minus-softmax terms scattered into the touched table rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Prompt, Response, TokenId, Vocab, PAD};
use crate::error::{Error, Result};
use crate::math::{log_softmax_into, softmax_into};
use crate::optim::Parameters;

/// Parameters of the policy / reference model.
///
/// Storage is one flat vector: tables `T_1..T_c` (each `V×V`, row-major,
/// row = previous token, column = next token) followed by the bias `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ToyLmRecord", into = "ToyLmRecord")]
pub struct ToyLMParams {
    vocab: Vocab,
    context_len: usize,
    values: Vec<f64>,
}

impl ToyLMParams {
    pub const DEFAULT_CONTEXT_LEN: usize = 3;

    pub fn zeros(vocab: Vocab, context_len: usize) -> Result<Self> {
        if context_len == 0 {
            return Err(Error::config("context length must be positive"));
        }
        let v = vocab.size();
        Ok(Self {
            vocab,
            context_len,
            values: vec![0.0; context_len * v * v + v],
        })
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
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

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    fn v(&self) -> usize {
        self.vocab.size()
    }

    fn row_offset(&self, back: usize, prev: TokenId) -> usize {
        let v = self.v();
        (back - 1) * v * v + prev as usize * v
    }

    fn bias_offset(&self) -> usize {
        self.context_len * self.v() * self.v()
    }

    /// `T_back[prev, next]`, with `back` in `1..=c`.
    pub fn table(&self, back: usize, prev: TokenId, next: TokenId) -> f64 {
        self.values[self.row_offset(back, prev) + next as usize]
    }

    pub fn table_mut(&mut self, back: usize, prev: TokenId, next: TokenId) -> &mut f64 {
        let off = self.row_offset(back, prev) + next as usize;
        &mut self.values[off]
    }

    pub fn bias(&self) -> &[f64] {
        &self.values[self.bias_offset()..]
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        let off = self.bias_offset();
        &mut self.values[off..]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// SHA-256 of the shape and the exact parameter bits.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::with_capacity(16 + 8 * self.values.len());
        bytes.extend((self.vocab.size() as u64).to_le_bytes());
        bytes.extend((self.context_len as u64).to_le_bytes());
        for x in &self.values {
            bytes.extend(x.to_bits().to_le_bytes());
        }
        crate::io::sha256_hex(&bytes)
    }

    /// Next-token logits for an explicit context of exactly `c` ids, oldest
    /// first (so `context[c - i]` is the token `i` positions back).
    pub fn logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        let c = self.context_len;
        if context.len() != c {
            return Err(Error::input(format!(
                "context must have {c} entries, got {}",
                context.len()
            )));
        }
        for &t in context {
            self.vocab.check(t)?;
        }
        let mut out = vec![0.0; self.v()];
        self.logits_at(context, c, &mut out);
        Ok(out)
    }

    /// Logits for predicting `seq[pos]` from the tokens before it. Ids must
    /// already be range-checked.
    pub(crate) fn logits_at(&self, seq: &[TokenId], pos: usize, out: &mut [f64]) {
        let v = self.v();
        out.copy_from_slice(self.bias());
        for back in 1..=self.context_len {
            let prev = if pos >= back { seq[pos - back] } else { PAD };
            let off = self.row_offset(back, prev);
            for (o, w) in out.iter_mut().zip(&self.values[off..off + v]) {
                *o += w;
            }
        }
    }

    fn check_continuation(&self, prefix: &[TokenId], continuation: &[TokenId]) -> Result<()> {
        if continuation.is_empty() {
            return Err(Error::input("empty response"));
        }
        for &t in prefix.iter().chain(continuation) {
            self.vocab.check(t)?;
        }
        Ok(())
    }

    /// `log π(y | x)` summed over response positions only.
    pub fn sequence_logprob(&self, prompt: &Prompt, response: &Response) -> Result<f64> {
        prompt.validate(&self.vocab)?;
        response.validate(&self.vocab)?;
        self.continuation_logprob(prompt.tokens(), response.tokens())
    }

    /// Log-probability of `continuation` following an arbitrary `prefix`.
    /// Only range checks are applied, so this also scores partial sequences.
    pub fn continuation_logprob(&self, prefix: &[TokenId], continuation: &[TokenId]) -> Result<f64> {
        self.check_continuation(prefix, continuation)?;
        let seq: Vec<TokenId> = prefix.iter().chain(continuation).copied().collect();
        let v = self.v();
        let mut logits = vec![0.0; v];
        let mut logp = vec![0.0; v];
        let mut total = 0.0;
        for pos in prefix.len()..seq.len() {
            self.logits_at(&seq, pos, &mut logits);
            log_softmax_into(&logits, &mut logp);
            total += logp[seq[pos] as usize];
        }
        Ok(total)
    }

    /// Gradient of [`Self::sequence_logprob`] with respect to every parameter.
    pub fn logprob_grad(&self, prompt: &Prompt, response: &Response) -> Result<ToyLMParams> {
        prompt.validate(&self.vocab)?;
        response.validate(&self.vocab)?;
        let (_, grad) = self.continuation_logprob_grad(prompt.tokens(), response.tokens())?;
        Ok(grad)
    }

    /// Log-probability and its gradient for a raw continuation.
    pub fn continuation_logprob_grad(
        &self,
        prefix: &[TokenId],
        continuation: &[TokenId],
    ) -> Result<(f64, ToyLMParams)> {
        self.check_continuation(prefix, continuation)?;
        let mut grad = self.zeros_like();
        let lp = self.accumulate_logprob_grad(prefix, continuation, 1.0, &mut grad.values);
        Ok((lp, grad))
    }

    /// Adds `scale * ∇ log π(continuation | prefix)` into `grad` and returns
    /// the log-probability. Inputs must already be validated.
    pub(crate) fn accumulate_logprob_grad(
        &self,
        prefix: &[TokenId],
        continuation: &[TokenId],
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let seq: Vec<TokenId> = prefix.iter().chain(continuation).copied().collect();
        let v = self.v();
        let bias_off = self.bias_offset();
        let mut logits = vec![0.0; v];
        let mut probs = vec![0.0; v];
        let mut total = 0.0;
        for pos in prefix.len()..seq.len() {
            let target = seq[pos] as usize;
            self.logits_at(&seq, pos, &mut logits);
            softmax_into(&logits, &mut probs);
            total += probs[target].ln();
            // delta = scale * (onehot(target) - p)
            for p in probs.iter_mut() {
                *p *= -scale;
            }
            probs[target] += scale;
            for (g, d) in grad[bias_off..bias_off + v].iter_mut().zip(&probs) {
                *g += d;
            }
            for back in 1..=self.context_len {
                let prev = if pos >= back { seq[pos - back] } else { PAD };
                let off = self.row_offset(back, prev);
                for (g, d) in grad[off..off + v].iter_mut().zip(&probs) {
                    *g += d;
                }
            }
        }
        total
    }
}

impl Parameters for ToyLMParams {
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

/// JSON shape of a checkpoint: tables are row-major flat arrays.
#[derive(Serialize, Deserialize)]
struct ToyLmRecord {
    vocab_size: usize,
    context_len: usize,
    tables: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<ToyLMParams> for ToyLmRecord {
    fn from(p: ToyLMParams) -> Self {
        let v = p.v();
        let bias = p.bias().to_vec();
        let tables = p.values[..p.bias_offset()]
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

impl TryFrom<ToyLmRecord> for ToyLMParams {
    type Error = Error;
    fn try_from(r: ToyLmRecord) -> Result<Self> {
        if r.tables.len() != r.context_len {
            return Err(Error::input("table count does not match context length"));
        }
        let mut values: Vec<f64> = r.tables.into_iter().flatten().collect();
        values.extend(r.bias);
        ToyLMParams::from_values(Vocab::new(r.vocab_size)?, r.context_len, values)
    }
}
