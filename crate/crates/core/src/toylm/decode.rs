//! Temperature / top-k / top-p decoding.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::ToyLMParams;
use super::rng::RngStream;
use super::vocab::{Prompt, Response, TokenId, EOS, NON_EMITTABLE};
use crate::error::{Error, Result};

/// Sampling knobs for response generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Responses drawn per prompt.
    pub k: usize,
    pub max_new_tokens: usize,
    /// Clamped to the vocabulary size at use.
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            k: 16,
            max_new_tokens: 24,
            top_k: 50,
            top_p: 0.98,
            temperature: 1.0,
        }
    }
}

impl GenerationConfig {
    /// Decoding parameters of the full-scale setup: 512 new tokens.
    pub fn full_scale() -> Self {
        Self {
            max_new_tokens: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config(format!("k must be >= 2, got {}", self.k)));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::config("max_new_tokens must be >= 1"));
        }
        check_filter_params(self.temperature, self.top_k, self.top_p)
    }
}

fn check_filter_params(temperature: f64, top_k: usize, top_p: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::config(format!("temperature must be > 0, got {temperature}")));
    }
    if top_k == 0 {
        return Err(Error::config("top_k must be >= 1"));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::config(format!("top_p must be in (0, 1], got {top_p}")));
    }
    Ok(())
}

/// Turns raw logits into the sampling distribution: scale by temperature,
/// keep the `top_k` largest (lower id wins ties), keep the shortest prefix of
/// those whose renormalized mass reaches `top_p`, renormalize.
pub fn filter_logits(raw: &[f64], temperature: f64, top_k: usize, top_p: f64) -> Result<Vec<f64>> {
    filter_logits_excluding(raw, temperature, top_k, top_p, &[])
}

/// As [`filter_logits`], with `excluded` ids removed from the candidate set
/// before any filtering so they end up with probability exactly 0.
pub fn filter_logits_excluding(
    raw: &[f64],
    temperature: f64,
    top_k: usize,
    top_p: f64,
    excluded: &[TokenId],
) -> Result<Vec<f64>> {
    check_filter_params(temperature, top_k, top_p)?;
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("non-finite logit"));
    }
    let mut order: Vec<usize> = (0..raw.len())
        .filter(|&i| !excluded.contains(&(i as TokenId)))
        .collect();
    if order.is_empty() {
        return Err(Error::input("no candidate tokens left after exclusion"));
    }
    let scaled: Vec<f64> = raw.iter().map(|z| z / temperature).collect();
    order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]).then(a.cmp(&b)));
    order.truncate(top_k.min(order.len()));

    let max = scaled[order[0]];
    let weights: Vec<f64> = order.iter().map(|&i| (scaled[i] - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut keep = weights.len();
    let mut cum = 0.0;
    for (n, w) in weights.iter().enumerate() {
        cum += w / total;
        if cum >= top_p {
            keep = n + 1;
            break;
        }
    }
    let kept_mass: f64 = weights[..keep].iter().sum();
    let mut probs = vec![0.0; raw.len()];
    for (&i, w) in order[..keep].iter().zip(&weights) {
        probs[i] = w / kept_mass;
    }
    Ok(probs)
}

/// Distribution of the next token after `seq`, with PAD/BOS/SEP masked.
pub fn next_token_distribution(
    model: &ToyLMParams,
    seq: &[TokenId],
    gen: &GenerationConfig,
) -> Result<Vec<f64>> {
    for &t in seq {
        model.vocab().check(t)?;
    }
    let mut logits = vec![0.0; model.vocab().size()];
    model.logits_at(seq, seq.len(), &mut logits);
    filter_logits_excluding(&logits, gen.temperature, gen.top_k, gen.top_p, &NON_EMITTABLE)
}

/// Inverse-CDF draw; returns the last id with positive mass if rounding
/// leaves `u` past the cumulative total.
fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> TokenId {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return i as TokenId;
            }
        }
    }
    last as TokenId
}

/// Samples one response autoregressively until EOS or `max_new_tokens`.
pub fn sample_response(
    model: &ToyLMParams,
    prompt: &Prompt,
    gen: &GenerationConfig,
    stream: &RngStream,
) -> Result<Response> {
    prompt.validate(&model.vocab())?;
    check_filter_params(gen.temperature, gen.top_k, gen.top_p)?;
    if gen.max_new_tokens == 0 {
        return Err(Error::config("max_new_tokens must be >= 1"));
    }
    let mut rng = stream.rng();
    let mut seq = prompt.tokens().to_vec();
    let start = seq.len();
    let mut logits = vec![0.0; model.vocab().size()];
    for _ in 0..gen.max_new_tokens {
        model.logits_at(&seq, seq.len(), &mut logits);
        let probs = filter_logits_excluding(
            &logits,
            gen.temperature,
            gen.top_k,
            gen.top_p,
            &NON_EMITTABLE,
        )?;
        let tok = draw(&probs, &mut rng);
        seq.push(tok);
        if tok == EOS {
            break;
        }
    }
    Response::new(seq.split_off(start), &model.vocab())
}

/// `k` responses for one prompt, response `j` drawn from `stream.child(j)`.
pub fn sample_k_responses(
    model: &ToyLMParams,
    prompt: &Prompt,
    gen: &GenerationConfig,
    stream: &RngStream,
) -> Result<Vec<Response>> {
    gen.validate()?;
    (0..gen.k as u64)
        .into_par_iter()
        .map(|j| sample_response(model, prompt, gen, &stream.child(j)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylm::vocab::Vocab;

    fn sum(p: &[f64]) -> f64 {
        p.iter().sum()
    }

    #[test]
    fn top_k_one_is_greedy() {
        let p = filter_logits(&[0.5, 2.0, 2.0, -1.0], 1.0, 1, 1.0).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn no_filtering_is_softmax() {
        let z = [0.3, -1.2, 2.5, 0.0, 1.0];
        let p = filter_logits(&z, 1.0, 5, 1.0).unwrap();
        let denom: f64 = z.iter().map(|x| x.exp()).sum();
        for (pi, zi) in p.iter().zip(&z) {
            assert!((pi - zi.exp() / denom).abs() < 1e-15);
        }
    }

    #[test]
    fn nucleus_on_four_tokens_matches_enumeration() {
        // softmax([2,1,0,-1]) cumulates to .644, .881, .968: three tokens reach 0.9
        let z = [2.0f64, 1.0, 0.0, -1.0];
        let p = filter_logits(&z, 1.0, 4, 0.9).unwrap();
        let kept: f64 = z[..3].iter().map(|x| x.exp()).sum();
        for i in 0..3 {
            assert!((p[i] - z[i].exp() / kept).abs() < 1e-15);
        }
        assert_eq!(p[3], 0.0);
        assert!((sum(&p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn temperature_sharpens() {
        let z = [1.0, 0.0];
        let cold = filter_logits(&z, 0.5, 2, 1.0).unwrap();
        let hot = filter_logits(&z, 2.0, 2, 1.0).unwrap();
        assert!(cold[0] > hot[0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(filter_logits(&[f64::NAN, 0.0], 1.0, 2, 1.0).is_err());
        assert!(filter_logits(&[f64::INFINITY, 0.0], 1.0, 2, 1.0).is_err());
        assert!(filter_logits(&[0.0, 0.0], 0.0, 2, 1.0).is_err());
        assert!(filter_logits(&[0.0, 0.0], 1.0, 0, 1.0).is_err());
        assert!(filter_logits(&[0.0, 0.0], 1.0, 2, 0.0).is_err());
        assert!(filter_logits(&[0.0, 0.0], 1.0, 2, 1.5).is_err());
    }

    #[test]
    fn excluded_tokens_get_zero_mass() {
        let p = filter_logits_excluding(&[9.0, 9.0, 0.0, 1.0], 1.0, 4, 1.0, &[0, 1]).unwrap();
        assert_eq!(p[0], 0.0);
        assert_eq!(p[1], 0.0);
        assert!((sum(&p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generation_config_validation() {
        assert!(GenerationConfig::default().validate().is_ok());
        assert_eq!(GenerationConfig::full_scale().max_new_tokens, 512);
        let bad = GenerationConfig {
            k: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sampled_responses_never_contain_reserved_tokens() {
        let v = Vocab::new(8).unwrap();
        let mut rng = RngStream::new(3, "m", 0).rng();
        let mut m = ToyLMParams::random(v, 2, 2.0, &mut rng).unwrap();
        // Make reserved tokens very attractive; they must still be masked.
        for t in NON_EMITTABLE {
            m.bias_mut()[t as usize] = 50.0;
        }
        let prompt = Prompt::from_content(&[4, 5], &v).unwrap();
        let gen = GenerationConfig::default();
        for i in 0..50 {
            let r = sample_response(&m, &prompt, &gen, &RngStream::new(1, "s", i)).unwrap();
            assert!(r.tokens().iter().all(|t| !NON_EMITTABLE.contains(t)));
            assert!(r.len() <= gen.max_new_tokens);
        }
    }
}
