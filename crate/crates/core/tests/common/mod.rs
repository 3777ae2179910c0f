//! Helpers shared by the integration tests.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rsdpo::math::sigmoid;
use rsdpo::optim::Parameters;
use rsdpo::pdgrs::{CandidateSet, ScoredResponse};
use rsdpo::reward::PreferenceTriple;
use rsdpo::toylm::vocab::{TokenId, EOS, FIRST_CONTENT};
use rsdpo::toylm::{Prompt, Response, RngStream, Vocab};

pub fn rng(label: &str, i: u64) -> ChaCha8Rng {
    RngStream::new(0xACCE, label, i).rng()
}

pub fn content_token<R: Rng + ?Sized>(vocab: &Vocab, rng: &mut R) -> TokenId {
    FIRST_CONTENT + rng.random_range(0..vocab.num_content() as TokenId)
}

pub fn random_prompt<R: Rng + ?Sized>(vocab: &Vocab, len: (usize, usize), rng: &mut R) -> Prompt {
    let n = rng.random_range(len.0..=len.1);
    let content: Vec<TokenId> = (0..n).map(|_| content_token(vocab, rng)).collect();
    Prompt::from_content(&content, vocab).unwrap()
}

/// `0..=max_content` content tokens followed by EOS.
pub fn random_response<R: Rng + ?Sized>(vocab: &Vocab, max_content: usize, rng: &mut R) -> Response {
    let n = rng.random_range(0..=max_content);
    let mut tokens: Vec<TokenId> = (0..n).map(|_| content_token(vocab, rng)).collect();
    tokens.push(EOS);
    Response::new(tokens, vocab).unwrap()
}

pub fn random_triple<R: Rng + ?Sized>(vocab: &Vocab, rng: &mut R) -> PreferenceTriple {
    let prompt = random_prompt(vocab, (1, 5), rng);
    let chosen = random_response(vocab, 5, rng);
    let mut rejected = random_response(vocab, 5, rng);
    while rejected == chosen {
        rejected = random_response(vocab, 5, rng);
    }
    PreferenceTriple::new(prompt, chosen, rejected, None).unwrap()
}

/// A candidate set with some tied rewards and some repeated responses, so
/// ties and duplicate sequences are exercised. A repeated response keeps its
/// reward, as it would under any reward model.
pub fn random_candidates<R: Rng + ?Sized>(vocab: &Vocab, k: usize, rng: &mut R) -> CandidateSet {
    let prompt = random_prompt(vocab, (1, 4), rng);
    let mut scored: Vec<ScoredResponse> = Vec::with_capacity(k);
    for _ in 0..k {
        if !scored.is_empty() && rng.random_bool(0.15) {
            let copy = scored[rng.random_range(0..scored.len())].clone();
            scored.push(copy);
            continue;
        }
        let reward = if rng.random_bool(0.2) {
            rng.random_range(0..3) as f64
        } else {
            rng.random_range(-4.0..4.0)
        };
        let response = random_response(vocab, 3, rng);
        let reward = match scored.iter().find(|s| s.response == response) {
            Some(s) => s.reward,
            None => reward,
        };
        scored.push(ScoredResponse { response, reward });
    }
    CandidateSet::new(prompt, scored).unwrap()
}

/// Every ordered pair `(j, l)` with `σ((r_j − r_l)/τ) > η` and distinct
/// token sequences, enumerated directly.
pub fn brute_force_pairs(c: &CandidateSet, threshold: f64, temperature: f64) -> Vec<PreferenceTriple> {
    let mut out = Vec::new();
    for (j, a) in c.scored.iter().enumerate() {
        for (l, b) in c.scored.iter().enumerate() {
            if j == l || a.response == b.response {
                continue;
            }
            let g = sigmoid((a.reward - b.reward) / temperature);
            if g > threshold {
                out.push(PreferenceTriple {
                    prompt: c.prompt.clone(),
                    chosen: a.response.clone(),
                    rejected: b.response.clone(),
                    gap_sigma: Some(g.min(1.0 - f64::EPSILON / 2.0)),
                });
            }
        }
    }
    out
}

/// Central differences of `f` at `p`, one coordinate at a time.
pub fn numeric_grad<P: Parameters>(p: &P, step: f64, f: impl Fn(&P) -> f64) -> Vec<f64> {
    let mut q = p.clone();
    (0..p.values().len())
        .map(|i| {
            let x = p.values()[i];
            q.values_mut()[i] = x + step;
            let up = f(&q);
            q.values_mut()[i] = x - step;
            let down = f(&q);
            q.values_mut()[i] = x;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `max_i |a_i − n_i| / max(max_i |a_i|, max_i |n_i|)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
