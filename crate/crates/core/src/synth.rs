//! Synthetic permutation-copy task with an exact reward oracle.
//!
//! A prompt is `BOS a_1 .. a_L SEP`; the ideal response is
//! `perm(a_1) .. perm(a_L) EOS`. The oracle scores any response against that
//! ideal, and it is used both to label demonstrations and preferences and to
//! judge win rates.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{SftDataset, SftRecord};
use crate::reward::{PreferenceDataset, PreferenceTriple};
use crate::toylm::{
    sample_response, GenerationConfig, Prompt, Response, RngStream, TokenId, ToyLMParams, Vocab,
    EOS, FIRST_CONTENT, SEP,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaskRecord", into = "TaskRecord")]
pub struct TaskSpec {
    vocab: Vocab,
    /// `perm[t - FIRST_CONTENT]` is the image of content token `t`.
    perm: Vec<TokenId>,
    prompt_len: (usize, usize),
    length_penalty: f64,
}

#[derive(Serialize, Deserialize)]
struct TaskRecord {
    vocab_size: usize,
    perm: Vec<TokenId>,
    prompt_len_min: usize,
    prompt_len_max: usize,
    length_penalty: f64,
}

impl From<TaskSpec> for TaskRecord {
    fn from(t: TaskSpec) -> Self {
        Self {
            vocab_size: t.vocab.size(),
            perm: t.perm,
            prompt_len_min: t.prompt_len.0,
            prompt_len_max: t.prompt_len.1,
            length_penalty: t.length_penalty,
        }
    }
}

impl TryFrom<TaskRecord> for TaskSpec {
    type Error = Error;

    fn try_from(r: TaskRecord) -> Result<Self> {
        TaskSpec::new(
            Vocab::new(r.vocab_size)?,
            r.perm,
            (r.prompt_len_min, r.prompt_len_max),
            r.length_penalty,
        )
    }
}

impl TaskSpec {
    pub const DEFAULT_PROMPT_LEN: (usize, usize) = (4, 10);
    pub const DEFAULT_LENGTH_PENALTY: f64 = 0.5;

    pub fn new(
        vocab: Vocab,
        perm: Vec<TokenId>,
        prompt_len: (usize, usize),
        length_penalty: f64,
    ) -> Result<Self> {
        if perm.len() != vocab.num_content() {
            return Err(Error::config(format!(
                "perm has {} entries, vocab has {} content tokens",
                perm.len(),
                vocab.num_content()
            )));
        }
        let mut seen = vec![false; perm.len()];
        for &t in &perm {
            if !vocab.is_content(t) || std::mem::replace(&mut seen[(t - FIRST_CONTENT) as usize], true) {
                return Err(Error::config("perm is not a bijection on content tokens"));
            }
        }
        if prompt_len.0 == 0 || prompt_len.0 > prompt_len.1 {
            return Err(Error::config(format!(
                "prompt length range [{}, {}] is invalid",
                prompt_len.0, prompt_len.1
            )));
        }
        if !(length_penalty >= 0.0 && length_penalty.is_finite()) {
            return Err(Error::config("length_penalty must be finite and >= 0"));
        }
        Ok(Self {
            vocab,
            perm,
            prompt_len,
            length_penalty,
        })
    }

    pub fn identity(vocab: Vocab, prompt_len: (usize, usize), length_penalty: f64) -> Result<Self> {
        Self::new(vocab, vocab.content_tokens().collect(), prompt_len, length_penalty)
    }

    /// Uniformly random permutation drawn from `stream`.
    pub fn random(
        vocab: Vocab,
        prompt_len: (usize, usize),
        length_penalty: f64,
        stream: &RngStream,
    ) -> Result<Self> {
        let mut perm: Vec<TokenId> = vocab.content_tokens().collect();
        perm.shuffle(&mut stream.rng());
        Self::new(vocab, perm, prompt_len, length_penalty)
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn perm(&self) -> &[TokenId] {
        &self.perm
    }

    pub fn prompt_len(&self) -> (usize, usize) {
        self.prompt_len
    }

    pub fn length_penalty(&self) -> f64 {
        self.length_penalty
    }

    /// Image of a content token.
    pub fn map(&self, t: TokenId) -> TokenId {
        self.perm[(t - FIRST_CONTENT) as usize]
    }

    /// Same task with the inverse permutation.
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.perm.len()];
        for (i, &t) in self.perm.iter().enumerate() {
            inv[(t - FIRST_CONTENT) as usize] = FIRST_CONTENT + i as TokenId;
        }
        Self {
            perm: inv,
            ..self.clone()
        }
    }

    pub fn random_prompt<R: Rng + ?Sized>(&self, rng: &mut R) -> Prompt {
        let len = rng.random_range(self.prompt_len.0..=self.prompt_len.1);
        let content: Vec<TokenId> = (0..len).map(|_| self.random_content(rng)).collect();
        Prompt::from_content(&content, &self.vocab).expect("content tokens are in range")
    }

    fn random_content<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenId {
        rng.random_range(FIRST_CONTENT..self.vocab.size() as TokenId)
    }

    /// Prompts `0..n`, prompt `i` drawn from `stream.child(i)`.
    pub fn prompts(&self, n: usize, stream: &RngStream) -> Vec<Prompt> {
        (0..n)
            .map(|i| self.random_prompt(&mut stream.child(i as u64).rng()))
            .collect()
    }

    pub fn ideal_response(&self, prompt: &Prompt) -> Response {
        let mut tokens: Vec<TokenId> = prompt.content().iter().map(|&t| self.map(t)).collect();
        tokens.push(EOS);
        Response::new(tokens, &self.vocab).expect("mapped prompt is a valid response")
    }

    /// Ground-truth quality of `response` in `[-1, 1]`.
    ///
    /// ```text
    /// match   = #{i < min(n_y, n_*) : y_i = y*_i} / max(n_y, n_*)    (content tokens, EOS excluded)
    /// penalty = λ · |len(y) − len(y*)| / len(y*)                     (lengths include EOS)
    /// reward  = clamp(match − penalty, −1, 1)
    /// ```
    pub fn oracle_reward(&self, prompt: &Prompt, response: &Response) -> Result<f64> {
        if response.is_empty() {
            return Err(Error::input("empty response"));
        }
        let ideal = self.ideal_response(prompt);
        let (y, y_star) = (response.content(), ideal.content());
        let matched = y.iter().zip(y_star).filter(|(a, b)| a == b).count();
        let denom = y.len().max(y_star.len()).max(1);
        let m = matched as f64 / denom as f64;
        let len_diff = response.len().abs_diff(ideal.len()) as f64;
        let penalty = self.length_penalty * len_diff / ideal.len() as f64;
        Ok((m - penalty).clamp(-1.0, 1.0))
    }

    /// A policy whose greedy decoding is the ideal response: the token `L + 1`
    /// positions back is copied through `perm`, and `SEP` at that distance
    /// predicts `EOS`. Requires a fixed prompt length `L` with `L + 1 <= c`.
    pub fn ideal_model(&self, context_len: usize, strength: f64) -> Result<ToyLMParams> {
        let (lo, hi) = self.prompt_len;
        if lo != hi {
            return Err(Error::config("ideal_model needs a fixed prompt length"));
        }
        let back = lo + 1;
        if back > context_len {
            return Err(Error::config(format!(
                "context length {context_len} cannot reach {back} tokens back"
            )));
        }
        let mut m = ToyLMParams::zeros(self.vocab, context_len)?;
        for t in self.vocab.content_tokens() {
            *m.table_mut(back, t, self.map(t)) = strength;
        }
        *m.table_mut(back, SEP, EOS) = strength;
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotatorConfig {
    /// Probability that a preference label is flipped.
    pub flip_prob: f64,
    /// Per-token probability that a demonstration token is replaced.
    pub corruption_rate: f64,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.1,
            corruption_rate: 0.2,
        }
    }
}

impl AnnotatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.flip_prob) {
            return Err(Error::config(format!(
                "flip_prob must be in [0, 0.5), got {}",
                self.flip_prob
            )));
        }
        if !(0.0..1.0).contains(&self.corruption_rate) {
            return Err(Error::config(format!(
                "corruption_rate must be in [0, 1), got {}",
                self.corruption_rate
            )));
        }
        Ok(())
    }
}

/// Ideal response with each content token replaced, with probability `rate`,
/// by a uniformly drawn different content token.
pub fn corrupt<R: Rng + ?Sized>(task: &TaskSpec, prompt: &Prompt, rate: f64, rng: &mut R) -> Response {
    let n = task.vocab.num_content() as TokenId;
    let mut tokens = task.ideal_response(prompt).tokens().to_vec();
    let last = tokens.len() - 1;
    for t in &mut tokens[..last] {
        if rng.random::<f64>() < rate {
            let shift = rng.random_range(1..n);
            *t = FIRST_CONTENT + (*t - FIRST_CONTENT + shift) % n;
        }
    }
    Response::new(tokens, &task.vocab).expect("corrupted tokens are content")
}

/// `n` demonstrations; record `i` uses `stream.child(i)`.
pub fn gen_sft_dataset(
    task: &TaskSpec,
    n: usize,
    annot: &AnnotatorConfig,
    stream: &RngStream,
) -> Result<SftDataset> {
    annot.validate()?;
    let records = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.child(i as u64).rng();
            let prompt = task.random_prompt(&mut rng);
            let response = corrupt(task, &prompt, annot.corruption_rate, &mut rng);
            SftRecord { prompt, response }
        })
        .collect();
    SftDataset::new(records)
}

const MAX_RESAMPLES: usize = 10_000;

/// `n` annotated preference triples. Two independently corrupted responses
/// are drawn (the second is redrawn until it differs from the first), ranked
/// by the oracle with ties going to the first, and the label is then flipped
/// with probability `flip_prob`.
pub fn gen_preference_dataset(
    task: &TaskSpec,
    n: usize,
    annot: &AnnotatorConfig,
    stream: &RngStream,
) -> Result<PreferenceDataset> {
    annot.validate()?;
    if annot.corruption_rate <= 0.0 {
        return Err(Error::config(
            "corruption_rate must be > 0 to produce distinct response pairs",
        ));
    }
    let triples = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.child(i as u64).rng();
            let prompt = task.random_prompt(&mut rng);
            let a = corrupt(task, &prompt, annot.corruption_rate, &mut rng);
            let mut b = corrupt(task, &prompt, annot.corruption_rate, &mut rng);
            let mut tries = 0;
            while b == a {
                tries += 1;
                if tries > MAX_RESAMPLES {
                    return Err(Error::input(format!(
                        "triple {i}: could not draw two distinct responses"
                    )));
                }
                b = corrupt(task, &prompt, annot.corruption_rate, &mut rng);
            }
            let (ra, rb) = (task.oracle_reward(&prompt, &a)?, task.oracle_reward(&prompt, &b)?);
            let (mut w, mut l) = if ra >= rb { (a, b) } else { (b, a) };
            if rng.random::<f64>() < annot.flip_prob {
                std::mem::swap(&mut w, &mut l);
            }
            PreferenceTriple::new(prompt, w, l, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreferenceDataset::new(triples))
}

/// Oracle-judged pairwise win rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    pub rate: f64,
    /// `sqrt(p (1 − p) / n)`.
    pub stderr: f64,
    pub n: usize,
    pub wins: usize,
    pub ties: usize,
}

impl WinRate {
    /// From per-prompt outcomes `1`, `0.5` or `0`.
    pub fn from_outcomes(outcomes: &[f64]) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::input("no outcomes"));
        }
        let n = outcomes.len();
        let rate = outcomes.iter().sum::<f64>() / n as f64;
        Ok(Self {
            rate,
            stderr: (rate * (1.0 - rate) / n as f64).sqrt(),
            n,
            wins: outcomes.iter().filter(|&&o| o == 1.0).count(),
            ties: outcomes.iter().filter(|&&o| o == 0.5).count(),
        })
    }
}

/// One sampled response per prompt from each model. Each model samples from
/// `stream.derive(fingerprint)`, so distinct models use independent streams
/// and a model evaluated against itself ties on every prompt.
pub fn eval_winrate(
    candidate: &ToyLMParams,
    baseline: &ToyLMParams,
    task: &TaskSpec,
    prompts: &[Prompt],
    gen: &GenerationConfig,
    stream: &RngStream,
) -> Result<WinRate> {
    eval_winrate_with_streams(
        candidate,
        baseline,
        task,
        prompts,
        gen,
        &stream.derive(&candidate.fingerprint()),
        &stream.derive(&baseline.fingerprint()),
    )
}

/// As [`eval_winrate`] with explicit streams; prompt `i` uses `child(i)` of
/// each.
pub fn eval_winrate_with_streams(
    candidate: &ToyLMParams,
    baseline: &ToyLMParams,
    task: &TaskSpec,
    prompts: &[Prompt],
    gen: &GenerationConfig,
    candidate_stream: &RngStream,
    baseline_stream: &RngStream,
) -> Result<WinRate> {
    if prompts.is_empty() {
        return Err(Error::input("no evaluation prompts"));
    }
    gen.validate()?;
    let outcomes = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let i = i as u64;
            let yc = sample_response(candidate, p, gen, &candidate_stream.child(i))?;
            let yb = sample_response(baseline, p, gen, &baseline_stream.child(i))?;
            let (rc, rb) = (task.oracle_reward(p, &yc)?, task.oracle_reward(p, &yb)?);
            Ok(if rc > rb {
                1.0
            } else if rc == rb {
                0.5
            } else {
                0.0
            })
        })
        .collect::<Result<Vec<f64>>>()
        .map_err(|e| Error::Stage {
            stage: "eval".into(),
            source: Box::new(e),
        })?;
    WinRate::from_outcomes(&outcomes)
}

/// Mean oracle reward of one sampled response per prompt.
pub fn mean_oracle_reward(
    model: &ToyLMParams,
    task: &TaskSpec,
    prompts: &[Prompt],
    gen: &GenerationConfig,
    stream: &RngStream,
) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::input("no prompts"));
    }
    let rewards = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| task.oracle_reward(p, &sample_response(model, p, gen, &stream.child(i as u64))?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v() -> Vocab {
        Vocab::new(12).unwrap()
    }

    fn task() -> TaskSpec {
        // 4->7, 5->4, 6->11, 7->5, 8->10, 9->6, 10->9, 11->8
        TaskSpec::new(v(), vec![7, 4, 11, 5, 10, 6, 9, 8], (4, 10), 0.5).unwrap()
    }

    fn resp(t: &[TokenId]) -> Response {
        Response::new(t.to_vec(), &v()).unwrap()
    }

    #[test]
    fn rejects_non_bijection() {
        assert!(TaskSpec::new(v(), vec![4, 4, 5, 6, 7, 8, 9, 10], (4, 10), 0.5).is_err());
        assert!(TaskSpec::new(v(), vec![4, 5, 6], (4, 10), 0.5).is_err());
        assert!(TaskSpec::new(v(), vec![2, 4, 5, 6, 7, 8, 9, 10], (4, 10), 0.5).is_err());
    }

    #[test]
    fn ideal_response_by_hand() {
        let p = Prompt::from_content(&[4, 6, 8, 8, 11], &v()).unwrap();
        assert_eq!(task().ideal_response(&p).tokens(), &[7, 11, 10, 10, 8, EOS]);
        let id = TaskSpec::identity(v(), (4, 10), 0.5).unwrap();
        assert_eq!(id.ideal_response(&p).tokens(), &[4, 6, 8, 8, 11, EOS]);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = task();
        let inv = t.inverse();
        for a in v().content_tokens() {
            assert_eq!(inv.map(t.map(a)), a);
            assert_eq!(t.map(inv.map(a)), a);
        }
    }

    #[test]
    fn oracle_by_hand() {
        let t = task();
        let p = Prompt::from_content(&[4, 5, 6, 7, 8, 9, 10], &v()).unwrap();
        let ideal = t.ideal_response(&p);
        assert_eq!(t.oracle_reward(&p, &ideal).unwrap(), 1.0);
        // EOS only against an ideal of length 8: 0 − 0.5·7/8.
        assert_eq!(t.oracle_reward(&p, &resp(&[EOS])).unwrap(), -0.4375);
        // One substitution: 6/7 matched, same length.
        let mut one = ideal.tokens().to_vec();
        one[2] = 4;
        assert!((t.oracle_reward(&p, &resp(&one)).unwrap() - 6.0 / 7.0).abs() < 1e-15);
        // Ideal content without EOS: full match, length off by one.
        let trunc = &ideal.tokens()[..7];
        assert!((t.oracle_reward(&p, &resp(trunc)).unwrap() - (1.0 - 0.5 / 8.0)).abs() < 1e-15);
        // Ideal content plus a trailing extra token and no EOS: same length,
        // but the extra position counts against the match.
        let mut extra = trunc.to_vec();
        extra.push(4);
        assert!((t.oracle_reward(&p, &resp(&extra)).unwrap() - 7.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_clamps_long_responses() {
        let t = TaskSpec::identity(v(), (1, 1), 0.5).unwrap();
        let p = Prompt::from_content(&[5], &v()).unwrap();
        let long = resp(&[4; 24]);
        assert_eq!(t.oracle_reward(&p, &long).unwrap(), -1.0);
    }

    #[test]
    fn ideal_model_greedy_decodes_ideal() {
        let t = TaskSpec::random(Vocab::new(16).unwrap(), (5, 5), 0.5, &RngStream::new(3, "t", 0)).unwrap();
        let m = t.ideal_model(6, 30.0).unwrap();
        let gen = GenerationConfig {
            top_k: 1,
            ..Default::default()
        };
        for (i, p) in t.prompts(20, &RngStream::new(3, "p", 0)).iter().enumerate() {
            let y = sample_response(&m, p, &gen, &RngStream::new(0, "s", i as u64)).unwrap();
            assert_eq!(y, t.ideal_response(p));
        }
        assert!(t.ideal_model(5, 1.0).is_err());
        assert!(task().ideal_model(12, 1.0).is_err());
    }

    #[test]
    fn sft_without_corruption_is_ideal() {
        let t = task();
        let annot = AnnotatorConfig {
            corruption_rate: 0.0,
            ..Default::default()
        };
        let d = gen_sft_dataset(&t, 50, &annot, &RngStream::new(1, "sft", 0)).unwrap();
        for r in d.records() {
            assert_eq!(r.response, t.ideal_response(&r.prompt));
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let t = task();
        let a = AnnotatorConfig::default();
        let s = RngStream::new(9, "d", 0);
        assert_eq!(gen_sft_dataset(&t, 30, &a, &s).unwrap(), gen_sft_dataset(&t, 30, &a, &s).unwrap());
        assert_eq!(
            gen_preference_dataset(&t, 30, &a, &s).unwrap(),
            gen_preference_dataset(&t, 30, &a, &s).unwrap()
        );
    }

    #[test]
    fn annotator_validation() {
        let bad = AnnotatorConfig {
            flip_prob: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(gen_preference_dataset(&task(), 1, &bad, &RngStream::new(0, "x", 0)).is_err());
        let no_noise = AnnotatorConfig {
            corruption_rate: 0.0,
            ..Default::default()
        };
        assert!(gen_preference_dataset(&task(), 1, &no_noise, &RngStream::new(0, "x", 0)).is_err());
    }

    #[test]
    fn noiseless_labels_follow_the_oracle() {
        let t = task();
        let a = AnnotatorConfig {
            flip_prob: 0.0,
            corruption_rate: 0.3,
        };
        let d = gen_preference_dataset(&t, 500, &a, &RngStream::new(4, "p", 0)).unwrap();
        for tr in d.triples() {
            let rw = t.oracle_reward(&tr.prompt, &tr.chosen).unwrap();
            let rl = t.oracle_reward(&tr.prompt, &tr.rejected).unwrap();
            assert!(rw >= rl);
        }
    }

    #[test]
    fn identical_streams_give_half() {
        let t = task();
        let m = ToyLMParams::random(v(), 3, 1.0, &mut RngStream::new(0, "m", 0).rng()).unwrap();
        let prompts = t.prompts(40, &RngStream::new(0, "p", 0));
        let s = RngStream::new(5, "e", 0);
        let w = eval_winrate_with_streams(&m, &m, &t, &prompts, &GenerationConfig::default(), &s, &s).unwrap();
        assert_eq!(w.rate, 0.5);
        assert_eq!(w.ties, 40);
        assert_eq!(w.stderr, (0.25f64 / 40.0).sqrt());
    }

    #[test]
    fn model_against_itself_ties_and_distinct_models_differ() {
        let t = task();
        let m = ToyLMParams::random(v(), 3, 1.0, &mut RngStream::new(0, "m", 0).rng()).unwrap();
        let mut m2 = m.clone();
        m2.bias_mut()[4] += 1e-9;
        let prompts = t.prompts(40, &RngStream::new(0, "p", 0));
        let g = GenerationConfig::default();
        let s = RngStream::new(5, "e", 0);
        assert_eq!(eval_winrate(&m, &m, &t, &prompts, &g, &s).unwrap().ties, 40);
        assert!(eval_winrate(&m2, &m, &t, &prompts, &g, &s).unwrap().ties < 40);
    }

    #[test]
    fn win_rate_stderr_closed_form() {
        let w = WinRate::from_outcomes(&[1.0, 0.0, 0.5, 1.0]).unwrap();
        assert_eq!(w.rate, 0.625);
        assert_eq!(w.stderr, (0.625f64 * 0.375 / 4.0).sqrt());
        assert_eq!((w.wins, w.ties), (2, 1));
    }
}
