//! Preference data generation by rejection sampling, and the competing
//! pair-selection policies.
//!
//! For every prompt, `k` responses are sampled from the SFT model and scored by
//! the reward model. Every ordered pair `(j, l)` whose temperature-scaled
//! reward gap `σ((r_j − r_l)/τ)` exceeds the threshold `η` becomes a triple
//! with `y_w = y_j`, `y_l = y_l`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::optim::SftRecord;
use crate::reward::{PreferenceDataset, PreferenceTriple, RewardModelParams};
use crate::toylm::{sample_k_responses, GenerationConfig, Prompt, Response, RngStream, ToyLMParams};

/// Largest double below one; stored gaps are capped here so they stay in (0, 1).
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    #[serde(rename = "tokens")]
    pub response: Response,
    pub reward: f64,
}

/// The `k` scored responses sampled for one prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub prompt: Prompt,
    pub scored: Vec<ScoredResponse>,
}

impl CandidateSet {
    pub fn new(prompt: Prompt, scored: Vec<ScoredResponse>) -> Result<Self> {
        if scored.len() < 2 {
            return Err(Error::input(format!(
                "candidate set needs at least 2 responses, got {}",
                scored.len()
            )));
        }
        if scored.iter().any(|s| !s.reward.is_finite()) {
            return Err(Error::input("non-finite reward in candidate set"));
        }
        Ok(Self { prompt, scored })
    }

    pub fn k(&self) -> usize {
        self.scored.len()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.scored.iter().map(|s| s.reward).collect()
    }

    /// Index of the highest reward, lowest index on ties.
    pub fn best_index(&self) -> usize {
        let mut best = 0;
        for (i, s) in self.scored.iter().enumerate() {
            if s.reward > self.scored[best].reward {
                best = i;
            }
        }
        best
    }

    /// Index of the lowest reward, lowest index on ties.
    pub fn worst_index(&self) -> usize {
        let mut worst = 0;
        for (i, s) in self.scored.iter().enumerate() {
            if s.reward < self.scored[worst].reward {
                worst = i;
            }
        }
        worst
    }

    fn triple(&self, chosen: usize, rejected: usize, gap_sigma: Option<f64>) -> Option<PreferenceTriple> {
        let (w, l) = (&self.scored[chosen].response, &self.scored[rejected].response);
        (w != l).then(|| PreferenceTriple {
            prompt: self.prompt.clone(),
            chosen: w.clone(),
            rejected: l.clone(),
            gap_sigma,
        })
    }
}

/// One row of the generation artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_id: usize,
    pub prompt: Prompt,
    pub responses: Vec<ScoredResponse>,
}

impl GenerationRecord {
    pub fn from_candidates(prompt_id: usize, c: &CandidateSet) -> Self {
        Self {
            prompt_id,
            prompt: c.prompt.clone(),
            responses: c.scored.clone(),
        }
    }

    pub fn into_candidates(self) -> Result<CandidateSet> {
        CandidateSet::new(self.prompt, self.responses)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdgrsConfig {
    /// τ
    pub temperature: f64,
    /// η
    pub threshold: f64,
}

impl Default for PdgrsConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            threshold: 0.85,
        }
    }
}

impl PdgrsConfig {
    /// Checks ranges and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!(
                "threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        let mut warnings = Vec::new();
        if self.threshold <= 0.5 {
            warnings.push(format!(
                "threshold {} <= 0.5: both orderings of a pair can be accepted",
                self.threshold
            ));
        }
        Ok(warnings)
    }
}

/// `σ((r_hi − r_lo) / τ)`.
pub fn reward_gap_sigma(r_hi: f64, r_lo: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::input(format!("temperature must be > 0, got {temperature}")));
    }
    if !(r_hi.is_finite() && r_lo.is_finite()) {
        return Err(Error::input("non-finite reward"));
    }
    Ok(sigmoid((r_hi - r_lo) / temperature))
}

/// All accepted ordered pairs of one candidate set, in `(j, l)` order.
///
/// Pairs whose two responses are the same token sequence are never emitted;
/// for `η > 0.5` their gap of 0.5 is rejected anyway.
pub fn pdgrs_pairs(cands: &CandidateSet, cfg: &PdgrsConfig) -> Result<Vec<PreferenceTriple>> {
    cfg.validate()?;
    let k = cands.k();
    let mut out = Vec::new();
    for j in 0..k {
        for l in 0..k {
            if j == l {
                continue;
            }
            let g = reward_gap_sigma(cands.scored[j].reward, cands.scored[l].reward, cfg.temperature)?;
            if g > cfg.threshold {
                out.extend(cands.triple(j, l, Some(g.min(BELOW_ONE))));
            }
        }
    }
    Ok(out)
}

/// Concatenated PDGRS output over many prompts, in prompt order.
pub fn pdgrs_dataset(candidates: &[CandidateSet], cfg: &PdgrsConfig) -> Result<PreferenceDataset> {
    let mut triples = Vec::new();
    for c in candidates {
        triples.extend(pdgrs_pairs(c, cfg)?);
    }
    Ok(PreferenceDataset::new(triples))
}

/// Samples and scores `k` responses for every prompt. Prompt `i` uses
/// `stream.child(i)`, so results do not depend on scheduling.
pub fn generate_candidates(
    sft: &ToyLMParams,
    rm: &RewardModelParams,
    prompts: &[Prompt],
    gen: &GenerationConfig,
    stream: &RngStream,
) -> Result<Vec<CandidateSet>> {
    gen.validate()?;
    prompts
        .par_iter()
        .enumerate()
        .map(|(i, prompt)| {
            let at = |e: Error| Error::AtPrompt {
                index: i,
                source: Box::new(e),
            };
            let responses = sample_k_responses(sft, prompt, gen, &stream.child(i as u64)).map_err(at)?;
            let scored = responses
                .into_iter()
                .map(|response| {
                    let reward = rm.score(prompt, &response)?;
                    Ok(ScoredResponse { response, reward })
                })
                .collect::<Result<Vec<_>>>()
                .map_err(at)?;
            CandidateSet::new(prompt.clone(), scored).map_err(at)
        })
        .collect()
}

/// Re-scores existing candidates with a different reward model.
pub fn rescore(candidates: &[CandidateSet], rm: &RewardModelParams) -> Result<Vec<CandidateSet>> {
    candidates
        .par_iter()
        .map(|c| {
            let scored = c
                .scored
                .iter()
                .map(|s| {
                    Ok(ScoredResponse {
                        response: s.response.clone(),
                        reward: rm.score(&c.prompt, &s.response)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            CandidateSet::new(c.prompt.clone(), scored)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PdgrsOutput {
    pub dataset: PreferenceDataset,
    /// Per-prompt scored responses, for histogram analysis.
    pub candidates: Vec<CandidateSet>,
}

pub fn run_pdgrs(
    sft: &ToyLMParams,
    rm: &RewardModelParams,
    prompts: &[Prompt],
    gen: &GenerationConfig,
    cfg: &PdgrsConfig,
    stream: &RngStream,
) -> Result<PdgrsOutput> {
    if prompts.is_empty() {
        return Err(Error::input("no prompts"));
    }
    cfg.validate()?;
    let candidates = generate_candidates(sft, rm, prompts, gen, stream)?;
    let dataset = pdgrs_dataset(&candidates, cfg)?;
    Ok(PdgrsOutput { dataset, candidates })
}

/// Highest-reward response as `y_w`, lowest as `y_l`. `None` when the two are
/// the same token sequence.
pub fn select_best_vs_worst(cands: &CandidateSet) -> Option<PreferenceTriple> {
    cands.triple(cands.best_index(), cands.worst_index(), None)
}

/// Highest-reward response as `y_w`, `y_l` uniform over the other `k − 1`.
pub fn select_best_vs_random(cands: &CandidateSet, stream: &RngStream) -> Option<PreferenceTriple> {
    let best = cands.best_index();
    let mut pick = stream.rng().random_range(0..cands.k() - 1);
    if pick >= best {
        pick += 1;
    }
    cands.triple(best, pick, None)
}

/// `(x, highest-reward response)` for rejection-sampling fine-tuning.
pub fn select_rs_best(cands: &CandidateSet) -> SftRecord {
    SftRecord {
        prompt: cands.prompt.clone(),
        response: cands.scored[cands.best_index()].response.clone(),
    }
}

/// `n` triples drawn uniformly without replacement, kept in dataset order.
pub fn subsample(data: &PreferenceDataset, n: usize, stream: &RngStream) -> Result<PreferenceDataset> {
    if n > data.len() {
        return Err(Error::input(format!(
            "cannot subsample {n} from {} triples",
            data.len()
        )));
    }
    let mut idx = rand::seq::index::sample(&mut stream.rng(), data.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| data.triples()[i].clone()).collect())
}

/// Ways of turning candidates (or the original annotations) into training data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionPolicy {
    Proposed,
    BestVsWorst,
    BestVsRandom,
    OriginalAnnotation,
    RejectionSampling,
    SftOnly,
}

impl SelectionPolicy {
    pub const ALL: [SelectionPolicy; 6] = [
        SelectionPolicy::Proposed,
        SelectionPolicy::BestVsWorst,
        SelectionPolicy::BestVsRandom,
        SelectionPolicy::OriginalAnnotation,
        SelectionPolicy::RejectionSampling,
        SelectionPolicy::SftOnly,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SelectionPolicy::Proposed => "proposed",
            SelectionPolicy::BestVsWorst => "best-vs-worst",
            SelectionPolicy::BestVsRandom => "best-vs-random",
            SelectionPolicy::OriginalAnnotation => "original-annotation",
            SelectionPolicy::RejectionSampling => "rejection-sampling",
            SelectionPolicy::SftOnly => "sft-only",
        }
    }

    /// Whether the policy trains with DPO on preference triples.
    pub fn uses_dpo(&self) -> bool {
        matches!(
            self,
            SelectionPolicy::Proposed
                | SelectionPolicy::BestVsWorst
                | SelectionPolicy::BestVsRandom
                | SelectionPolicy::OriginalAnnotation
        )
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown selection policy `{s}`")))
    }
}

/// Counts reported by a selection pass.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub prompts: usize,
    pub emitted: usize,
    pub skipped: usize,
}

/// Applies a candidate-based policy to every prompt. Best-vs-random uses
/// `stream.child(i)` for prompt `i`.
pub fn select_pairs(
    policy: SelectionPolicy,
    candidates: &[CandidateSet],
    pdgrs: &PdgrsConfig,
    stream: &RngStream,
) -> Result<(PreferenceDataset, SelectionStats)> {
    let mut triples = Vec::new();
    let mut stats = SelectionStats {
        prompts: candidates.len(),
        ..Default::default()
    };
    for (i, c) in candidates.iter().enumerate() {
        let picked = match policy {
            SelectionPolicy::Proposed => pdgrs_pairs(c, pdgrs)?,
            SelectionPolicy::BestVsWorst => select_best_vs_worst(c).into_iter().collect(),
            SelectionPolicy::BestVsRandom => {
                select_best_vs_random(c, &stream.child(i as u64)).into_iter().collect()
            }
            other => {
                return Err(Error::config(format!(
                    "policy `{other}` does not select pairs from candidates"
                )))
            }
        };
        if picked.is_empty() {
            stats.skipped += 1;
        }
        stats.emitted += picked.len();
        triples.extend(picked);
    }
    Ok((PreferenceDataset::new(triples), stats))
}
