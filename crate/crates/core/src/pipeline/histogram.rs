//! Distribution of temperature-scaled reward gaps over candidate pairs.
//!
//! Every unordered pair `{j, l}` of a prompt's candidates contributes one
//! value `σ(|r_j − r_l| / τ)`, i.e. the gap in its winning orientation, so all
//! values lie in `[0.5, 1]`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdgrs::{reward_gap_sigma, CandidateSet, PdgrsConfig};

pub const DEFAULT_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Summary written next to the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub pairs: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// η, drawn as the cut line.
    pub threshold: f64,
    pub temperature: f64,
    /// Share of pairs with gap strictly above η.
    pub fraction_above_threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapHistogram {
    pub bins: Vec<Bin>,
    pub summary: GapSummary,
}

/// Gaps of all unordered pairs, prompt by prompt.
pub fn unordered_gaps(candidates: &[CandidateSet], temperature: f64) -> Result<Vec<f64>> {
    let mut gaps = Vec::new();
    for c in candidates {
        let r = c.rewards();
        for j in 0..r.len() {
            for l in j + 1..r.len() {
                let (hi, lo) = if r[j] >= r[l] { (r[j], r[l]) } else { (r[l], r[j]) };
                gaps.push(reward_gap_sigma(hi, lo, temperature)?);
            }
        }
    }
    Ok(gaps)
}

/// `n_bins` equal bins over `[0.5, 1]`; the last bin is closed on the right.
pub fn gap_histogram(candidates: &[CandidateSet], cfg: &PdgrsConfig, n_bins: usize) -> Result<GapHistogram> {
    if candidates.is_empty() {
        return Err(Error::input("generation artifact has no prompts"));
    }
    if n_bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    cfg.validate()?;
    let gaps = unordered_gaps(candidates, cfg.temperature)?;
    let width = 0.5 / n_bins as f64;
    let mut bins: Vec<Bin> = (0..n_bins)
        .map(|i| Bin {
            lo: 0.5 + i as f64 * width,
            hi: if i + 1 == n_bins { 1.0 } else { 0.5 + (i + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &g in &gaps {
        let i = (((g - 0.5) / width) as usize).min(n_bins - 1);
        bins[i].count += 1;
    }
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n;
    let above = gaps.iter().filter(|&&g| g > cfg.threshold).count();
    Ok(GapHistogram {
        bins,
        summary: GapSummary {
            pairs: gaps.len(),
            mean,
            std: var.sqrt(),
            threshold: cfg.threshold,
            temperature: cfg.temperature,
            fraction_above_threshold: above as f64 / n,
        },
    })
}

impl GapHistogram {
    /// `bin_lo,bin_hi,count` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for b in &self.bins {
            writeln!(s, "{:.4},{:.4},{}", b.lo, b.hi, b.count).expect("writing to a String");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdgrs::ScoredResponse;
    use crate::toylm::{Prompt, Response, Vocab};

    fn cands(rewards: &[f64]) -> CandidateSet {
        let v = Vocab::new(8).unwrap();
        let scored = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| ScoredResponse {
                response: Response::new(vec![4 + (i as u32 % 4), 2], &v).unwrap(),
                reward: r,
            })
            .collect();
        CandidateSet::new(Prompt::new(vec![1, 4, 3], &v).unwrap(), scored).unwrap()
    }

    #[test]
    fn equal_rewards_fill_the_first_bin() {
        let h = gap_histogram(&[cands(&[0.3; 4])], &PdgrsConfig::default(), 10).unwrap();
        assert_eq!(h.bins[0].count, 6);
        assert!(h.bins[1..].iter().all(|b| b.count == 0));
        assert_eq!(h.summary.mean, 0.5);
        assert_eq!(h.summary.std, 0.0);
        assert_eq!(h.summary.fraction_above_threshold, 0.0);
    }

    #[test]
    fn counts_cover_every_unordered_pair() {
        let data = [cands(&[2.0, 0.5, -1.0]), cands(&[0.0, 10.0, 3.0, 1.0, -4.0])];
        let h = gap_histogram(&data, &PdgrsConfig::default(), DEFAULT_BINS).unwrap();
        assert_eq!(h.bins.iter().map(|b| b.count).sum::<usize>(), 3 + 10);
        assert_eq!(h.summary.pairs, 13);
        assert_eq!(h.bins.last().unwrap().hi, 1.0);
    }

    #[test]
    fn fraction_above_matches_pdgrs_count() {
        let data = [cands(&[2.0, 0.5, -1.0])];
        let cfg = PdgrsConfig::default();
        let h = gap_histogram(&data, &cfg, DEFAULT_BINS).unwrap();
        let accepted = crate::pdgrs::pdgrs_dataset(&data, &cfg).unwrap().len();
        assert_eq!(h.summary.fraction_above_threshold, accepted as f64 / 3.0);
    }

    #[test]
    fn empty_artifact_is_rejected() {
        assert!(gap_histogram(&[], &PdgrsConfig::default(), DEFAULT_BINS).is_err());
    }
}
