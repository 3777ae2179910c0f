//! In-process experiment grids with seed replication.
//!
//! Each seed builds the shared upstream artifacts once (task, data, SFT model,
//! both reward models, scored candidates) and then runs every grid cell
//! against them. All cells of a seed share the DPO and evaluation streams, so
//! differences between cells are not masked by sampling noise.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, RmVariant};
use crate::dpo::{train_dpo, DpoMetrics, Split};
use crate::error::{Error, Result};
use crate::optim::{train_sft, SftDataset};
use crate::pdgrs::{
    generate_candidates, rescore, select_pairs, select_rs_best, subsample, CandidateSet,
    PdgrsConfig, SelectionPolicy,
};
use crate::reward::{train_rm, PreferenceDataset, RewardModelParams, RmOutput};
use crate::synth::{eval_winrate, gen_preference_dataset, gen_sft_dataset, TaskSpec, WinRate};
use crate::toylm::{Prompt, RngStream, ToyLMParams};

/// Named streams of one seed. The CLI stages use the same names, so a staged
/// run and an in-process run with the same seed agree.
#[derive(Clone, Debug)]
pub struct SeedStreams {
    root: RngStream,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            root: RngStream::new(seed, "pipeline", 0),
        }
    }

    pub fn get(&self, name: &str) -> RngStream {
        self.root.derive(name)
    }
}

/// Data every cell of a seed starts from.
#[derive(Clone, Debug)]
pub struct Upstream {
    pub seed: u64,
    pub task: TaskSpec,
    pub sft_data: SftDataset,
    pub pool: PreferenceDataset,
    pub eval_prompts: Vec<Prompt>,
    pub sft: ToyLMParams,
    pub rm_rich: RewardModelParams,
    pub rm_narrow: RewardModelParams,
    pub candidates_rich: Vec<CandidateSet>,
    pub candidates_narrow: Vec<CandidateSet>,
}

impl Upstream {
    /// Original annotations for the generation prompts.
    pub fn original_pairs(&self, cfg: &ExperimentConfig) -> PreferenceDataset {
        self.pool.head(cfg.sizes.rm_prompts)
    }

    pub fn candidates(&self, rm: RmVariant) -> &[CandidateSet] {
        match rm {
            RmVariant::Rich => &self.candidates_rich,
            RmVariant::Narrow => &self.candidates_narrow,
        }
    }

    pub fn rm(&self, rm: RmVariant) -> &RewardModelParams {
        match rm {
            RmVariant::Rich => &self.rm_rich,
            RmVariant::Narrow => &self.rm_narrow,
        }
    }
}

pub(crate) fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name.into(),
        source: Box::new(e),
    })
}

pub fn synth_task(cfg: &ExperimentConfig, s: &SeedStreams) -> Result<TaskSpec> {
    cfg.task.build(&s.get("task"))
}

/// Task, demonstrations, preference pool and evaluation prompts.
pub fn synth_data(
    cfg: &ExperimentConfig,
    s: &SeedStreams,
) -> Result<(TaskSpec, SftDataset, PreferenceDataset, Vec<Prompt>)> {
    let task = synth_task(cfg, s)?;
    let sft = gen_sft_dataset(&task, cfg.sizes.sft, &cfg.annotator, &s.get("sft-data"))?;
    let pool = gen_preference_dataset(&task, cfg.sizes.preference_pool, &cfg.annotator, &s.get("preference-data"))?;
    let eval = task.prompts(cfg.sizes.eval_prompts, &s.get("eval-prompts"));
    Ok((task, sft, pool, eval))
}

pub fn fit_sft(cfg: &ExperimentConfig, task: &TaskSpec, data: &SftDataset, s: &SeedStreams) -> Result<ToyLMParams> {
    let init = ToyLMParams::zeros(task.vocab(), cfg.model.lm_context)?;
    Ok(train_sft(&init, data, &cfg.sft, &s.get("sft-train"))?.params)
}

/// One reward model. The narrow one sees the leading `narrow_fraction` of
/// the pool.
pub fn fit_rm(
    cfg: &ExperimentConfig,
    task: &TaskSpec,
    pool: &PreferenceDataset,
    variant: RmVariant,
    s: &SeedStreams,
) -> Result<RmOutput> {
    let init = RewardModelParams::zeros(task.vocab(), cfg.model.rm_context)?;
    match variant {
        RmVariant::Rich => train_rm(&init, pool, &cfg.rm, &s.get("rm-rich")),
        RmVariant::Narrow => train_rm(&init, &pool.head(cfg.narrow_size()), &cfg.rm, &s.get("rm-narrow")),
    }
}

pub fn fit_rms(
    cfg: &ExperimentConfig,
    task: &TaskSpec,
    pool: &PreferenceDataset,
    s: &SeedStreams,
) -> Result<(RewardModelParams, RewardModelParams)> {
    let rich = fit_rm(cfg, task, pool, RmVariant::Rich, s)?.params;
    let narrow = fit_rm(cfg, task, pool, RmVariant::Narrow, s)?.params;
    Ok((rich, narrow))
}

pub fn generation_prompts(cfg: &ExperimentConfig, pool: &PreferenceDataset) -> Vec<Prompt> {
    pool.head(cfg.sizes.rm_prompts).prompts()
}

pub fn generate(
    cfg: &ExperimentConfig,
    sft: &ToyLMParams,
    rm: &RewardModelParams,
    prompts: &[Prompt],
    s: &SeedStreams,
) -> Result<Vec<CandidateSet>> {
    generate_candidates(sft, rm, prompts, &cfg.generation, &s.get("generate"))
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Upstream> {
    cfg.validate()?;
    let s = SeedStreams::new(seed);
    let (task, sft_data, pool, eval_prompts) = stage("synth", synth_data(cfg, &s))?;
    let sft = stage("sft", fit_sft(cfg, &task, &sft_data, &s))?;
    let (rm_rich, rm_narrow) = stage("rm", fit_rms(cfg, &task, &pool, &s))?;
    let prompts = generation_prompts(cfg, &pool);
    let candidates_rich = stage("generate", generate(cfg, &sft, &rm_rich, &prompts, &s))?;
    let candidates_narrow = stage("generate", rescore(&candidates_rich, &rm_narrow))?;
    Ok(Upstream {
        seed,
        task,
        sft_data,
        pool,
        eval_prompts,
        sft,
        rm_rich,
        rm_narrow,
        candidates_rich,
        candidates_narrow,
    })
}

/// One point of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub policy: SelectionPolicy,
    /// `None` for policies that never consult a reward model.
    pub rm_variant: Option<RmVariant>,
    pub threshold: Option<f64>,
    pub temperature: Option<f64>,
    /// Training data subsampled to one triple per generation prompt.
    pub size_controlled: bool,
}

impl Cell {
    fn key(&self) -> String {
        format!("{self:?}")
    }
}

/// The grid of `cfg`. PDGRS thresholds, temperatures and size control only
/// vary the proposed policy; the original annotations and the SFT model do
/// not depend on the reward model.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for policy in cfg.policies() {
        let base = Cell {
            policy,
            rm_variant: None,
            threshold: None,
            temperature: None,
            size_controlled: false,
        };
        match policy {
            SelectionPolicy::Proposed => {
                for rm in cfg.rm_variants() {
                    for eta in cfg.thresholds() {
                        for tau in cfg.temperatures() {
                            for sc in cfg.size_control() {
                                out.push(Cell {
                                    rm_variant: Some(rm),
                                    threshold: Some(eta),
                                    temperature: Some(tau),
                                    size_controlled: sc,
                                    ..base
                                });
                            }
                        }
                    }
                }
            }
            SelectionPolicy::BestVsWorst
            | SelectionPolicy::BestVsRandom
            | SelectionPolicy::RejectionSampling => {
                for rm in cfg.rm_variants() {
                    out.push(Cell {
                        rm_variant: Some(rm),
                        ..base
                    });
                }
            }
            SelectionPolicy::OriginalAnnotation | SelectionPolicy::SftOnly => out.push(base),
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub seed: u64,
    /// Triples (or demonstrations, for rejection sampling) used for training.
    pub sample_size: usize,
    pub win_rate: WinRate,
    /// Held-out DPO diagnostics after the final epoch.
    pub dpo: Option<DpoMetrics>,
    #[serde(skip)]
    pub policy: Option<ToyLMParams>,
}

/// Training data for a DPO cell.
pub fn cell_pairs(cfg: &ExperimentConfig, up: &Upstream, cell: &Cell) -> Result<PreferenceDataset> {
    let s = SeedStreams::new(up.seed);
    let data = match cell.policy {
        SelectionPolicy::OriginalAnnotation => up.original_pairs(cfg),
        p => {
            let rm = cell.rm_variant.unwrap_or(RmVariant::Rich);
            let pdgrs = PdgrsConfig {
                threshold: cell.threshold.unwrap_or(cfg.pdgrs.threshold),
                temperature: cell.temperature.unwrap_or(cfg.pdgrs.temperature),
            };
            select_pairs(p, up.candidates(rm), &pdgrs, &s.get("select"))?.0
        }
    };
    if cell.size_controlled && data.len() > cfg.sizes.rm_prompts {
        subsample(&data, cfg.sizes.rm_prompts, &s.get("subsample"))
    } else {
        Ok(data)
    }
}

pub fn run_cell(cfg: &ExperimentConfig, up: &Upstream, cell: &Cell) -> Result<CellResult> {
    let s = SeedStreams::new(up.seed);
    let (policy, sample_size, dpo) = match cell.policy {
        SelectionPolicy::SftOnly => (up.sft.clone(), 0, None),
        SelectionPolicy::RejectionSampling => {
            let rm = cell.rm_variant.unwrap_or(RmVariant::Rich);
            let records = up.candidates(rm).iter().map(select_rs_best).collect();
            let data = SftDataset::new(records)?;
            let out = stage("rs-sft", train_sft(&up.sft, &data, &cfg.rs_sft, &s.get("rs-sft")))?;
            (out.params, data.len(), None)
        }
        _ => {
            let pairs = stage("select", cell_pairs(cfg, up, cell))?;
            if pairs.is_empty() {
                // Nothing cleared the threshold: no update, the policy stays the reference.
                (up.sft.clone(), 0, None)
            } else {
                let out = stage("dpo", train_dpo(&up.sft, &pairs, &cfg.dpo, &s.get("dpo")))?;
                let m = out.final_metrics(Split::Eval).or(out.final_metrics(Split::Train));
                (out.policy, pairs.len(), m)
            }
        }
    };
    let win_rate = stage(
        "eval",
        eval_winrate(&policy, &up.sft, &up.task, &up.eval_prompts, &cfg.generation, &s.get("eval")),
    )?;
    Ok(CellResult {
        cell: *cell,
        seed: up.seed,
        sample_size,
        win_rate,
        dpo,
        policy: Some(policy),
    })
}

/// All cells for one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<CellResult>> {
    let up = prepare(cfg, seed)?;
    cells(cfg).iter().map(|c| run_cell(cfg, &up, c)).collect()
}

/// One CSV row: a cell aggregated over seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: Cell,
    pub seeds: usize,
    pub sample_size: f64,
    pub win_rate: f64,
    /// Binomial standard error over all evaluated prompts of all seeds.
    pub win_rate_stderr: f64,
    pub dpo_reward_accuracy: Option<f64>,
    pub dpo_reward_margin: Option<f64>,
}

pub fn aggregate(results: &[CellResult]) -> Vec<ResultRow> {
    let mut keys: Vec<(String, Cell)> = Vec::new();
    for r in results {
        if !keys.iter().any(|(k, _)| *k == r.cell.key()) {
            keys.push((r.cell.key(), r.cell));
        }
    }
    keys.into_iter()
        .map(|(k, cell)| {
            let rs: Vec<&CellResult> = results.iter().filter(|r| r.cell.key() == k).collect();
            let n = rs.len() as f64;
            let mean = |f: &dyn Fn(&CellResult) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            let win_rate = mean(&|r| r.win_rate.rate);
            let prompts: usize = rs.iter().map(|r| r.win_rate.n).sum();
            let dpo: Vec<DpoMetrics> = rs.iter().filter_map(|r| r.dpo).collect();
            let dpo_mean = |f: fn(&DpoMetrics) -> f64| {
                (!dpo.is_empty()).then(|| dpo.iter().map(f).sum::<f64>() / dpo.len() as f64)
            };
            ResultRow {
                cell,
                seeds: rs.len(),
                sample_size: mean(&|r| r.sample_size as f64),
                win_rate,
                win_rate_stderr: (win_rate * (1.0 - win_rate) / prompts as f64).sqrt(),
                dpo_reward_accuracy: dpo_mean(|m| m.reward_accuracy),
                dpo_reward_margin: dpo_mean(|m| m.reward_margin),
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ExperimentResults {
    pub per_seed: Vec<CellResult>,
    pub rows: Vec<ResultRow>,
}

/// Runs the grid for seeds `cfg.seed .. cfg.seed + replicates`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let mut per_seed = Vec::new();
    for r in 0..cfg.replicates as u64 {
        per_seed.extend(run_seed(cfg, cfg.seed + r)?);
    }
    let rows = aggregate(&per_seed);
    Ok(ExperimentResults { per_seed, rows })
}

pub const CSV_HEADER: &str =
    "policy,rm_variant,sample_size,eta,tau,win_rate,win_rate_stderr,dpo_reward_accuracy,dpo_reward_margin";

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Rows as CSV. Size-controlled rows carry the policy name with a
/// `+size-controlled` suffix.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let c = &r.cell;
        let policy = if c.size_controlled {
            format!("{}+size-controlled", c.policy)
        } else {
            c.policy.to_string()
        };
        writeln!(
            s,
            "{policy},{},{},{},{},{:.6},{:.6},{},{}",
            opt(c.rm_variant.map(|v| v.name())),
            r.sample_size,
            opt(c.threshold),
            opt(c.temperature),
            r.win_rate,
            r.win_rate_stderr,
            opt(r.dpo_reward_accuracy.map(|x| format!("{x:.6}"))),
            opt(r.dpo_reward_margin.map(|x| format!("{x:.6}"))),
        )
        .expect("writing to a String");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shapes() {
        let c = ExperimentConfig::preset("threshold-ablation").unwrap();
        let eta: Vec<_> = cells(&c).iter().map(|c| c.threshold.unwrap()).collect();
        assert_eq!(eta, vec![0.80, 0.85, 0.90]);
        let c = ExperimentConfig::preset("policy-comparison").unwrap();
        assert_eq!(cells(&c).len(), 6);
        let c = ExperimentConfig::preset("size-controlled").unwrap();
        let sc: Vec<_> = cells(&c).iter().map(|c| c.size_controlled).collect();
        assert_eq!(sc, vec![false, true]);
        let c = ExperimentConfig::preset("rm-ablation").unwrap();
        assert_eq!(cells(&c).len(), 4);
    }

    #[test]
    fn smoke_preset_runs_every_policy() {
        let cfg = ExperimentConfig::preset("smoke").unwrap();
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.rows.len(), 6);
        for r in &res.rows {
            assert!((0.0..=1.0).contains(&r.win_rate));
        }
        let csv = results_csv(&res.rows);
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with(CSV_HEADER));
    }
}
