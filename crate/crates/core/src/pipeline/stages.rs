//! File-based pipeline stages.
//!
//! Each stage reads its inputs from the run directory, writes its outputs
//! next to them and records both in `manifest.json`. Stages use the same
//! named seed streams as the in-process experiment, so a staged run
//! reproduces the corresponding experiment cell exactly.
//!
//! Artifacts:
//!
//! ```text
//! synth       task.json sft.jsonl preference.jsonl eval_prompts.jsonl
//! sft         sft.ckpt sft_loss.csv
//! rm          rm_<variant>.ckpt rm_<variant>.jsonl
//! generate    gen_<variant>.jsonl
//! pdgrs       pairs_proposed-<variant>.jsonl
//! select      pairs_<label>.jsonl
//! dpo         policy_<label>.ckpt dpo_<label>.csv dpo_<label>.jsonl
//! rs-sft      policy_rejection-sampling-<variant>.ckpt
//! eval        eval_<label>.json
//! histogram   histogram_<variant>.csv histogram_<variant>.json
//! experiment  results.csv results.jsonl
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, RmVariant};
use super::experiment::{
    fit_rm, generate, generation_prompts, results_csv, run_experiment, stage, synth_data, ExperimentResults,
    SeedStreams,
};
use super::histogram::{gap_histogram, GapSummary, DEFAULT_BINS};
use super::manifest::RunManifest;
use crate::dpo::{curves_to_csv, train_dpo};
use crate::error::{Error, Result};
use crate::io::{
    load_lm, load_rm, read_generations, read_json, read_preferences, read_prompts, read_sft, save_lm, save_rm,
    write_json, write_jsonl, write_preferences, write_prompts, write_sft, write_text,
};
use crate::optim::{train_sft, SftDataset};
use crate::pdgrs::{select_pairs, select_rs_best, CandidateSet, GenerationRecord, SelectionPolicy, SelectionStats};
use crate::reward::PreferenceDataset;
use crate::synth::{eval_winrate, TaskSpec, WinRate};
use crate::toylm::{ToyLMParams, Vocab};

pub const TASK: &str = "task.json";
pub const SFT_DATA: &str = "sft.jsonl";
pub const PREFERENCES: &str = "preference.jsonl";
pub const EVAL_PROMPTS: &str = "eval_prompts.jsonl";
pub const SFT_CKPT: &str = "sft.ckpt";
pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSONL: &str = "results.jsonl";

pub fn rm_ckpt(v: RmVariant) -> String {
    format!("rm_{}.ckpt", v.name())
}

pub fn generations(v: RmVariant) -> String {
    format!("gen_{}.jsonl", v.name())
}

/// Name of a policy's artifacts: `original-annotation`, `sft`, or
/// `<policy>-<variant>`.
pub fn label(policy: SelectionPolicy, v: RmVariant) -> String {
    match policy {
        SelectionPolicy::OriginalAnnotation => policy.name().to_string(),
        SelectionPolicy::SftOnly => "sft".to_string(),
        p => format!("{}-{}", p.name(), v.name()),
    }
}

pub fn pairs_file(label: &str) -> String {
    format!("pairs_{label}.jsonl")
}

pub fn policy_ckpt(label: &str) -> String {
    format!("policy_{label}.ckpt")
}

/// A run directory and the config its stages use. `cfg.policy`,
/// `cfg.rm_variant` and `cfg.pdgrs` select what the per-policy stages do.
#[derive(Clone, Debug)]
pub struct Run {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
}

/// What `eval` writes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub candidate: String,
    pub baseline: String,
    pub seed: u64,
    pub win_rate: WinRate,
}

/// What `pdgrs` and `select` report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectReport {
    pub output: PathBuf,
    pub stats: SelectionStats,
}

impl Run {
    pub fn new(cfg: ExperimentConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, dir: dir.into() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn streams(&self) -> SeedStreams {
        SeedStreams::new(self.cfg.seed)
    }

    fn label(&self) -> String {
        label(self.cfg.policy, self.cfg.rm_variant)
    }

    fn finish(&self, stage: &str, inputs: &[&str], outputs: &[&str], t0: Instant) -> Result<()> {
        let mut m = RunManifest::load_or_default(&self.dir)?;
        m.record(&self.dir, stage, &self.cfg.hash(), inputs, outputs, t0.elapsed())?;
        m.save(&self.dir)
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        RunManifest::load_or_default(&self.dir)
    }

    pub fn task(&self) -> Result<TaskSpec> {
        read_json(&self.path(TASK))
    }

    /// The task's vocabulary, or the configured one when the directory has no
    /// task yet (e.g. a standalone generation file).
    fn vocab(&self) -> Result<Vocab> {
        if self.path(TASK).exists() {
            Ok(self.task()?.vocab())
        } else {
            Vocab::new(self.cfg.task.vocab_size)
        }
    }

    fn pool(&self, vocab: &Vocab) -> Result<PreferenceDataset> {
        read_preferences(&self.path(PREFERENCES), vocab)
    }

    fn sft(&self) -> Result<ToyLMParams> {
        load_lm(&self.path(SFT_CKPT))
    }

    fn candidates(&self, gen: &Path, vocab: &Vocab) -> Result<Vec<CandidateSet>> {
        read_generations(gen, vocab)?
            .into_iter()
            .map(GenerationRecord::into_candidates)
            .collect()
    }

    pub fn synth(&self) -> Result<()> {
        let t0 = Instant::now();
        let (task, sft, pool, eval) = synth_data(&self.cfg, &self.streams())?;
        write_json(&self.path(TASK), &task)?;
        write_sft(&self.path(SFT_DATA), &sft)?;
        write_preferences(&self.path(PREFERENCES), &pool)?;
        write_prompts(&self.path(EVAL_PROMPTS), &eval)?;
        self.finish("synth", &[], &[TASK, SFT_DATA, PREFERENCES, EVAL_PROMPTS], t0)
    }

    pub fn sft_stage(&self) -> Result<Vec<f64>> {
        let t0 = Instant::now();
        let task = self.task()?;
        let data = read_sft(&self.path(SFT_DATA), &task.vocab())?;
        let init = ToyLMParams::zeros(task.vocab(), self.cfg.model.lm_context)?;
        let out = train_sft(&init, &data, &self.cfg.sft, &self.streams().get("sft-train"))?;
        save_lm(&self.path(SFT_CKPT), &out.params)?;
        let mut csv = String::from("epoch,loss\n");
        for (i, l) in out.epoch_losses.iter().enumerate() {
            csv.push_str(&format!("{},{l}\n", i + 1));
        }
        write_text(&self.path("sft_loss.csv"), &csv)?;
        self.finish("sft", &[TASK, SFT_DATA], &[SFT_CKPT, "sft_loss.csv"], t0)?;
        Ok(out.epoch_losses)
    }

    /// Trains both reward models.
    pub fn rm(&self) -> Result<()> {
        let t0 = Instant::now();
        let task = self.task()?;
        let pool = self.pool(&task.vocab())?;
        let mut outputs = Vec::new();
        for v in [RmVariant::Rich, RmVariant::Narrow] {
            let out = fit_rm(&self.cfg, &task, &pool, v, &self.streams())?;
            save_rm(&self.path(&rm_ckpt(v)), &out.params)?;
            let metrics = format!("rm_{}.jsonl", v.name());
            write_jsonl(&self.path(&metrics), &out.epochs)?;
            outputs.push(rm_ckpt(v));
            outputs.push(metrics);
        }
        let outputs: Vec<&str> = outputs.iter().map(String::as_str).collect();
        self.finish("rm", &[TASK, PREFERENCES], &outputs, t0)
    }

    /// Samples and scores candidates with `cfg.rm_variant`.
    pub fn generate(&self) -> Result<PathBuf> {
        let t0 = Instant::now();
        let v = self.cfg.rm_variant;
        let task = self.task()?;
        let pool = self.pool(&task.vocab())?;
        let rm = load_rm(&self.path(&rm_ckpt(v)))?;
        let prompts = generation_prompts(&self.cfg, &pool);
        let cands = generate(&self.cfg, &self.sft()?, &rm, &prompts, &self.streams())?;
        let rows: Vec<GenerationRecord> = cands
            .iter()
            .enumerate()
            .map(|(i, c)| GenerationRecord::from_candidates(i, c))
            .collect();
        let out = generations(v);
        write_jsonl(&self.path(&out), &rows)?;
        self.finish(
            &format!("generate:{}", v.name()),
            &[TASK, PREFERENCES, SFT_CKPT, &rm_ckpt(v)],
            &[&out],
            t0,
        )?;
        Ok(self.path(&out))
    }

    /// PDGRS pairs from `gen` (default: this variant's generation file).
    pub fn pdgrs(&self, gen: Option<&Path>) -> Result<SelectReport> {
        let run = Run {
            cfg: ExperimentConfig {
                policy: SelectionPolicy::Proposed,
                ..self.cfg.clone()
            },
            dir: self.dir.clone(),
        };
        run.select_from(gen, "pdgrs")
    }

    /// Training pairs for `cfg.policy`.
    pub fn select(&self, gen: Option<&Path>) -> Result<SelectReport> {
        self.select_from(gen, "select")
    }

    fn select_from(&self, gen: Option<&Path>, stage_name: &str) -> Result<SelectReport> {
        let t0 = Instant::now();
        let policy = self.cfg.policy;
        let label = self.label();
        let out = pairs_file(&label);
        let vocab = self.vocab()?;
        let (data, stats, input) = match policy {
            SelectionPolicy::OriginalAnnotation => {
                let data = self.pool(&vocab)?.head(self.cfg.sizes.rm_prompts);
                let stats = SelectionStats {
                    prompts: data.len(),
                    emitted: data.len(),
                    skipped: 0,
                };
                (data, stats, self.path(PREFERENCES))
            }
            SelectionPolicy::RejectionSampling | SelectionPolicy::SftOnly => {
                return Err(Error::Config(format!(
                    "policy `{policy}` does not produce preference pairs"
                )))
            }
            p => {
                let gen = gen.map(Path::to_path_buf).unwrap_or(self.path(&generations(self.cfg.rm_variant)));
                let cands = self.candidates(&gen, &vocab)?;
                let (data, stats) = select_pairs(p, &cands, &self.cfg.pdgrs, &self.streams().get("select"))?;
                (data, stats, gen)
            }
        };
        write_preferences(&self.path(&out), &data)?;
        let input = relative(&self.dir, &input);
        let inputs: Vec<&str> = input.iter().map(String::as_str).collect();
        self.finish(&format!("{stage_name}:{label}"), &inputs, &[&out], t0)?;
        Ok(SelectReport {
            output: self.path(&out),
            stats,
        })
    }

    /// DPO on `pairs_<label>.jsonl` starting from the SFT model.
    pub fn dpo(&self) -> Result<PathBuf> {
        let t0 = Instant::now();
        let label = self.label();
        let task = self.task()?;
        let pairs = pairs_file(&label);
        let data = read_preferences(&self.path(&pairs), &task.vocab())?;
        let out = train_dpo(&self.sft()?, &data, &self.cfg.dpo, &self.streams().get("dpo"))?;
        let ckpt = policy_ckpt(&label);
        let (csv, jsonl) = (format!("dpo_{label}.csv"), format!("dpo_{label}.jsonl"));
        save_lm(&self.path(&ckpt), &out.policy)?;
        write_text(&self.path(&csv), &curves_to_csv(&out.curves))?;
        write_jsonl(&self.path(&jsonl), &out.curves)?;
        self.finish(&format!("dpo:{label}"), &[TASK, SFT_CKPT, &pairs], &[&ckpt, &csv, &jsonl], t0)?;
        Ok(self.path(&ckpt))
    }

    /// Rejection-sampling fine-tuning on the best candidate per prompt.
    pub fn rs_sft(&self, gen: Option<&Path>) -> Result<PathBuf> {
        let t0 = Instant::now();
        let v = self.cfg.rm_variant;
        let gen = gen.map(Path::to_path_buf).unwrap_or(self.path(&generations(v)));
        let vocab = self.vocab()?;
        let records = self.candidates(&gen, &vocab)?.iter().map(select_rs_best).collect();
        let data = SftDataset::new(records)?;
        let out = train_sft(&self.sft()?, &data, &self.cfg.rs_sft, &self.streams().get("rs-sft"))?;
        let ckpt = policy_ckpt(&label(SelectionPolicy::RejectionSampling, v));
        save_lm(&self.path(&ckpt), &out.params)?;
        let input = relative(&self.dir, &gen);
        let mut inputs: Vec<&str> = vec![SFT_CKPT];
        inputs.extend(input.iter().map(String::as_str));
        self.finish(&format!("rs-sft:{}", v.name()), &inputs, &[&ckpt], t0)?;
        Ok(self.path(&ckpt))
    }

    /// Oracle win rate of `candidate` (default: this policy's checkpoint)
    /// against `baseline` (default: the SFT model) on the evaluation prompts.
    pub fn eval(&self, candidate: Option<&Path>, baseline: Option<&Path>) -> Result<EvalReport> {
        let t0 = Instant::now();
        let task = self.task()?;
        let prompts = read_prompts(&self.path(EVAL_PROMPTS), &task.vocab())?;
        let default_candidate = match self.cfg.policy {
            SelectionPolicy::SftOnly => self.path(SFT_CKPT),
            _ => self.path(&policy_ckpt(&self.label())),
        };
        let cand_path = candidate.map(Path::to_path_buf).unwrap_or(default_candidate);
        let base_path = baseline.map(Path::to_path_buf).unwrap_or(self.path(SFT_CKPT));
        let (cand, base) = (load_lm(&cand_path)?, load_lm(&base_path)?);
        let win_rate = stage(
            "eval",
            eval_winrate(&cand, &base, &task, &prompts, &self.cfg.generation, &self.streams().get("eval")),
        )?;
        let name = match candidate {
            Some(p) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            None => self.label(),
        };
        let out = format!("eval_{name}.json");
        let report = EvalReport {
            candidate: cand_path.display().to_string(),
            baseline: base_path.display().to_string(),
            seed: self.cfg.seed,
            win_rate,
        };
        write_json(&self.path(&out), &report)?;
        let (c, b) = (relative(&self.dir, &cand_path), relative(&self.dir, &base_path));
        let mut inputs: Vec<&str> = vec![TASK, EVAL_PROMPTS];
        inputs.extend(c.iter().chain(b.iter()).map(String::as_str));
        self.finish(&format!("eval:{name}"), &inputs, &[&out], t0)?;
        Ok(report)
    }

    /// Reward-gap histogram of a generation file.
    pub fn histogram(&self, gen: Option<&Path>) -> Result<GapSummary> {
        let t0 = Instant::now();
        let v = self.cfg.rm_variant;
        let gen = gen.map(Path::to_path_buf).unwrap_or(self.path(&generations(v)));
        let vocab = self.vocab()?;
        let h = gap_histogram(&self.candidates(&gen, &vocab)?, &self.cfg.pdgrs, DEFAULT_BINS)?;
        let stem = gen
            .file_stem()
            .map(|s| s.to_string_lossy().trim_start_matches("gen_").to_string())
            .unwrap_or_else(|| v.name().to_string());
        let (csv, json) = (format!("histogram_{stem}.csv"), format!("histogram_{stem}.json"));
        write_text(&self.path(&csv), &h.to_csv())?;
        write_json(&self.path(&json), &h.summary)?;
        let input = relative(&self.dir, &gen);
        let inputs: Vec<&str> = input.iter().map(String::as_str).collect();
        self.finish(&format!("histogram:{stem}"), &inputs, &[&csv, &json], t0)?;
        Ok(h.summary)
    }

    /// Runs the configured grid in process and writes the results table.
    pub fn experiment(&self) -> Result<ExperimentResults> {
        let t0 = Instant::now();
        let res = run_experiment(&self.cfg)?;
        write_text(&self.path(RESULTS_CSV), &results_csv(&res.rows))?;
        write_jsonl(&self.path(RESULTS_JSONL), &res.per_seed)?;
        write_json(&self.path("config.json"), &self.cfg)?;
        self.finish("experiment", &[], &[RESULTS_CSV, RESULTS_JSONL, "config.json"], t0)?;
        Ok(res)
    }

    /// Every stage for every policy and both reward models, for one seed.
    pub fn all(&self) -> Result<Vec<EvalReport>> {
        stage("synth", self.synth())?;
        stage("sft", self.sft_stage())?;
        stage("rm", self.rm())?;
        let mut reports = Vec::new();
        for v in [RmVariant::Rich, RmVariant::Narrow] {
            let at = self.with(SelectionPolicy::Proposed, v);
            stage("generate", at.generate())?;
            stage("histogram", at.histogram(None))?;
        }
        for policy in SelectionPolicy::ALL {
            let variants: &[RmVariant] = match policy {
                SelectionPolicy::OriginalAnnotation | SelectionPolicy::SftOnly => &[RmVariant::Rich],
                _ => &[RmVariant::Rich, RmVariant::Narrow],
            };
            for &v in variants {
                let at = self.with(policy, v);
                match policy {
                    SelectionPolicy::SftOnly => {}
                    SelectionPolicy::RejectionSampling => {
                        stage("rs-sft", at.rs_sft(None))?;
                    }
                    SelectionPolicy::Proposed => {
                        let r = stage("pdgrs", at.pdgrs(None))?;
                        if r.stats.emitted == 0 {
                            continue;
                        }
                        stage("dpo", at.dpo())?;
                    }
                    _ => {
                        stage("select", at.select(None))?;
                        stage("dpo", at.dpo())?;
                    }
                }
                reports.push(stage("eval", at.eval(None, None))?);
            }
        }
        self.manifest()?.verify(&self.dir)?;
        Ok(reports)
    }

    /// The same run directory with a different policy and reward model.
    pub fn with(&self, policy: SelectionPolicy, v: RmVariant) -> Run {
        Run {
            cfg: ExperimentConfig {
                policy,
                rm_variant: v,
                ..self.cfg.clone()
            },
            dir: self.dir.clone(),
        }
    }
}

/// `path` relative to `dir` when it lies inside it; files elsewhere are not
/// tracked by the manifest.
fn relative(dir: &Path, path: &Path) -> Option<String> {
    path.strip_prefix(dir).ok().map(|p| p.to_string_lossy().into_owned())
}
