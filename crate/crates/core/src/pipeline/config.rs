//! Experiment configuration and named presets.
//!
//! The JSON schema mirrors [`ExperimentConfig`]; every field has a default, so
//! a config file only needs the values it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dpo::DpoConfig;
use crate::error::{Error, Result};
use crate::io::{read_json, sha256_hex};
use crate::optim::{ScheduleKind, TrainConfig};
use crate::pdgrs::{PdgrsConfig, SelectionPolicy};
use crate::synth::{AnnotatorConfig, TaskSpec};
use crate::toylm::{GenerationConfig, RngStream, Vocab};

/// Which reward model scores the candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RmVariant {
    /// Trained on the full preference pool.
    Rich,
    /// Trained on `narrow_fraction` of the pool.
    Narrow,
}

impl RmVariant {
    pub fn name(&self) -> &'static str {
        match self {
            RmVariant::Rich => "rich",
            RmVariant::Narrow => "narrow",
        }
    }
}

impl std::str::FromStr for RmVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rich" => Ok(RmVariant::Rich),
            "narrow" => Ok(RmVariant::Narrow),
            _ => Err(Error::config(format!("unknown reward model variant `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub vocab_size: usize,
    pub prompt_len_min: usize,
    pub prompt_len_max: usize,
    pub length_penalty: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            prompt_len_min: 6,
            prompt_len_max: 6,
            length_penalty: TaskSpec::DEFAULT_LENGTH_PENALTY,
        }
    }
}

impl TaskConfig {
    /// Task with a permutation drawn from `stream`.
    pub fn build(&self, stream: &RngStream) -> Result<TaskSpec> {
        TaskSpec::random(
            Vocab::new(self.vocab_size)?,
            (self.prompt_len_min, self.prompt_len_max),
            self.length_penalty,
            stream,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSizes {
    /// Demonstrations for SFT.
    pub sft: usize,
    /// Annotated triples used to train the rich reward model.
    pub preference_pool: usize,
    /// Leading pool triples whose prompts feed candidate generation and whose
    /// labels form the original-annotation baseline.
    pub rm_prompts: usize,
    /// Held-out prompts for win-rate evaluation.
    pub eval_prompts: usize,
    /// Share of the pool seen by the narrow reward model.
    pub narrow_fraction: f64,
}

impl Default for DataSizes {
    fn default() -> Self {
        Self {
            sft: 500,
            preference_pool: 2000,
            rm_prompts: 200,
            eval_prompts: 300,
            narrow_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub lm_context: usize,
    pub rm_context: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lm_context: 7,
            rm_context: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Number of seeds `seed, seed + 1, ..` an experiment is replicated over.
    pub replicates: usize,
    pub task: TaskConfig,
    pub annotator: AnnotatorConfig,
    pub sizes: DataSizes,
    pub model: ModelConfig,
    pub sft: TrainConfig,
    pub rm: TrainConfig,
    pub generation: GenerationConfig,
    pub pdgrs: PdgrsConfig,
    pub dpo: DpoConfig,
    pub rs_sft: TrainConfig,
    pub policy: SelectionPolicy,
    pub rm_variant: RmVariant,
    /// Grid axes for experiments. Empty axes fall back to the single values
    /// above.
    pub grid: Grid,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub policies: Vec<SelectionPolicy>,
    pub rm_variants: Vec<RmVariant>,
    pub thresholds: Vec<f64>,
    pub temperatures: Vec<f64>,
    /// Run each DPO policy on its full data (`false`) and/or subsampled to
    /// one triple per prompt (`true`).
    pub size_control: Vec<bool>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            replicates: 5,
            task: TaskConfig::default(),
            annotator: AnnotatorConfig::default(),
            sizes: DataSizes::default(),
            model: ModelConfig::default(),
            sft: TrainConfig {
                epochs: 10,
                batch_size: 16,
                lr: 5e-2,
                schedule: ScheduleKind::Linear,
                warmup_steps: 0,
                weight_decay: 0.0,
            },
            rm: TrainConfig {
                epochs: 5,
                batch_size: 16,
                lr: 2.5e-2,
                schedule: ScheduleKind::Linear,
                warmup_steps: 0,
                weight_decay: 0.0,
            },
            generation: GenerationConfig::default(),
            pdgrs: PdgrsConfig::default(),
            dpo: DpoConfig {
                beta: 5.0,
                train: TrainConfig {
                    lr: 2e-2,
                    ..DpoConfig::default().train
                },
                ..DpoConfig::default()
            },
            rs_sft: TrainConfig {
                epochs: 4,
                batch_size: 16,
                lr: 1e-2,
                schedule: ScheduleKind::Cosine,
                warmup_steps: 0,
                weight_decay: 0.0,
            },
            policy: SelectionPolicy::Proposed,
            rm_variant: RmVariant::Rich,
            grid: Grid::default(),
            out_dir: PathBuf::from("runs"),
        }
    }
}

pub const PRESETS: [&str; 7] = [
    "default",
    "threshold-ablation",
    "temperature-ablation",
    "policy-comparison",
    "size-controlled",
    "rm-ablation",
    "smoke",
];

impl ExperimentConfig {
    /// Named experiment grids.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = Self::default();
        let p = SelectionPolicy::Proposed;
        match name {
            "default" => {}
            "threshold-ablation" => {
                c.grid.policies = vec![p];
                c.grid.thresholds = vec![0.80, 0.85, 0.90];
            }
            "temperature-ablation" => {
                c.grid.policies = vec![p];
                c.grid.temperatures = vec![0.8, 0.9, 1.0, 1.1, 1.2];
            }
            "policy-comparison" => {
                c.grid.policies = SelectionPolicy::ALL.to_vec();
            }
            "size-controlled" => {
                c.grid.policies = vec![p];
                c.grid.thresholds = vec![0.90];
                c.grid.size_control = vec![false, true];
            }
            "rm-ablation" => {
                c.grid.policies = vec![p, SelectionPolicy::BestVsWorst];
                c.grid.rm_variants = vec![RmVariant::Rich, RmVariant::Narrow];
            }
            "smoke" => {
                c.replicates = 1;
                c.task.vocab_size = 12;
                c.task.prompt_len_min = 3;
                c.task.prompt_len_max = 3;
                c.model.lm_context = 4;
                c.model.rm_context = 4;
                c.sizes = DataSizes {
                    sft: 60,
                    preference_pool: 60,
                    rm_prompts: 8,
                    eval_prompts: 20,
                    narrow_fraction: 0.5,
                };
                c.generation.k = 4;
                c.generation.max_new_tokens = 8;
                c.sft.epochs = 2;
                c.rm.epochs = 8;
                c.pdgrs.threshold = 0.6;
                c.dpo.train.epochs = 1;
                c.rs_sft.epochs = 1;
                c.grid.policies = SelectionPolicy::ALL.to_vec();
            }
            other => {
                return Err(Error::config(format!(
                    "unknown preset `{other}`; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(c)
    }

    /// A preset (default `default`) with an optional JSON file merged over
    /// it: objects merge key by key, anything else replaces.
    pub fn load(preset: Option<&str>, file: Option<&Path>) -> Result<Self> {
        let base = Self::preset(preset.unwrap_or("default"))?;
        let Some(path) = file else { return Ok(base) };
        let patch: serde_json::Value = read_json(path)?;
        let mut merged = serde_json::to_value(&base)?;
        merge(&mut merged, patch);
        serde_path_to_error::deserialize(merged).map_err(|e| Error::Document {
            path: path.to_path_buf(),
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::config("replicates must be >= 1"));
        }
        Vocab::new(self.task.vocab_size)?;
        TaskSpec::identity(
            Vocab::new(self.task.vocab_size)?,
            (self.task.prompt_len_min, self.task.prompt_len_max),
            self.task.length_penalty,
        )?;
        self.annotator.validate()?;
        let s = &self.sizes;
        if s.sft == 0 || s.preference_pool == 0 || s.rm_prompts == 0 || s.eval_prompts == 0 {
            return Err(Error::config("dataset sizes must be >= 1"));
        }
        if s.rm_prompts > s.preference_pool {
            return Err(Error::config("rm_prompts cannot exceed preference_pool"));
        }
        if !(s.narrow_fraction > 0.0 && s.narrow_fraction <= 1.0) {
            return Err(Error::config("narrow_fraction must be in (0, 1]"));
        }
        if self.model.lm_context == 0 || self.model.rm_context == 0 {
            return Err(Error::config("context lengths must be >= 1"));
        }
        self.sft.validate()?;
        self.rm.validate()?;
        self.rs_sft.validate()?;
        self.generation.validate()?;
        self.pdgrs.validate()?;
        for &eta in &self.grid.thresholds {
            PdgrsConfig { threshold: eta, ..self.pdgrs }.validate()?;
        }
        for &tau in &self.grid.temperatures {
            PdgrsConfig { temperature: tau, ..self.pdgrs }.validate()?;
        }
        self.dpo.validate()
    }

    /// Size of the narrow reward model's training set.
    pub fn narrow_size(&self) -> usize {
        ((self.sizes.preference_pool as f64 * self.sizes.narrow_fraction).round() as usize).max(1)
    }

    /// SHA-256 of the config's JSON form with the output directory blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }

    pub fn policies(&self) -> Vec<SelectionPolicy> {
        or_single(&self.grid.policies, self.policy)
    }

    pub fn rm_variants(&self) -> Vec<RmVariant> {
        or_single(&self.grid.rm_variants, self.rm_variant)
    }

    pub fn thresholds(&self) -> Vec<f64> {
        or_single(&self.grid.thresholds, self.pdgrs.threshold)
    }

    pub fn temperatures(&self) -> Vec<f64> {
        or_single(&self.grid.temperatures, self.pdgrs.temperature)
    }

    pub fn size_control(&self) -> Vec<bool> {
        or_single(&self.grid.size_control, false)
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    use serde_json::Value;
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn or_single<T: Clone>(axis: &[T], single: T) -> Vec<T> {
    if axis.is_empty() {
        vec![single]
    } else {
        axis.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            ExperimentConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn json_round_trip_and_partial_configs() {
        let c = ExperimentConfig::preset("rm-ablation").unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&s).unwrap(), c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 7, "dpo": {"beta": 0.2, "train": {"lr": 0.5}}}"#).unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.dpo.beta, 0.2);
        assert_eq!(partial.dpo.train.lr, 0.5);
        assert_eq!(partial.dpo.train.epochs, 2);
        assert_eq!(partial.dpo.holdout_fraction, 0.1);
    }

    #[test]
    fn file_merges_over_preset() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.json");
        std::fs::write(&f, r#"{"seed": 3, "grid": {"thresholds": [0.9]}}"#).unwrap();
        let c = ExperimentConfig::load(Some("rm-ablation"), Some(&f)).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.grid.thresholds, vec![0.9]);
        assert_eq!(c.grid.rm_variants, vec![RmVariant::Rich, RmVariant::Narrow]);
        std::fs::write(&f, r#"{"dpo": {"beta": "high"}}"#).unwrap();
        match ExperimentConfig::load(None, Some(&f)) {
            Err(Error::Document { field, .. }) => assert_eq!(field, "dpo.beta"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_ignores_out_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
