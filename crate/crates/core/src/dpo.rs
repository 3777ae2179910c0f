//! Direct preference optimization against a frozen reference model.
//!
//! ```text
//! r̂(x, y) = β · (log π(y|x) − log π_ref(y|x))
//! loss    = −log σ(r̂(x, y_w) − r̂(x, y_l))
//! ```

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::optim::{adam_step, epoch_batches, AdamState, Parameters, ScheduleKind, StepMetrics, TrainConfig};
use crate::reward::{PreferenceDataset, PreferenceTriple};
use crate::toylm::{Prompt, Response, RngStream, ToyLMParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpoConfig {
    /// β
    pub beta: f64,
    pub train: TrainConfig,
    /// Fraction of the shuffled dataset held out for evaluation curves.
    pub holdout_fraction: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            train: TrainConfig {
                epochs: 4,
                batch_size: 16,
                lr: 1e-3,
                schedule: ScheduleKind::Cosine,
                warmup_steps: 0,
                weight_decay: 0.0,
            },
            holdout_fraction: 0.1,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("holdout_fraction must be in [0, 1)"));
        }
        self.train.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpoMetrics {
    pub loss: f64,
    pub reward_accuracy: f64,
    pub reward_margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

/// One row of the metrics JSONL / curve CSV. Epoch 0 is the initial policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpoEpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub reward_accuracy: f64,
    pub reward_margin: f64,
}

pub fn implicit_reward(
    policy: &ToyLMParams,
    reference: &ToyLMParams,
    prompt: &Prompt,
    response: &Response,
    beta: f64,
) -> Result<f64> {
    Ok(beta * (policy.sequence_logprob(prompt, response)? - reference.sequence_logprob(prompt, response)?))
}

/// `r̂(x, y_w) − r̂(x, y_l)`.
pub fn implicit_margin(
    policy: &ToyLMParams,
    reference: &ToyLMParams,
    triple: &PreferenceTriple,
    beta: f64,
) -> Result<f64> {
    Ok(implicit_reward(policy, reference, &triple.prompt, &triple.chosen, beta)?
        - implicit_reward(policy, reference, &triple.prompt, &triple.rejected, beta)?)
}

pub fn dpo_loss(
    policy: &ToyLMParams,
    reference: &ToyLMParams,
    triple: &PreferenceTriple,
    beta: f64,
) -> Result<f64> {
    Ok(softplus(-implicit_margin(policy, reference, triple, beta)?))
}

/// Gradient of [`dpo_loss`] with respect to the policy parameters.
pub fn dpo_grad(
    policy: &ToyLMParams,
    reference: &ToyLMParams,
    triple: &PreferenceTriple,
    beta: f64,
) -> Result<ToyLMParams> {
    let refs = RefLogprobs::of(reference, triple)?;
    let mut grad = policy.zeros_like();
    accumulate_dpo_grad(policy, triple, refs, beta, 1.0, grad.values_mut())?;
    Ok(grad)
}

#[derive(Clone, Copy, Debug)]
struct RefLogprobs {
    chosen: f64,
    rejected: f64,
}

impl RefLogprobs {
    fn of(reference: &ToyLMParams, t: &PreferenceTriple) -> Result<Self> {
        Ok(Self {
            chosen: reference.sequence_logprob(&t.prompt, &t.chosen)?,
            rejected: reference.sequence_logprob(&t.prompt, &t.rejected)?,
        })
    }
}

/// Adds `scale * ∇loss` into `grad`; returns `(loss, margin)`.
fn accumulate_dpo_grad(
    policy: &ToyLMParams,
    t: &PreferenceTriple,
    refs: RefLogprobs,
    beta: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<(f64, f64)> {
    // Margin first, so the gradient coefficient is known before accumulating.
    let lp_w = policy.sequence_logprob(&t.prompt, &t.chosen)?;
    let lp_l = policy.sequence_logprob(&t.prompt, &t.rejected)?;
    let margin = beta * ((lp_w - refs.chosen) - (lp_l - refs.rejected));
    let coef = -sigmoid(-margin) * beta * scale;
    policy.accumulate_logprob_grad(t.prompt.tokens(), t.chosen.tokens(), coef, grad);
    policy.accumulate_logprob_grad(t.prompt.tokens(), t.rejected.tokens(), -coef, grad);
    Ok((softplus(-margin), margin))
}

fn metrics_from_margins(margins: &[f64]) -> DpoMetrics {
    let n = margins.len() as f64;
    let accuracy: f64 = margins
        .iter()
        .map(|&m| if m > 0.0 { 1.0 } else if m == 0.0 { 0.5 } else { 0.0 })
        .sum();
    DpoMetrics {
        loss: margins.iter().map(|&m| softplus(-m)).sum::<f64>() / n,
        reward_accuracy: accuracy / n,
        reward_margin: margins.iter().sum::<f64>() / n,
    }
}

/// Held-out diagnostics: mean loss, fraction of positive margins (exact ties
/// count one half), and mean margin.
pub fn reward_accuracy_and_margin(
    policy: &ToyLMParams,
    reference: &ToyLMParams,
    eval: &PreferenceDataset,
    beta: f64,
) -> Result<DpoMetrics> {
    if eval.is_empty() {
        return Err(Error::input("empty evaluation set"));
    }
    let margins = eval
        .triples()
        .iter()
        .map(|t| implicit_margin(policy, reference, t, beta))
        .collect::<Result<Vec<_>>>()?;
    Ok(metrics_from_margins(&margins))
}

fn cached_metrics(
    policy: &ToyLMParams,
    triples: &[(PreferenceTriple, RefLogprobs)],
    beta: f64,
) -> Result<DpoMetrics> {
    let margins = triples
        .iter()
        .map(|(t, r)| {
            let lp_w = policy.sequence_logprob(&t.prompt, &t.chosen)?;
            let lp_l = policy.sequence_logprob(&t.prompt, &t.rejected)?;
            Ok(beta * ((lp_w - r.chosen) - (lp_l - r.rejected)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(metrics_from_margins(&margins))
}

#[derive(Clone, Debug)]
pub struct DpoOutput {
    pub policy: ToyLMParams,
    pub trace: Vec<StepMetrics>,
    pub curves: Vec<DpoEpochRecord>,
    /// Number of triples used for optimization after the held-out split.
    pub train_size: usize,
    pub eval_size: usize,
}

impl DpoOutput {
    /// Metrics of the last recorded epoch for `split`.
    pub fn final_metrics(&self, split: Split) -> Option<DpoMetrics> {
        self.curves.iter().rev().find(|r| r.split == split).map(|r| DpoMetrics {
            loss: r.loss,
            reward_accuracy: r.reward_accuracy,
            reward_margin: r.reward_margin,
        })
    }
}

/// Trains a policy initialized from `reference`. The dataset is shuffled once
/// and its final `holdout_fraction` is kept out of optimization.
pub fn train_dpo(
    reference: &ToyLMParams,
    data: &PreferenceDataset,
    cfg: &DpoConfig,
    stream: &RngStream,
) -> Result<DpoOutput> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::input("empty preference dataset"));
    }
    data.validate(&reference.vocab())?;
    let frozen = reference.clone();

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream.derive("split").rng());
    let n_eval = (data.len() as f64 * cfg.holdout_fraction).floor() as usize;
    let n_train = data.len() - n_eval;
    let with_refs = |idx: &[usize]| -> Result<Vec<(PreferenceTriple, RefLogprobs)>> {
        idx.iter()
            .map(|&i| {
                let t = data.triples()[i].clone();
                let r = RefLogprobs::of(reference, &t)?;
                Ok((t, r))
            })
            .collect()
    };
    let train = with_refs(&order[..n_train])?;
    let eval = with_refs(&order[n_train..])?;

    let beta = cfg.beta;
    let mut policy = reference.clone();
    let mut curves = Vec::new();
    let mut record = |epoch: usize, policy: &ToyLMParams| -> Result<()> {
        for (split, set) in [(Split::Train, &train), (Split::Eval, &eval)] {
            if set.is_empty() {
                continue;
            }
            let m = cached_metrics(policy, set, beta)?;
            curves.push(DpoEpochRecord {
                epoch,
                split,
                loss: m.loss,
                reward_accuracy: m.reward_accuracy,
                reward_margin: m.reward_margin,
            });
        }
        Ok(())
    };
    record(0, &policy)?;

    let schedule = cfg.train.schedule_for(n_train);
    let adam = cfg.train.adam();
    let mut state = AdamState::for_params(&policy);
    let mut grad = policy.zeros_like();
    let mut trace = Vec::with_capacity(schedule.total_steps);
    let batch_stream = stream.derive("batches");
    let mut step = 0;
    for epoch in 0..cfg.train.epochs {
        for batch in epoch_batches(n_train, cfg.train.batch_size, epoch, &batch_stream) {
            grad.values_mut().fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in &batch {
                let (t, r) = &train[i];
                loss += accumulate_dpo_grad(&policy, t, *r, beta, scale, grad.values_mut())?.0;
            }
            loss *= scale;
            let lr = schedule.lr_at(step)?;
            adam_step(&mut policy, &grad, &mut state, &adam, lr)?;
            trace.push(StepMetrics { step, lr, loss });
            step += 1;
        }
        record(epoch + 1, &policy)?;
    }

    if frozen.values().iter().map(|x| x.to_bits()).ne(reference.values().iter().map(|x| x.to_bits())) {
        return Err(Error::input("reference model changed during training"));
    }
    Ok(DpoOutput {
        policy,
        trace,
        curves,
        train_size: n_train,
        eval_size: n_eval,
    })
}

/// Curves as CSV: `epoch,split,loss,reward_accuracy,reward_margin`.
pub fn curves_to_csv(curves: &[DpoEpochRecord]) -> String {
    let mut s = String::from("epoch,split,loss,reward_accuracy,reward_margin\n");
    for r in curves {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            r.split.name(),
            r.loss,
            r.reward_accuracy,
            r.reward_margin
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylm::{Vocab, EOS};

    fn setup(seed: u64) -> (ToyLMParams, ToyLMParams, PreferenceTriple) {
        let v = Vocab::new(8).unwrap();
        let mut rng = RngStream::new(seed, "dpo", 0).rng();
        let reference = ToyLMParams::random(v, 2, 0.5, &mut rng).unwrap();
        let policy = ToyLMParams::random(v, 2, 0.5, &mut rng).unwrap();
        let t = PreferenceTriple::new(
            Prompt::from_content(&[4, 5], &v).unwrap(),
            Response::new(vec![6, 7, EOS], &v).unwrap(),
            Response::new(vec![5, EOS], &v).unwrap(),
            None,
        )
        .unwrap();
        (reference, policy, t)
    }

    #[test]
    fn identical_models_give_zero_reward_and_ln2() {
        let (r, _, t) = setup(1);
        assert_eq!(implicit_reward(&r, &r, &t.prompt, &t.chosen, 0.1).unwrap(), 0.0);
        assert!((dpo_loss(&r, &r, &t, 0.1).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn implicit_reward_is_linear_in_beta() {
        let (r, p, t) = setup(2);
        let a = implicit_reward(&p, &r, &t.prompt, &t.chosen, 0.1).unwrap();
        let b = implicit_reward(&p, &r, &t.prompt, &t.chosen, 0.2).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-14);
        let direct = 0.1
            * (p.sequence_logprob(&t.prompt, &t.chosen).unwrap()
                - r.sequence_logprob(&t.prompt, &t.chosen).unwrap());
        assert_eq!(a, direct);
    }

    #[test]
    fn swap_identity() {
        let (r, p, t) = setup(3);
        let m = implicit_margin(&p, &r, &t, 0.7).unwrap();
        let swapped = PreferenceTriple {
            chosen: t.rejected.clone(),
            rejected: t.chosen.clone(),
            ..t.clone()
        };
        let l = dpo_loss(&p, &r, &t, 0.7).unwrap();
        let ls = dpo_loss(&p, &r, &swapped, 0.7).unwrap();
        assert!((ls - (m + l)).abs() < 1e-12);
    }

    #[test]
    fn gradient_at_reference_is_half_beta_logprob_difference() {
        let (r, _, t) = setup(4);
        let g = dpo_grad(&r, &r, &t, 0.1).unwrap();
        let gw = r.logprob_grad(&t.prompt, &t.chosen).unwrap();
        let gl = r.logprob_grad(&t.prompt, &t.rejected).unwrap();
        for ((a, w), l) in g.values().iter().zip(gw.values()).zip(gl.values()) {
            assert!((a - (-0.05 * (w - l))).abs() < 1e-15);
        }
    }

    #[test]
    fn metrics_on_hand_built_margins() {
        let m = metrics_from_margins(&[2.0, -1.0]);
        assert_eq!(m.reward_accuracy, 0.5);
        assert_eq!(m.reward_margin, 0.5);
        assert!((m.loss - (softplus(-2.0) + softplus(1.0)) / 2.0).abs() < 1e-15);
        assert_eq!(metrics_from_margins(&[0.0, 0.0, 3.0]).reward_accuracy, 2.0 / 3.0);
    }

    #[test]
    fn config_validation() {
        assert!(DpoConfig::default().validate().is_ok());
        let bad = DpoConfig {
            beta: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
