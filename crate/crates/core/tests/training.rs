mod common;

use common::{random_triple, rng};
use rsdpo::dpo::{dpo_grad, implicit_margin, train_dpo, DpoConfig, Split};
use rsdpo::optim::{train_sft, Parameters, TrainConfig};
use rsdpo::pipeline::experiment::{synth_data, SeedStreams};
use rsdpo::pipeline::ExperimentConfig;
use rsdpo::reward::{pairwise_accuracy, train_rm, PreferenceDataset, RewardModelParams};
use rsdpo::synth::{eval_winrate, gen_preference_dataset, AnnotatorConfig};
use rsdpo::toylm::{GenerationConfig, RngStream, ToyLMParams, Vocab};

#[test]
fn sft_epoch_loss_never_jumps_up() {
    let cfg = ExperimentConfig::default();
    for seed in 0..3 {
        let s = SeedStreams::new(seed);
        let (task, data, _, _) = synth_data(&cfg, &s).unwrap();
        let init = ToyLMParams::zeros(task.vocab(), cfg.model.lm_context).unwrap();
        let out = train_sft(&init, &data, &cfg.sft, &s.get("sft-train")).unwrap();
        for w in out.epoch_losses.windows(2) {
            assert!(w[1] <= 1.1 * w[0], "seed {seed}: epoch losses {:?}", out.epoch_losses);
        }
    }
}

/// 200 single-example steps. The type defaults (β = 0.1, lr = 1e-3) move the
/// margin the right way; the experiment's DPO settings also drive the loss
/// below 0.1.
#[test]
fn dpo_overfits_a_single_triple() {
    let v = Vocab::new(8).unwrap();
    let mut r = rng("dpo-single", 0);
    let reference = ToyLMParams::random(v, 2, 0.5, &mut r).unwrap();
    let t = random_triple(&v, &mut r);
    let data = PreferenceDataset::new(vec![t.clone()]);
    let single = |base: DpoConfig| DpoConfig {
        train: TrainConfig {
            epochs: 200,
            batch_size: 1,
            ..base.train
        },
        holdout_fraction: 0.0,
        ..base
    };
    for (name, cfg) in [
        ("type defaults", single(DpoConfig::default())),
        ("experiment", single(ExperimentConfig::default().dpo)),
    ] {
        let out = train_dpo(&reference, &data, &cfg, &RngStream::new(0, "dpo", 0)).unwrap();
        assert_eq!(out.trace.len(), 200);
        let m = implicit_margin(&out.policy, &reference, &t, cfg.beta).unwrap();
        let loss = out.final_metrics(Split::Train).unwrap().loss;
        assert!(m > 0.0, "{name}: margin {m}");
        if name == "experiment" {
            assert!(loss < 0.1, "{name}: loss {loss}");
        }
    }
}

#[test]
fn dpo_gradient_vanishes_at_a_saturated_margin() {
    let v = Vocab::new(8).unwrap();
    let mut r = rng("dpo-saturated", 0);
    let mut checked = 0;
    while checked < 50 {
        let policy = ToyLMParams::random(v, 2, 1.0, &mut r).unwrap();
        let reference = ToyLMParams::random(v, 2, 1.0, &mut r).unwrap();
        let mut t = random_triple(&v, &mut r);
        let mut m = implicit_margin(&policy, &reference, &t, 1.0).unwrap();
        if m.abs() < 0.1 {
            continue;
        }
        if m < 0.0 {
            std::mem::swap(&mut t.chosen, &mut t.rejected);
            m = -m;
        }
        // The margin is linear in β, so this β puts it at 40.
        let beta = 40.0 / m;
        assert!((implicit_margin(&policy, &reference, &t, beta).unwrap() - 40.0).abs() < 1e-9);
        let g = dpo_grad(&policy, &reference, &t, beta).unwrap();
        let norm = g.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}");
        checked += 1;
    }
}

/// Pairs whose two responses the oracle scores equally carry a tie-break
/// label rather than a judgment, so the held-out set keeps only pairs the
/// oracle strictly orders. The reward model is trained close to convergence.
#[test]
fn reward_model_learns_noiseless_labels() {
    let mut cfg = ExperimentConfig::default();
    cfg.task.vocab_size = 10;
    cfg.rm.epochs = 20;
    for seed in 0..3 {
        let task = cfg.task.build(&RngStream::new(seed, "task", 0)).unwrap();
        let annot = AnnotatorConfig {
            flip_prob: 0.0,
            ..cfg.annotator
        };
        let train = gen_preference_dataset(&task, 500, &annot, &RngStream::new(seed, "rm-train", 0)).unwrap();
        let held_out: PreferenceDataset =
            gen_preference_dataset(&task, 500, &annot, &RngStream::new(seed, "rm-held-out", 0))
                .unwrap()
                .triples()
                .iter()
                .filter(|t| {
                    task.oracle_reward(&t.prompt, &t.chosen).unwrap()
                        != task.oracle_reward(&t.prompt, &t.rejected).unwrap()
                })
                .cloned()
                .collect();
        assert!(held_out.len() > 300);
        let init = RewardModelParams::zeros(task.vocab(), cfg.model.rm_context).unwrap();
        let out = train_rm(&init, &train, &cfg.rm, &RngStream::new(seed, "rm-fit", 0)).unwrap();
        let acc = pairwise_accuracy(&out.params, &held_out).unwrap();
        assert!(acc >= 0.9, "seed {seed}: held-out accuracy {acc}");
    }
}

#[test]
fn ideal_responder_beats_a_uniform_policy() {
    let cfg = ExperimentConfig::default();
    let s = SeedStreams::new(0);
    let task = cfg.task.build(&s.get("task")).unwrap();
    let ideal = task.ideal_model(cfg.model.lm_context, 30.0).unwrap();
    let uniform = ToyLMParams::zeros(task.vocab(), cfg.model.lm_context).unwrap();
    let prompts = task.prompts(300, &s.get("eval-prompts"));
    let w = eval_winrate(
        &ideal,
        &uniform,
        &task,
        &prompts,
        &GenerationConfig::default(),
        &RngStream::new(0, "eval", 0),
    )
    .unwrap();
    assert_eq!(w.n, 300);
    assert!(w.rate >= 0.95, "win rate {}", w.rate);
}
