//! Bradley-Terry reward models on annotated pairs: one on the full pool, one
//! on a tenth of it, compared against the oracle on held-out pairs.

use rsdpo::optim::{ScheduleKind, TrainConfig};
use rsdpo::reward::{bt_probability, pairwise_accuracy, train_rm, RewardModelParams};
use rsdpo::synth::{gen_preference_dataset, AnnotatorConfig, TaskSpec};
use rsdpo::toylm::Vocab;
use rsdpo::RngStream;

fn main() -> anyhow::Result<()> {
    println!("p(w > l) for reward gaps 0, 1, 3: {:.3} {:.3} {:.3}", bt_probability(0.0, 0.0), bt_probability(1.0, 0.0), bt_probability(3.0, 0.0));

    let task = TaskSpec::random(Vocab::new(16)?, (6, 6), 0.5, &RngStream::new(0, "task", 0))?;
    let noiseless = AnnotatorConfig {
        flip_prob: 0.0,
        ..AnnotatorConfig::default()
    };
    let pool = gen_preference_dataset(&task, 2000, &AnnotatorConfig::default(), &RngStream::new(0, "pool", 0))?;
    let test = gen_preference_dataset(&task, 500, &noiseless, &RngStream::new(0, "test", 0))?;
    let cfg = TrainConfig {
        epochs: 5,
        lr: 0.025,
        schedule: ScheduleKind::Linear,
        ..TrainConfig::default()
    };
    let init = RewardModelParams::zeros(task.vocab(), 7)?;
    for (name, data) in [("rich", pool.clone()), ("narrow", pool.head(200))] {
        let out = train_rm(&init, &data, &cfg, &RngStream::new(0, name, 0))?;
        let last = out.epochs.last().expect("at least one epoch");
        println!(
            "{name:6} {:4} pairs: train loss {:.3}, train acc {:.3}, oracle-labelled test acc {:.3}",
            data.len(),
            last.loss,
            last.accuracy,
            pairwise_accuracy(&out.params, &test)?
        );
    }
    Ok(())
}
