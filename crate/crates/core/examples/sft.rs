//! Supervised fine-tuning on noisy demonstrations of the permutation task.

use rsdpo::optim::{train_sft, ScheduleKind, TrainConfig};
use rsdpo::synth::{gen_sft_dataset, mean_oracle_reward, AnnotatorConfig, TaskSpec};
use rsdpo::toylm::{GenerationConfig, ToyLMParams, Vocab};
use rsdpo::RngStream;

fn main() -> anyhow::Result<()> {
    let task = TaskSpec::random(Vocab::new(16)?, (6, 6), 0.5, &RngStream::new(0, "task", 0))?;
    let data = gen_sft_dataset(&task, 500, &AnnotatorConfig::default(), &RngStream::new(0, "sft-data", 0))?;
    let cfg = TrainConfig {
        epochs: 10,
        lr: 0.05,
        schedule: ScheduleKind::Linear,
        ..TrainConfig::default()
    };
    let init = ToyLMParams::zeros(task.vocab(), 7)?;
    let out = train_sft(&init, &data, &cfg, &RngStream::new(0, "sft", 0))?;
    for (e, l) in out.epoch_losses.iter().enumerate() {
        println!("epoch {:2} loss {l:.4}", e + 1);
    }

    let prompts = task.prompts(300, &RngStream::new(0, "eval-prompts", 0));
    let gen = GenerationConfig::default();
    let before = mean_oracle_reward(&init, &task, &prompts, &gen, &RngStream::new(0, "eval", 0))?;
    let after = mean_oracle_reward(&out.params, &task, &prompts, &gen, &RngStream::new(0, "eval", 0))?;
    println!("mean oracle reward: {before:.3} untrained, {after:.3} after SFT, 1.0 ideal");
    Ok(())
}
