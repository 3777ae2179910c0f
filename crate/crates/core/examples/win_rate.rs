//! Oracle-judged win rates: an exact responder, the SFT model and a
//! DPO-trained policy, each against the SFT model.

use rsdpo::pipeline::experiment::{cells, prepare, run_cell};
use rsdpo::pipeline::ExperimentConfig;
use rsdpo::synth::eval_winrate;
use rsdpo::RngStream;

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::preset("policy-comparison")?;
    let up = prepare(&cfg, 0)?;
    let stream = RngStream::new(0, "win-rate", 0);
    let ideal = up.task.ideal_model(cfg.model.lm_context, 30.0)?;
    let w = eval_winrate(&ideal, &up.sft, &up.task, &up.eval_prompts, &cfg.generation, &stream)?;
    println!("ideal vs sft: {:.3} +- {:.3}", w.rate, w.stderr);
    let w = eval_winrate(&up.sft, &up.sft, &up.task, &up.eval_prompts, &cfg.generation, &stream)?;
    println!("sft vs sft:   {:.3} ({} ties of {})", w.rate, w.ties, w.n);
    for cell in cells(&cfg) {
        let r = run_cell(&cfg, &up, &cell)?;
        println!("{:22} {:>5} samples: {:.3} +- {:.3}", cell.policy.name(), r.sample_size, r.win_rate.rate, r.win_rate.stderr);
    }
    Ok(())
}
