//! DPO on pairs from the proposed selection versus the original annotations,
//! with held-out reward accuracy and margin per epoch.

use rsdpo::dpo::{curves_to_csv, train_dpo, Split};
use rsdpo::pdgrs::{select_pairs, SelectionPolicy};
use rsdpo::pipeline::experiment::{prepare, SeedStreams};
use rsdpo::pipeline::ExperimentConfig;

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::default();
    let up = prepare(&cfg, 0)?;
    let s = SeedStreams::new(0);
    let proposed = select_pairs(SelectionPolicy::Proposed, &up.candidates_rich, &cfg.pdgrs, &s.get("select"))?.0;
    for (name, data) in [("proposed", proposed), ("original-annotation", up.original_pairs(&cfg))] {
        let out = train_dpo(&up.sft, &data, &cfg.dpo, &s.get("dpo"))?;
        println!("{name}: {} train / {} held-out pairs", out.train_size, out.eval_size);
        print!("{}", curves_to_csv(&out.curves));
        if let Some(m) = out.final_metrics(Split::Eval) {
            println!("final held-out accuracy {:.3}, margin {:.3}\n", m.reward_accuracy, m.reward_margin);
        }
    }
    Ok(())
}
