//! Reward-gap histograms of the same candidates under the rich and the narrow
//! reward model.

use rsdpo::pdgrs::PdgrsConfig;
use rsdpo::pipeline::experiment::prepare;
use rsdpo::pipeline::histogram::{gap_histogram, DEFAULT_BINS};
use rsdpo::pipeline::ExperimentConfig;

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::default();
    let up = prepare(&cfg, 0)?;
    for (name, cands) in [("rich", &up.candidates_rich), ("narrow", &up.candidates_narrow)] {
        for tau in [0.8, 1.0, 1.2] {
            let h = gap_histogram(cands, &PdgrsConfig { temperature: tau, ..cfg.pdgrs }, DEFAULT_BINS)?;
            let s = &h.summary;
            println!(
                "{name:6} tau {tau:.1}: mean {:.3} std {:.3}, {:.1}% above {}",
                s.mean,
                s.std,
                100.0 * s.fraction_above_threshold,
                s.threshold
            );
            if tau == 1.0 {
                for b in &h.bins {
                    println!("  [{:.3}, {:.3}) {:6} {}", b.lo, b.hi, b.count, "#".repeat((b.count * 60 / s.pairs.max(1)).min(60)));
                }
            }
        }
    }
    Ok(())
}
