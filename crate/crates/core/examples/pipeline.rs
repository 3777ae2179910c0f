//! The file-based pipeline: every stage writes artifacts into a run
//! directory and records them in the manifest.

use rsdpo::pdgrs::SelectionPolicy;
use rsdpo::pipeline::{ExperimentConfig, RmVariant, Run};

fn main() -> anyhow::Result<()> {
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("rsdpo-pipeline"));
    let run = Run::new(ExperimentConfig::default(), &dir)?;
    run.synth()?;
    run.sft_stage()?;
    run.rm()?;
    let proposed = run.with(SelectionPolicy::Proposed, RmVariant::Rich);
    proposed.generate()?;
    let sel = proposed.pdgrs(None)?;
    println!("{} pairs -> {}", sel.stats.emitted, sel.output.display());
    proposed.dpo()?;
    let report = proposed.eval(None, None)?;
    println!("proposed vs sft: {:.3}", report.win_rate.rate);
    let summary = proposed.histogram(None)?;
    println!("reward gaps: mean {:.3}, std {:.3}", summary.mean, summary.std);

    let m = run.manifest()?;
    m.verify(&dir)?;
    for s in &m.stages {
        println!("{:28} {:.3}s {}", s.stage, s.wall_clock_secs, s.outputs.iter().map(|a| a.path.as_str()).collect::<Vec<_>>().join(" "));
    }
    Ok(())
}
