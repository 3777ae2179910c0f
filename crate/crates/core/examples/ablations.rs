//! The ablation grids, replicated over seeds. Pass a preset name, e.g.
//! `cargo run --release --example ablations -- threshold-ablation`.

use rsdpo::pipeline::experiment::{results_csv, run_experiment};
use rsdpo::pipeline::{ExperimentConfig, PRESETS};

fn main() -> anyhow::Result<()> {
    let names: Vec<String> = std::env::args().skip(1).collect();
    let names = if names.is_empty() {
        vec!["threshold-ablation".to_string(), "temperature-ablation".to_string(), "rm-ablation".to_string(), "size-controlled".to_string()]
    } else {
        names
    };
    for name in names {
        anyhow::ensure!(PRESETS.contains(&name.as_str()), "unknown preset {name}");
        let cfg = ExperimentConfig::preset(&name)?;
        let res = run_experiment(&cfg)?;
        println!("# {name}, {} seeds", cfg.replicates);
        println!("{}", results_csv(&res.rows));
    }
    Ok(())
}
