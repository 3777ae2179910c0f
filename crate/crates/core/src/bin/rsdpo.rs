use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use rsdpo::pdgrs::SelectionPolicy;
use rsdpo::pipeline::{ExperimentConfig, RmVariant, Run};

#[derive(Parser)]
#[command(name = "rsdpo", version, about = "Preference data generation by rejection sampling, and DPO, on a toy task")]
struct Cli {
    /// JSON config merged over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "RSDPO_SEED")]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, env = "RSDPO_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    preset: Option<String>,
    #[command(flatten)]
    select: Selection,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Selection {
    #[arg(long, global = true)]
    policy: Option<SelectionPolicy>,
    #[arg(long, global = true)]
    rm_variant: Option<RmVariant>,
    /// η
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// τ
    #[arg(long, global = true)]
    temperature: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Task, SFT data, preference pool, evaluation prompts.
    Synth,
    /// Supervised fine-tuning from zero.
    Sft,
    /// Rich and narrow reward models.
    Rm,
    /// Sample and score k candidates per generation prompt.
    Generate,
    /// Threshold pairs from a generation file.
    Pdgrs {
        #[arg(long)]
        gen: Option<PathBuf>,
    },
    /// Training pairs for --policy.
    Select {
        #[arg(long)]
        gen: Option<PathBuf>,
    },
    /// DPO on the pairs selected for --policy.
    Dpo,
    /// Fine-tune on the best candidate per prompt.
    RsSft {
        #[arg(long)]
        gen: Option<PathBuf>,
    },
    /// Oracle win rate of a candidate checkpoint against a baseline.
    Eval {
        #[arg(long)]
        candidate: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Reward-gap histogram of a generation file.
    Histogram {
        #[arg(long)]
        gen: Option<PathBuf>,
    },
    /// Run the preset grid over seeds and write the results table.
    Experiment,
    /// Every stage for every policy, one seed.
    All,
    /// List the presets.
    Presets,
    /// Check every artifact in the manifest against its checksum.
    Verify,
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(cli.preset.as_deref(), cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    let sel = &cli.select;
    if let Some(p) = sel.policy {
        cfg.policy = p;
    }
    if let Some(v) = sel.rm_variant {
        cfg.rm_variant = v;
    }
    if let Some(t) = sel.threshold {
        cfg.pdgrs.threshold = t;
    }
    if let Some(t) = sel.temperature {
        cfg.pdgrs.temperature = t;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Presets = cli.command {
        for p in rsdpo::pipeline::PRESETS {
            println!("{p}");
        }
        return Ok(());
    }
    let cfg = config(&cli)?;
    for w in cfg.pdgrs.validate()? {
        eprintln!("warning: {w}");
    }
    let dir = cfg.out_dir.clone();
    let run = Run::new(cfg, &dir)?;
    match cli.command {
        Command::Synth => run.synth()?,
        Command::Sft => {
            let losses = run.sft_stage()?;
            println!("sft: final epoch loss {:.4}", losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::Rm => run.rm()?,
        Command::Generate => println!("wrote {}", run.generate()?.display()),
        Command::Pdgrs { gen } => {
            let r = run.pdgrs(gen.as_deref())?;
            println!("{} pairs from {} prompts -> {}", r.stats.emitted, r.stats.prompts, r.output.display());
        }
        Command::Select { gen } => {
            let r = run.select(gen.as_deref())?;
            println!("{} pairs from {} prompts -> {}", r.stats.emitted, r.stats.prompts, r.output.display());
        }
        Command::Dpo => println!("wrote {}", run.dpo()?.display()),
        Command::RsSft { gen } => println!("wrote {}", run.rs_sft(gen.as_deref())?.display()),
        Command::Eval { candidate, baseline } => {
            let r = run.eval(candidate.as_deref(), baseline.as_deref())?;
            let w = r.win_rate;
            println!("win_rate {:.3} stderr {:.3} n {}", w.rate, w.stderr, w.n);
        }
        Command::Histogram { gen } => {
            let s = run.histogram(gen.as_deref())?;
            println!(
                "{} pairs, mean {:.4}, std {:.4}, above {} : {:.4}",
                s.pairs, s.mean, s.std, s.threshold, s.fraction_above_threshold
            );
        }
        Command::Experiment => {
            run.experiment()?;
            print!("{}", std::fs::read_to_string(dir.join(rsdpo::pipeline::stages::RESULTS_CSV))?);
        }
        Command::All => {
            for r in run.all()? {
                println!("{} {:.3}", r.candidate, r.win_rate.rate);
            }
        }
        Command::Verify => {
            run.manifest()?.verify(&dir)?;
            println!("manifest ok");
        }
        Command::Presets => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let validation = e.downcast_ref::<rsdpo::Error>().is_some_and(|e| e.is_validation());
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
