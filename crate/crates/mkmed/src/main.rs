use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mkmed::checkpoint::Checkpoint;
use mkmed::commands::{self, Experiment, Loaded};
use mkmed::config;
use mkmed::CliResult;
use mkmed_core::eval::Variant;

#[derive(Parser)]
#[command(name = "mkmed", version, about = "Multimodal molecular alignment and medication recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file (generator spec for `generate`, run config otherwise).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and print its modality coverage.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Contrastive pre-training of the molecular encoders.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "rotating", value_parser = ["rotating", "intersection"])]
        mode: String,
    },
    /// Train the recommender, optionally on pre-trained encoders.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Encoder checkpoint from `pretrain`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = ["full", "mol", "pt", "pm"])]
        variant: Option<String>,
    },
    /// Bootstrap evaluation of a trained recommender on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Recommender checkpoint from `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bootstrap: Option<usize>,
    },
    /// Run an experiment grid and write a long-format CSV.
    Experiment {
        /// ablation, modality-sweep, alignment-comparison or param-sweep.
        name: String,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Number of consecutive seeds starting at the configured one.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Overrides the bootstrap sample count.
        #[arg(long)]
        bootstrap: Option<usize>,
    },
}

fn run_config(c: &Common) -> CliResult<mkmed_core::config::RunConfig> {
    let mut cfg = config::load_run_config(c.config.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { common } => {
            let mut spec = config::load_spec(common.config.as_deref())?;
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            let stats = commands::cmd_generate(&spec, &common.out)?;
            print!("{}", commands::coverage_summary(&stats));
        }
        Command::Pretrain { common, data, mode } => {
            let cfg = run_config(&common)?;
            let loaded = Loaded::open(&data)?;
            let out = commands::cmd_pretrain(&cfg, &loaded, commands::parse_mode(&mode)?, &common.out)?;
            if let Some(r) = out.report {
                println!("pretrained {} steps; final loss {:.6}", r.steps, r.losses.last().copied().unwrap_or(0.0));
            }
        }
        Command::Train { common, data, checkpoint, variant } => {
            let cfg = run_config(&common)?;
            let loaded = Loaded::open(&data)?;
            let ck = checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            let variant = variant.as_deref().map(Variant::from_name).transpose()?;
            let out = commands::cmd_train(&cfg, &loaded, ck.as_ref(), variant, &common.out)?;
            let best = &out.trained.log.get(out.trained.best_epoch);
            println!(
                "variant {}: best epoch {} (validation jaccard {:.4})",
                out.variant,
                out.trained.best_epoch,
                best.map_or(0.0, |e| e.val_jaccard)
            );
        }
        Command::Evaluate { common, data, checkpoint, bootstrap } => {
            if common.config.is_some() {
                eprintln!("note: evaluate uses the configuration stored in the checkpoint; --config is ignored");
            }
            let ck = Checkpoint::load(&checkpoint)?;
            let loaded = Loaded::open(&data)?;
            let r = commands::cmd_evaluate(&ck, &loaded, bootstrap, common.seed, &common.out)?;
            for (name, v) in &r.metrics {
                println!("{name}: {:.4} ± {:.4}", v.mean, v.std);
            }
        }
        Command::Experiment { name, common, data, seeds, bootstrap } => {
            let exp = Experiment::from_name(&name)?;
            let mut cfg = run_config(&common)?;
            if let Some(b) = bootstrap {
                cfg.bootstrap = b;
            }
            cfg.validate()?;
            let loaded = Loaded::open(&data)?;
            let seeds: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
            let table = commands::cmd_experiment(exp, &cfg, &loaded, &seeds, config::thread_cap()?, &common.out)?;
            println!("{} rows written", table.rows().len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
