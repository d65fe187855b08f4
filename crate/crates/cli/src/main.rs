use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use servodyn::training::PowerMode;
use servodyn::Error;

mod commands;
mod config;

use commands::{ModelSource, Outcome};
use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "servodyn", version, about = "Lagrangian networks for servo-driven systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset directory (overrides `data.dir`).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Training seed (overrides `train.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated seed list (overrides `sweep.seeds`).
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Train without the measured external force.
    #[arg(long, global = true)]
    no_qe: bool,
    /// Power loss: true, estimated or off.
    #[arg(long, global = true)]
    power_mode: Option<PowerMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the trials and write train/test CSVs.
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle identity checks and mark the dataset as verified.
    CheckOracle {
        #[arg(long, hide = true)]
        inject_sign_fault: bool,
    },
    /// Train one model.
    Train {
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate models (parameter files or `oracle`) on the test set.
    Eval {
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Single-sample inference latency over the test set.
    Bench {
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per seed and aggregate the evaluation.
    SeedSweep {
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> servodyn::Result<Outcome> {
    let overrides = Overrides {
        seed: cli.seed,
        seeds: cli.seeds,
        no_qe: cli.no_qe,
        power_mode: cli.power_mode,
        data: cli.data,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Generate { out } => {
            let out = out.unwrap_or_else(|| cfg.data.dir.clone());
            commands::generate(&cfg, &out)
        }
        Command::CheckOracle { inject_sign_fault } => {
            commands::check_oracle(&cfg, cfg.train.seed, inject_sign_fault)
        }
        Command::Train { out } => commands::train(&cfg, &out),
        Command::Eval { models, out } => {
            let sources: Vec<ModelSource> = models.iter().map(|m| ModelSource::parse(m)).collect();
            commands::eval(&cfg, &sources, &out)
        }
        Command::Bench { model, out } => {
            commands::bench(&cfg, &ModelSource::parse(&model), out.as_deref())
        }
        Command::SeedSweep { out } => commands::seed_sweep(&cfg, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => {
            eprintln!("error: oracle checks failed");
            ExitCode::from(1)
        }
        Ok(Outcome::NoConvergedSeed) => {
            eprintln!("error: no seed reached the convergence threshold");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
