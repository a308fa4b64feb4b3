//! `phaseless`: dataset generation, the three training stages, evaluation
//! and single-sample prediction, driven by a TOML run configuration.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use phaseless::par;

use crate::commands::PredictInput;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "phaseless", version, about = "Shape reconstruction from phaseless far-field data")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one entry, e.g. `--set train_inverse.alpha_ff=0.25`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides `paths.out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (overrides the PHASELESS_WORKERS environment variable).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for every random stream (overrides all configured seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate particles, solve their far fields and store the dataset.
    GenData,
    /// Train the point-cloud VAE.
    TrainVae,
    /// Train the forward far-field surrogate.
    TrainForward,
    /// Train the inverse network against the frozen generator.
    TrainInverse,
    /// Evaluate the inverse pipeline on the test split.
    Evaluate,
    /// Reconstruct one point cloud from a far-field grid.
    Predict {
        /// Little-endian f32 magnitude grid file.
        #[arg(long, conflicts_with = "sample", required_unless_present = "sample")]
        field: Option<PathBuf>,
        /// Stored dataset sample id.
        #[arg(long)]
        sample: Option<u64>,
        /// Ground-truth cloud (OFF) to report the chamfer distance against.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Output OFF file (default: <out>/prediction.off).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(out) = cli.out {
        cfg.paths.out = out;
    }
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    cfg.validate()?;
    if cli.workers == Some(0) {
        return Err(CliError::Validation("--workers must be >= 1".into()));
    }
    let workers = cli.workers.or_else(par::workers_from_env);
    par::with_workers(workers, || match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::TrainVae => commands::train_vae_cmd(&cfg),
        Command::TrainForward => commands::train_forward_cmd(&cfg),
        Command::TrainInverse => commands::train_inverse_cmd(&cfg),
        Command::Evaluate => commands::evaluate_cmd(&cfg),
        Command::Predict {
            field,
            sample,
            truth,
            output,
        } => {
            let input = match (field, sample) {
                (Some(f), _) => PredictInput::Field(f),
                (None, Some(id)) => PredictInput::Sample(id),
                (None, None) => return Err(CliError::Validation("predict needs --field or --sample".into())),
            };
            commands::predict_cmd(&cfg, input, truth.as_deref(), output.as_deref())
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
