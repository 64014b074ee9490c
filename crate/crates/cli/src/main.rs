mod config;
mod error;
mod stages;
mod store;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::store::RunDir;

#[derive(Parser)]
#[command(
    name = "cyrisk",
    version,
    about = "Cyber incident occurrence and frequency modeling runs"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; each run goes to <out>/<config hash>/.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Parse, deduplicate, aggregate and join the input tables.
    Ingest,
    /// Draw the seeded train/test split.
    Split,
    /// Fit every roster model with cross-validated search.
    Train,
    /// Score trained models on both splits and build heatmap tables.
    Evaluate,
    /// Impurity, permutation and SHAP importance with cross-model summaries.
    Importance,
    /// Render heatmap figures.
    Report,
    /// All stages in order.
    Run,
}

fn execute(cli: &Cli) -> CliResult<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let run = RunDir::new(&cli.out, &cfg.hash());
    info!("run directory {}", run.root.display());
    write_config(&cfg, &run)?;
    type Stage = fn(&ExperimentConfig, &RunDir) -> CliResult<()>;
    let all: [(Command, Stage); 6] = [
        (Command::Ingest, stages::ingest),
        (Command::Split, stages::split),
        (Command::Train, stages::train),
        (Command::Evaluate, stages::evaluate),
        (Command::Importance, stages::importance),
        (Command::Report, stages::report),
    ];
    for (cmd, stage) in all {
        if cli.command == Command::Run || cli.command == cmd {
            stage(&cfg, &run)?;
        }
    }
    Ok(())
}

fn write_config(cfg: &ExperimentConfig, run: &RunDir) -> CliResult<()> {
    store::write_json(&run.path("config.json"), cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
