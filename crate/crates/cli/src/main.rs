//! `dtr`: simulate, fit, evaluate and study treatment regimes from a TOML
//! config. Exit codes: 0 success, 2 config or input error, 3 numerical
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CliError, Config};

#[derive(Parser)]
#[command(name = "dtr", version, about = "Q- and A-learning for multi-stage treatment regimes")]
struct Cli {
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for studies and calibration. Affects speed only.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a simulated dataset (dataset.csv).
    Simulate { config: PathBuf },
    /// Fit a dataset (fit.json, residuals.csv).
    Fit { config: PathBuf },
    /// Value of a regime (value.json).
    Value { config: PathBuf },
    /// Monte Carlo study (study.json, study_reps.csv).
    Study { config: PathBuf },
    /// Equivalently misspecified pairs (pairing.csv, polynomial.json).
    Calibrate { config: PathBuf },
    /// Check a config and print the scenario's true parameters.
    Validate { config: PathBuf },
}

impl Command {
    fn config_path(&self) -> &PathBuf {
        match self {
            Command::Simulate { config }
            | Command::Fit { config }
            | Command::Value { config }
            | Command::Study { config }
            | Command::Calibrate { config }
            | Command::Validate { config } => config,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.command.config_path();
    let mut cfg = Config::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    cfg.validate()?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let out_dir = cli
        .out_dir
        .or_else(|| cfg.out_dir.as_ref().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = commands::Context { cfg, base, out_dir };
    match cli.command {
        Command::Simulate { .. } => commands::simulate(&ctx),
        Command::Fit { .. } => commands::fit(&ctx),
        Command::Value { .. } => commands::value(&ctx),
        Command::Study { .. } => commands::study(&ctx),
        Command::Calibrate { .. } => commands::calibrate(&ctx),
        Command::Validate { .. } => commands::validate(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dtr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
