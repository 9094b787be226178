use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

mod commands;
mod config;
mod output;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ric_core::Error> for CliError {
    fn from(e: ric_core::Error) -> Self {
        use ric_core::Error as E;
        match e {
            E::Io(io) => CliError::Io(io.to_string()),
            E::InvalidParameter(_) | E::IndexOutOfRange { .. } | E::Parse(_) | E::EnumerationTooLarge { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Restricted isometry constants from replica-symmetric theory and exchange Monte Carlo.
#[derive(Parser, Debug)]
#[command(name = "ric", version)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration entry; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    /// Random seed; stochastic commands need it here or as `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// RS entropy curves on both branches over a mu grid.
    RsCurve,
    /// RIC table over a rho grid at fixed alpha.
    Ric,
    /// Recovery boundaries rho*(alpha) for the l0 and l1 conditions.
    PhaseDiagram,
    /// Exchange Monte Carlo histograms for one branch.
    Emc,
    /// Multihistogram density of states from EMC histograms.
    Wham {
        /// Histogram files, or directories holding `hist_rung_*.csv`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Exhaustive enumeration of a small instance.
    Oracle,
    /// Join an RS curve with a density of states and emit an overlay plot.
    Compare { rs_csv: PathBuf, dos_csv: PathBuf },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.sets, cli.seed)?;
    match cli.command {
        Command::RsCurve => commands::rs_curve(&cfg),
        Command::Ric => commands::ric(&cfg),
        Command::PhaseDiagram => commands::phase_diagram(&cfg),
        Command::Emc => commands::emc(&cfg),
        Command::Wham { inputs } => commands::wham(&cfg, &inputs),
        Command::Oracle => commands::oracle(&cfg),
        Command::Compare { rs_csv, dos_csv } => commands::compare(&cfg, &rs_csv, &dos_csv),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ric: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
