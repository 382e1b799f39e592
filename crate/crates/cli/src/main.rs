mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Sparse transition-matrix estimation for linear-Gaussian state-space models.
#[derive(Parser, Debug)]
#[command(name = "graphem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for realizations and κ points.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a dataset: trajectory, true matrix and parameters.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Preset A-F or `custom` (then `data.blocks` is required).
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of observed steps K.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Estimate A from a directory written by `simulate`.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// graphem, stableem, mlem or oracleem.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        kappa: Option<f64>,
        /// Seed of the random diagonal starting matrix.
        #[arg(long)]
        seed: Option<u64>,
        /// 0/1 CSV support mask (required by oracleem).
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Monte Carlo comparison of methods over datasets.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated dataset presets.
        #[arg(long)]
        datasets: Option<String>,
        /// Comma-separated methods (graphem, stableem, mlem, oracleem, pgc, cgc).
        #[arg(long)]
        methods: Option<String>,
        /// Realizations per dataset.
        #[arg(long)]
        n: Option<usize>,
        /// One value fixes κ; a list is searched on a validation realization.
        #[arg(long)]
        kappa: Option<String>,
        /// Base seed; realization r uses seed + r.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write per-run matrices and traces.
        #[arg(long)]
        save_runs: bool,
    },
    /// BER and RMSE of GraphEM versus MLEM on a channel dataset.
    Channel {
        #[command(flatten)]
        common: Common,
        /// E or F.
        #[arg(long)]
        dataset: Option<String>,
        /// Comma-separated κ grid.
        #[arg(long)]
        kappa: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Test steps.
        #[arg(long)]
        k_test: Option<usize>,
        /// Data symbols per test step.
        #[arg(long)]
        symbols: Option<usize>,
    },
    /// Granger-causality graph of the observations in a data directory.
    Granger {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// pgc or cgc.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Fit { .. } => "fit",
            Command::Bench { .. } => "bench",
            Command::Channel { .. } => "channel",
            Command::Granger { .. } => "granger",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration.
    Usage(String),
    /// The run itself failed or some realizations did not complete.
    Failed(String),
}

impl From<graphem::Error> for CliError {
    fn from(e: graphem::Error) -> Self {
        match e {
            graphem::Error::InvalidConfig(_) | graphem::Error::Parse(_) => CliError::Usage(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

fn error_line(command: &str, kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "command": command, "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRAPHEM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let message = e.kind().to_string();
            eprintln!("{}", error_line("-", "usage", &message));
            return ExitCode::from(2);
        }
    };
    let name = cli.command.name();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("{}", error_line(name, "usage", &msg));
            ExitCode::from(2)
        }
        Err(CliError::Failed(msg)) => {
            eprintln!("{}", error_line(name, "failed", &msg));
            ExitCode::from(1)
        }
    }
}
