//! `mecmig`: plan service placements, sweep experiment axes, and check the
//! solvers against brute force.
//!
//! Exit codes: 0 on success, 1 when a solver stopped before meeting its
//! tolerances (suppress with `--allow-nonconverged`), 2 for usage and
//! configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod run;

use commands::{HotspotOpts, OracleOpts, SolveOpts, SweepOpts};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exits 2.
    Usage(String),
    /// A solver gave up before its tolerances were met; exits 1.
    NonConvergence(String),
}

impl From<mecmig::Error> for CliError {
    fn from(err: mecmig::Error) -> Self {
        match err {
            mecmig::Error::NoConvergence(_) => CliError::NonConvergence(err.to_string()),
            _ => CliError::Usage(err.to_string()),
        }
    }
}

/// Sweepable experiment axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Population size, whole-band sharing.
    Users,
    /// Computation-rate degradation factor, all sites.
    Degradation,
    /// Upper speed bound of the mobility model, m/s.
    Vmax,
    /// Migration cost weight.
    Lambda,
    /// Population size, per-site spectrum split into blocks.
    #[value(name = "users_rb")]
    UsersRb,
}

#[derive(Parser)]
#[command(name = "mecmig", version, about = "Service migration planner and experiment driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; omit for built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; trial t uses seed + t.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the migration cost weight from the config.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one slot, solve it, and print the report.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Also write the report as CSV (one row per scheme).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit 0 even if the solver missed its tolerances.
        #[arg(long)]
        allow_nonconverged: bool,
        /// Also run exhaustive search and print the gap (small instances).
        #[arg(long)]
        oracle: bool,
    },
    /// Monte-Carlo sweep along one axis; emits aggregate CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Quantity varied across rows.
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Trials per axis value; defaults to the config's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep sweeping past trials that missed solver tolerances.
        #[arg(long)]
        allow_nonconverged: bool,
    },
    /// Offload dimensioning at a congested site, one row per population.
    Hotspot {
        #[command(flatten)]
        common: Common,
        /// Smallest population to evaluate.
        #[arg(long, default_value_t = 1)]
        k_min: u32,
        /// Largest population; defaults to twice the utility peak.
        #[arg(long)]
        k_max: Option<u32>,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the pipeline against exhaustive search over seeded trials.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Trials; defaults to the config's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Also write per-trial rows as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { common, out, allow_nonconverged, oracle } => {
            commands::cmd_solve(&SolveOpts {
                config: common.config,
                seed: common.seed,
                lambda: common.lambda,
                out,
                allow_nonconverged,
                oracle,
            })
        }
        Command::Sweep { common, axis, values, trials, out, allow_nonconverged } => {
            commands::cmd_sweep(&SweepOpts {
                config: common.config,
                seed: common.seed,
                lambda: common.lambda,
                axis,
                values,
                trials,
                out,
                allow_nonconverged,
            })
        }
        Command::Hotspot { common, k_min, k_max, out } => commands::cmd_hotspot(&HotspotOpts {
            config: common.config,
            lambda: common.lambda,
            k_min,
            k_max,
            out,
        }),
        Command::Oracle { common, trials, out } => commands::cmd_oracle(&OracleOpts {
            config: common.config,
            seed: common.seed,
            lambda: common.lambda,
            trials,
            out,
        }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::NonConvergence(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
