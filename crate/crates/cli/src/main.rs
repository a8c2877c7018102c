use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use coalition_core::simulator::ComparisonKind;
use coalition_core::CoreError;

mod commands;
mod overrides;
mod output;

/// Exit statuses. Clap itself exits with 2 on malformed arguments.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CHECKS_FAILED: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const VALIDATION: u8 = 3;
    pub const SOLVER: u8 = 4;
}

pub const DATA_DIR_ENV: &str = "CLIMCLUB_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Scenario,
    MinTau,
    Compare,
    Sweep,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CompareArg {
    Instrument,
    Cooperation,
    Tipping,
}

impl From<CompareArg> for ComparisonKind {
    fn from(c: CompareArg) -> Self {
        match c {
            CompareArg::Instrument => ComparisonKind::Instrument,
            CompareArg::Cooperation => ComparisonKind::Cooperation,
            CompareArg::Tipping => ComparisonKind::Tipping,
        }
    }
}

/// Climate coalition games with stochastic tipping events.
#[derive(Debug, Parser)]
#[command(name = "climclub", version)]
pub struct Args {
    /// Scenario configuration (TOML). Required except for sweep and verify.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "scenario")]
    pub mode: Mode,

    /// Override a configuration key, e.g. `--set rate=0.05` or
    /// `--set 'tipping=[{year=2050, loss_pct=0.04}]'`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,

    /// Parallel cases in sweep mode.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,

    /// Which comparison to run in compare mode.
    #[arg(long, value_enum, default_value = "cooperation")]
    pub compare: CompareArg,

    /// Case grid (TOML) for sweep mode; the standard 90-case grid by default.
    #[arg(long)]
    pub grid: Option<PathBuf>,

    /// Comma-separated criterion ids for verify mode; all by default.
    #[arg(long, value_delimiter = ',')]
    pub criteria: Option<Vec<u32>>,

    /// Directory holding the region table and reference emissions
    /// [default: $CLIMCLUB_DATA_DIR, else ./data].
    #[arg(long)]
    pub data_dir: Option<PathBuf>,

    /// Suppress the per-decade summary.
    #[arg(long, short)]
    pub quiet: bool,
}

impl Args {
    pub fn data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }
}

/// Failure carrying its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: exit::USAGE,
            message: message.into(),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure {
            code: if e.is_solver_failure() {
                exit::SOLVER
            } else {
                exit::VALIDATION
            },
            message: e.to_string(),
        }
    }
}

pub fn existing(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} {} not found", path.display())))
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = match args.mode {
        Mode::Scenario => commands::scenario(&args),
        Mode::MinTau => commands::min_tau(&args),
        Mode::Compare => commands::compare(&args),
        Mode::Sweep => commands::sweep(&args),
        Mode::Verify => commands::verify(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("climclub: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
