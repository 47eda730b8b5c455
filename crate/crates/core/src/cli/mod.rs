//! Command-line experiment driver.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{ExperimentConfig, LoadedConfig};
pub use pipeline::{execute, selftest, Command, Outcome, RunOptions, VERSION};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Precondition(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hypercone", version, about = "Finite propagation speed experiments for first-order hyperbolic systems")]
pub struct Args {
    #[command(subcommand)]
    pub command: Sub,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "HYPERCONE_THREADS")]
    pub threads: Option<usize>,
    /// RNG seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only run the named checks (repeatable).
    #[arg(long = "check", global = true)]
    pub checks: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Sub {
    /// Classify, build the symmetrizer, solve, and run the enabled checks.
    Run,
    /// Solve and write snapshots only.
    Simulate,
    /// Validate the symmetrizer and its adjoint.
    VerifySymmetrizer,
    /// Mollification error bounds.
    MollifierReport,
    /// Support radius against the cone of influence.
    ConeReport,
    /// Growth of the Fourier–Laplace transform.
    PwProbe,
    /// Energies, envelopes, and high-frequency integrals.
    EnergyReport,
    /// Checks that broken inputs are caught.
    Selftest,
}

fn dispatch(args: &Args) -> Result<Outcome, CliError> {
    let opts = RunOptions { out: args.out.clone(), seed: args.seed, checks: args.checks.clone() };
    let command = match args.command {
        Sub::Selftest => return selftest(&opts),
        Sub::Run => Command::Run,
        Sub::Simulate => Command::Simulate,
        Sub::VerifySymmetrizer => Command::VerifySymmetrizer,
        Sub::MollifierReport => Command::MollifierReport,
        Sub::ConeReport => Command::ConeReport,
        Sub::PwProbe => Command::PwProbe,
        Sub::EnergyReport => Command::EnergyReport,
    };
    let path = args.config.as_ref().ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let cfg = LoadedConfig::from_path(path)?;
    execute(command, &cfg, &opts)
}

/// Runs `f` on a pool of `threads` workers, or the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(k).build().map_err(|e| CliError::Runtime(e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Parses `args`, runs the subcommand, prints one line per check, and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let result = with_threads(args.threads, || dispatch(&args)).and_then(|r| r);
    match result {
        Ok(outcome) => {
            for (name, pass) in &outcome.checks {
                println!("{name}: {}", if *pass { "PASS" } else { "FAIL" });
            }
            println!("reports: {}", outcome.out_dir.display());
            if outcome.pass() {
                EXIT_PASS
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
