//! Reproducible experiment runner for the spectral mild-solution engine.
//!
//! Every subcommand reads one TOML config, folds in the CLI overrides,
//! writes a manifest plus CSV tables into the output directory, and exits
//! with 0 on success, 2 on validation errors, 3 on convergence failures,
//! and 4 on estimate violations. Reruns with identical config and seed
//! produce byte-identical CSVs regardless of thread count.

mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use config::RunConfig;
use mildsim_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mildsim",
    version,
    about = "Mild solutions of semilinear stochastic evolution equations: \
             simulation runs and estimate verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run config file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the config realization count.
    #[arg(long, global = true)]
    realizations: Option<usize>,

    /// Overrides the config output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem and write solution summaries.
    Simulate,
    /// Check semigroup, convolution, isometry, and moment-ball inequalities.
    VerifyEstimates,
    /// Estimate the Hölder exponent and verify mean and maximal regularity.
    Regularity,
    /// Measure continuous dependence of solutions on the problem data.
    Dependence,
    /// Verify the singular-kernel Gronwall bound against its fixed point.
    Gronwall,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            report_error(&err);
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: &Cli) -> mildsim_core::Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::invalid("--config <PATH> is required"))?;
    let mut config = RunConfig::from_path(path)?;
    config.apply_overrides(cli.seed, cli.realizations, cli.out.as_deref());
    match cli.command {
        Command::Simulate => commands::simulate(&config),
        Command::VerifyEstimates => commands::verify_estimates(&config),
        Command::Regularity => commands::regularity(&config),
        Command::Dependence => commands::dependence(&config),
        Command::Gronwall => commands::gronwall(&config),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) | Error::DimensionMismatch { .. } => 2,
        Error::ConvergenceFailure(_) => 3,
        Error::ToleranceNotMet { .. } | Error::EstimateViolation(_) => 4,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::InvalidInput(_) | Error::DimensionMismatch { .. } => "validation",
        Error::ConvergenceFailure(_) => "convergence",
        Error::ToleranceNotMet { .. } | Error::EstimateViolation(_) => "estimate_violation",
    }
}

/// One TOML table on stderr; scripts can parse it without scraping text.
fn report_error(err: &Error) {
    let message = err.to_string().replace('\\', "\\\\").replace('"', "\\\"");
    eprintln!("[error]");
    eprintln!("kind = \"{}\"", error_kind(err));
    eprintln!("exit_code = {}", exit_code(err));
    eprintln!("message = \"{message}\"");
}
