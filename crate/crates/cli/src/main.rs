#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use secleak_cli::commands::{self, Flags};
use secleak_cli::CliError;

/// Rate, leakage and distortion bounds for secure lossy transmission of
/// vector Gaussian sources.
#[derive(Parser, Debug)]
#[command(name = "secleak", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file path, or a preset name (example1-default, example2-default)
    #[arg(long, global = true)]
    config: Option<String>,
    /// Seed for the solver restarts or the verification suites
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of random trials per verification suite
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Certification tolerance (overrides every suite tolerance in `verify`)
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Report information quantities in bits instead of nats
    #[arg(long, global = true)]
    bits: bool,
    #[arg(long, global = true)]
    out_json: Option<PathBuf>,
    #[arg(long, global = true)]
    out_csv: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bounds, optimal auxiliary pair and certificate at one distortion matrix
    Evaluate,
    /// CSV of the bounds along a linear distortion path
    Sweep,
    /// Run the randomized property suites
    Verify,
    /// Reproduce the scalar and parallel example tables
    Examples {
        #[arg(default_value = "all")]
        name: String,
    },
    /// Export the Gaussian auxiliary realization of the optimal pair
    Construct,
}

fn need_config(c: &Option<String>) -> Result<&str, CliError> {
    c.as_deref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let flags = Flags {
        seed: cli.seed,
        trials: cli.trials,
        tol: cli.tol,
        bits: cli.bits,
        out_json: cli.out_json.clone(),
        out_csv: cli.out_csv.clone(),
    };
    if let Some(t) = flags.tol {
        if !(t > 0.0) {
            return Err(CliError::Config("--tol must be positive".into()));
        }
    }
    match &cli.command {
        Command::Evaluate => commands::cmd_evaluate(need_config(&cli.config)?, &flags),
        Command::Sweep => commands::cmd_sweep(need_config(&cli.config)?, &flags),
        Command::Verify => commands::cmd_verify(&flags),
        Command::Examples { name } => commands::cmd_examples(name, &flags),
        Command::Construct => commands::cmd_construct(need_config(&cli.config)?, &flags),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
