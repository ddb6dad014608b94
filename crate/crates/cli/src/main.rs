//! `medformer` command line: synthetic data generation, training,
//! evaluation, the module ablation, and the attention-cost benchmark.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 usage/config error.

mod config;
mod runner;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{AppError, RunArgs};
use runner::{BenchArgs, EvalArgs, SynthArgs};

#[derive(Parser)]
#[command(
    name = "medformer",
    version,
    about = "Multi-granularity patching transformer for multivariate time-series classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset in the canonical format.
    SynthGen(SynthArgs),
    /// Split, train (one run per seed), and evaluate on the test part.
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset (or its test split).
    Eval(EvalArgs),
    /// Train and test all four model variants, emitting the metrics table.
    Ablate(RunArgs),
    /// Attention-cost sweep: analytic vs instrumented pair counts and timing.
    Bench(BenchArgs),
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::SynthGen(args) => runner::cmd_synth(&args),
        Command::Train(args) => runner::cmd_train(&args),
        Command::Eval(args) => runner::cmd_eval(&args),
        Command::Ablate(args) => runner::cmd_ablate(&args),
        Command::Bench(args) => runner::cmd_bench(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ AppError::Config(_)) => {
            eprintln!("error: {}", err);
            ExitCode::from(2)
        }
        Err(err @ AppError::Runtime(_)) => {
            eprintln!("error: {}", err);
            ExitCode::from(1)
        }
    }
}
