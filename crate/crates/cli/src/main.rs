//! `vlrr` — train, evaluate, and inspect cross-resolution recognition
//! models from the command line. Every run is a pure function of its
//! inputs and `--seed`: repeating an invocation reproduces each output file
//! byte for byte.
//!
//! Exit codes: 0 success, 2 bad usage or configuration, 1 anything else.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use vlrr_cli::{eval, prepare, run, search};
use vlrr_core::exec::Exec;
use vlrr_core::Result;

#[derive(Parser)]
#[command(
    name = "vlrr",
    version,
    about = "Training harness for recognition on very low resolution images"
)]
struct Cli {
    /// Worker threads for the data-parallel kernels (1 = sequential).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write dataset archives: a source set, its degraded preview, and a
    /// manifest with content hashes.
    Prepare(prepare::PrepareArgs),
    /// Execute a training plan, writing checkpoints, curves, and metrics.
    Run {
        /// Plan file (`key = value` lines; see the project README).
        #[arg(long)]
        plan: PathBuf,
        /// Root seed for initialisation, shuffling, noise, and corruption.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify a dataset archive with a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Archive of images to classify (standardised per image).
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated k values for top-k error, e.g. `1,5`.
        #[arg(long, default_value = "1")]
        topk: String,
    },
    /// Grid-search the per-layer shared-filter fractions of a dual plan.
    Search {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in verification suites and report every check.
    Selfcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        Exec::set_global_threads(jobs);
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Prepare(args) => {
            prepare::cmd_prepare(&args)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { plan, seed, out } => {
            run::cmd_run(&plan, seed, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            checkpoint,
            data,
            topk,
        } => {
            eval::cmd_eval(&checkpoint, &data, &topk)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Search { plan, seed, out } => {
            search::cmd_search(&plan, seed, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Selfcheck => {
            let checks = vlrr_core::verify::all_suites(Exec::global())?;
            print!("{}", vlrr_core::verify::render(&checks));
            if vlrr_core::verify::all_passed(&checks) {
                println!("selfcheck: {} checks passed", checks.len());
                Ok(ExitCode::SUCCESS)
            } else {
                println!(
                    "selfcheck: {} of {} checks failed",
                    checks.iter().filter(|c| !c.passed).count(),
                    checks.len()
                );
                Ok(ExitCode::FAILURE)
            }
        }
    }
}
