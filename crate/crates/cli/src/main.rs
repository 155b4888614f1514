//! `evolab`: runs a shipped model end to end, walks dt-halving convergence
//! ladders, and diffs two summary reports.
//!
//! Exit codes: 0 when every enabled verdict passes, 1 when an enabled verdict
//! fails (or a compared report flips one), 2 on usage or config errors.

mod compare;
mod ladder;
mod manifest;
mod outputs;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use evolab_core::Scheme;

#[derive(Parser)]
#[command(name = "evolab", version, about = "Desk laboratory for evolution families")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one model: verdict lines on stdout, summary.json and CSV tables in --out.
    Run(RunArgs),
    /// Re-run the estimators on a dt-halving ladder and report observed orders.
    ConvergenceStudy(StudyArgs),
    /// Diff two summary.json reports field by field.
    Compare(CompareArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Model config, TOML (or JSON with a .json extension).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the stepping scheme from the config.
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Override the probe seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Also run a convergence ladder with this many dt-halving rungs.
    #[arg(long)]
    ladder: Option<usize>,
    /// Worker threads for ladder rungs; defaults to the rayon heuristic.
    #[arg(long)]
    jobs: Option<usize>,
    /// Which verdicts gate the exit code: all, none, or a comma list of names.
    #[arg(long, default_value = "all")]
    verdicts: String,
}

#[derive(clap::Args)]
struct StudyArgs {
    /// Model config, TOML (or JSON with a .json extension).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of dt-halving rungs, at least 3 so observed orders stabilize.
    #[arg(long)]
    rungs: usize,
    /// Override the stepping scheme from the config.
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Override the probe seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ladder rungs; defaults to the rayon heuristic.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(clap::Args)]
struct CompareArgs {
    /// First summary.json.
    a: PathBuf,
    /// Second summary.json.
    b: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    /// Implicit Euler.
    Ie,
    /// Crank-Nicolson.
    Cn,
}

impl SchemeArg {
    fn to_scheme(self) -> Scheme {
        match self {
            SchemeArg::Ie => Scheme::ImplicitEuler,
            SchemeArg::Cn => Scheme::CrankNicolson,
        }
    }
}

/// Caps the wall-clock spent on ladder rungs; partial ladders are flagged
/// incomplete, not failed.
const BUDGET_ENV: &str = "EVOFAM_BUDGET_SECONDS";

fn init_jobs(jobs: Option<usize>) -> Result<(), String> {
    let Some(jobs) = jobs else { return Ok(()) };
    if jobs == 0 {
        return Err("--jobs must be at least 1".to_string());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| format!("cannot size the worker pool: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run::run(args),
        Command::ConvergenceStudy(args) => ladder::study_command(args),
        Command::Compare(args) => compare::compare(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
