use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use gslab_cli::commands::{self, write_atomic, Report};
use gslab_cli::config::RunConfig;
use serde_json::json;

#[derive(Parser)]
#[command(name = "gslab", version, about = "Numerical experiments for Schrödinger-type Cauchy problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "gslab-out")]
    out: PathBuf,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed for randomized estimates; recorded in the report.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Crank-Nicolson run of a built-in example against its exact solution.
    Solve(RunConfig),
    /// Residual, coefficient hypotheses and membership of an example.
    VerifyExample(RunConfig),
    /// Transport sign condition of the conjugating symbol.
    SymbolCheck(RunConfig),
    /// Neumann remainder over a ladder of bracket parameters.
    ConjugationCheck(RunConfig),
    /// Gronwall constant of the conjugated evolution.
    Energy(RunConfig),
    /// Decay-loss classification on both sides of the threshold.
    Sharpness(RunConfig),
    /// Truncated weighted norms of an exact solution over growing boxes.
    NormSweep(RunConfig),
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(2)
}

/// `input` for anything rejected before computing, `io` for the filesystem and
/// `computation` for numerical failures.
fn error_kind(e: &anyhow::Error) -> &'static str {
    use gslab::Error as E;
    match e.downcast_ref::<E>() {
        Some(E::InvalidGrid(_) | E::InvalidParameter { .. } | E::AxisOutOfRange { .. } | E::SizeCap(_)) => "input",
        Some(E::Io(_)) => "io",
        Some(_) => "computation",
        None if e.downcast_ref::<std::io::Error>().is_some() => "io",
        None => "input",
    }
}

fn run(cli: Cli) -> Result<Report> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let (flags, cmd): (&RunConfig, fn(&RunConfig, &std::path::Path, u64) -> Result<Report>) = match &cli.command {
        Command::Solve(c) => (c, commands::solve_cmd),
        Command::VerifyExample(c) => (c, commands::verify_example_cmd),
        Command::SymbolCheck(c) => (c, commands::symbol_check_cmd),
        Command::ConjugationCheck(c) => (c, commands::conjugation_check_cmd),
        Command::Energy(c) => (c, commands::energy_cmd),
        Command::Sharpness(c) => (c, commands::sharpness_cmd),
        Command::NormSweep(c) => (c, commands::norm_sweep_cmd),
    };
    let base = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let cfg = base.overlay(flags)?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let report = cmd(&cfg, &cli.out, cli.seed)?;
    write_atomic(&cli.out.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string()),
    };
    match run(cli) {
        Ok(report) => {
            println!("{}: {}", report.command, if report.pass { "pass" } else { "fail" });
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            fail(error_kind(&e), format!("{e:#}"))
        }
    }
}
