use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use jacspec::Execution;

mod commands;
mod overrides;

const THREADS_ENV: &str = "JACSPEC_THREADS";

#[derive(Parser)]
#[command(
    name = "jacspec",
    version,
    about = "Jacobian singular-value spectra of deep random networks"
)]
struct Cli {
    /// Worker threads (default: $JACSPEC_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Field overrides, e.g. `--solver.step-base 1.3`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--FIELD VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Variance fixed point and chi; solves for critical sigma_w if omitted.
    FixedPoint(RunArgs),
    /// Fixed point and chi over a (sigma_w, sigma_b) grid, written as CSV.
    PhaseGrid(RunArgs),
    /// Solve the master equation for the Jacobian spectral density.
    TheorySpectrum(RunArgs),
    /// Monte Carlo singular values of sampled network Jacobians.
    Simulate(RunArgs),
    /// Simulation vs theory: KS distance and moment deltas.
    Compare(RunArgs),
    /// Infinite-depth limiting density.
    Limit(RunArgs),
    /// Exact first and second spectral moments.
    Moments(RunArgs),
}

fn load<T: DeserializeOwned>(args: &RunArgs) -> Result<T> {
    let mut doc = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Value::Object(Default::default()),
    };
    overrides::apply(&mut doc, &overrides::parse(&args.overrides)?)?;
    serde_json::from_value(doc).context("invalid config")
}

fn configure_threads(cli_threads: Option<usize>) -> Result<()> {
    let n = match cli_threads {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().with_context(|| format!("{THREADS_ENV}={v:?}"))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring thread pool")?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    configure_threads(cli.threads)?;
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };

    let (name, out) = match &cli.command {
        Command::FixedPoint(a) => ("fixed-point", commands::fixed_point(load(a)?)?),
        Command::PhaseGrid(a) => ("phase-grid", commands::phase_grid_cmd(load(a)?, exec)?),
        Command::TheorySpectrum(a) => ("theory-spectrum", commands::theory_spectrum(load(a)?, exec)?),
        Command::Simulate(a) => ("simulate", commands::simulate_cmd(load(a)?, exec)?),
        Command::Compare(a) => ("compare", commands::compare(load(a)?, exec)?),
        Command::Limit(a) => ("limit", commands::limit(load(a)?, exec)?),
        Command::Moments(a) => ("moments", commands::moments(load(a)?)?),
    };
    let provenance = json!({
        "command": name,
        "version": env!("CARGO_PKG_VERSION"),
        "execution": exec,
        "config": out.config,
        "result": out.result,
    });
    println!("{}", serde_json::to_string_pretty(&provenance)?);
    Ok(())
}
