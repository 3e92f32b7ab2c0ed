// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]
mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coexist_core::analysis::Runner;
use coexist_core::error::{config as config_error, Error};
use serde_json::json;

use commands::{execute, needs_seed, prepare, Ctx};
use output::{plot_csv, OutDir};

#[derive(Parser)]
#[command(
    name = "coexist",
    version,
    about = "Two-type contact process with forest fires"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run trajectories of one process variant.
    Simulate(Flags),
    /// Run another subcommand over a grid of one numeric parameter.
    Sweep(Flags),
    /// Estimate the contact-process critical value by bisection.
    LambdaC(Flags),
    /// Estimate the finite-box block events.
    BlockProb(Flags),
    /// Measure the growth set of a Richardson or contact process.
    Shape(Flags),
    /// Colonization of a cleared gap by a type-1 immigrant.
    Gap(Flags),
    /// Propagation of type-1 sources across the block grid.
    Source(Flags),
    /// Long coexistence runs with a paired fire-free control.
    Coexist(Flags),
    /// Evaluate the closed-form bounds; no simulation.
    Formulas(Flags),
}

#[derive(clap::Args)]
struct Flags {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<u64>,
    /// 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "T")]
    snapshot_every: Option<f64>,
}

impl Command {
    fn parts(self) -> (&'static str, Flags) {
        match self {
            Command::Simulate(f) => ("simulate", f),
            Command::Sweep(f) => ("sweep", f),
            Command::LambdaC(f) => ("lambda-c", f),
            Command::BlockProb(f) => ("block-prob", f),
            Command::Shape(f) => ("shape", f),
            Command::Gap(f) => ("gap", f),
            Command::Source(f) => ("source", f),
            Command::Coexist(f) => ("coexist", f),
            Command::Formulas(f) => ("formulas", f),
        }
    }
}

const DEFAULT_REPLICATES: u64 = 100;

fn run(name: &str, flags: Flags) -> Result<(), Error> {
    let path = flags
        .config
        .clone()
        .ok_or_else(|| config_error("--config is required"))?;
    let (config_text, table) = config::read_table(&path)?;
    let prepared = prepare(name, &table)?;
    let seed = match (flags.seed, needs_seed(&prepared)) {
        (Some(s), _) => s,
        (None, false) => 0,
        (None, true) => return Err(config_error("--seed is required")),
    };
    if flags.replicates == Some(0) {
        return Err(config_error("--replicates must be >= 1"));
    }
    if let Some(dt) = flags.snapshot_every {
        if !(dt > 0.0) {
            return Err(config_error("--snapshot-every must be > 0"));
        }
    }
    let ctx = Ctx {
        seed,
        replicates: flags.replicates.unwrap_or(DEFAULT_REPLICATES),
        replicates_flag: flags.replicates.is_some(),
        runner: Runner::new(flags.workers)?,
        snapshot_every: flags.snapshot_every,
    };
    let out = OutDir {
        root: flags.out.clone().unwrap_or_else(|| PathBuf::from("out")),
    };
    out.log(&format!(
        "start {name} config={} seed={seed}",
        path.display()
    ))?;
    let started = std::time::Instant::now();
    let report = execute(&prepared, &ctx)?;

    let echo = serde_json::to_value(&table).map_err(output::runtime)?;
    let result = json!({
        "subcommand": name,
        "seed": seed,
        "replicates": ctx.replicates,
        "config": echo,
        "config_text": config_text,
        "result": report.result,
    });
    let text = serde_json::to_string_pretty(&result).map_err(output::runtime)?;
    out.write("result.json", &(text + "\n"))?;
    if let Some(s) = &report.series {
        out.write("series.csv", s)?;
    }
    if let Some(s) = &report.raw {
        out.write("raw.csv", s)?;
    }
    for (file, text) in &report.snapshots {
        out.write(&format!("snapshots/{file}"), text)?;
    }
    out.write("plotdata.csv", &plot_csv(&report.plot))?;
    out.log(&format!(
        "done {name} in {:.3}s",
        started.elapsed().as_secs_f64()
    ))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (name, flags) = cli.command.parts();
    match run(name, flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Precondition(_) | Error::Normalization { .. } => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(3),
            }
        }
    }
}
