//! `qcd`: bounds, exact oracle values and simulations for the time-varying
//! threshold CuSum detector, written as CSV with a JSON run manifest.

mod commands;
mod config;

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::Table;
use config::{CommonArgs, ExperimentConfig, Needs, UsageError};

const EXIT_USAGE: u8 = 2;
const EXIT_CERTIFICATION: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "qcd",
    version,
    about = "Finite-horizon quickest change detection with a time-varying threshold"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo estimates of false alarm, miss probability or latency
    Simulate(CommonArgs),
    /// Upper and lower latency bounds with the upper bound's components
    Bounds(CommonArgs),
    /// Exact values for discrete pairs, with pass/fail verdicts
    Oracle(CommonArgs),
    /// Latency versus horizon: empirical, bounds and (optionally) exact
    Sweep(CommonArgs),
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    resolved_seed: u64,
    tool_version: String,
    started_at: String,
    wall_time_secs: f64,
    csv: Option<&'a Path>,
}

fn write_csv(table: &Table, sink: impl Write) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let clock = Instant::now();
    let (cfg, table) = match cli.command {
        Command::Simulate(args) => {
            let cfg = config::resolve("simulate", args, Needs::default())?;
            let table = commands::simulate(&cfg)?;
            (cfg, table)
        }
        Command::Bounds(args) => {
            let needs = Needs {
                delta_d: true,
                lower_bound: true,
                tvt: true,
            };
            let cfg = config::resolve("bounds", args, needs)?;
            let table = commands::bounds(&cfg)?;
            (cfg, table)
        }
        Command::Oracle(args) => {
            let cfg = config::resolve("oracle", args, Needs::default())?;
            let table = commands::oracle(&cfg)?;
            (cfg, table)
        }
        Command::Sweep(args) => {
            let needs = Needs {
                delta_d: true,
                lower_bound: true,
                tvt: true,
            };
            let cfg = config::resolve("sweep", args, needs)?;
            let table = commands::sweep(&cfg)?;
            (cfg, table)
        }
    };

    match &cfg.out {
        Some(out) => {
            let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
            write_csv(&table, file)?;
            let manifest = Manifest {
                config: &cfg,
                resolved_seed: cfg.seed,
                tool_version: format!("qcd {}", env!("CARGO_PKG_VERSION")),
                started_at,
                wall_time_secs: clock.elapsed().as_secs_f64(),
                csv: Some(out),
            };
            let path = manifest_path(out);
            let json = serde_json::to_string_pretty(&manifest)?;
            std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        }
        None => write_csv(&table, io::stdout().lock())?,
    }
    Ok(!table.certification_failed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("qcd: certification failed (see verdict column)");
            ExitCode::from(EXIT_CERTIFICATION)
        }
        Err(e) if e.is::<UsageError>() => {
            eprintln!("qcd: usage error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("qcd: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
