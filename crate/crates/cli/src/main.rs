use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use sofic_spectra::experiment::{self, ExperimentConfig};
use sofic_spectra::par::init_threads;
use sofic_spectra::Execution;

#[derive(Parser)]
#[command(name = "sofic-spectra", version, about = "Spectral statistics on sofic approximations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config (or re-run a manifest).
    Run {
        config: PathBuf,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 1 runs everything sequentially.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Tabulate convergence across run manifests.
    Compare {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<bool> {
    match Cli::parse().command {
        Command::Run { config, out, threads } => {
            init_threads(threads);
            let exec = if threads == Some(1) {
                Execution::Sequential
            } else {
                Execution::Parallel
            };
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let manifest = experiment::run(&cfg, out.as_deref(), exec)?;
            for c in manifest.invariants.iter().filter(|c| !c.passed) {
                eprintln!("invariant failed: {} ({})", c.name, c.detail);
            }
            let total: f64 = manifest.timings.iter().map(|t| t.seconds).sum();
            println!(
                "{} [{}]: {} outputs, {}/{} invariants passed, {total:.2}s",
                manifest.name,
                manifest.pipeline.as_str(),
                manifest.outputs.len(),
                manifest.invariants.iter().filter(|c| c.passed).count(),
                manifest.invariants.len(),
            );
            Ok(manifest.invariants_passed)
        }
        Command::Compare { manifests, json } => {
            let report = experiment::compare(&manifests)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_table());
            }
            Ok(true)
        }
    }
}
