//! `sida`: run assimilation scenarios and extract plot data.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sida_core::harness::{emit_plot_data, load_run_dir, run_scenario, write_run_dir, write_truth_dir, PlotRequest};
use sida_core::harness::ScenarioConfig;
use sida_core::metrics::summarize;
use sida_core::Error;

#[derive(Parser)]
#[command(name = "sida", version, about = "Structurally informed ETKF experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its output directory.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the truth at every assimilation time.
    TruthGen {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the summary metrics of a finished run.
    Metrics { run_dir: PathBuf },
    /// Emit plot-ready CSV: `metrics`, `cross_section(<y>,<t>)` or
    /// `stats_field(<variance|grad_x|grad_y|grad_diag>,<t>)`.
    PlotData {
        run_dir: PathBuf,
        #[arg(long)]
        what: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let record = run_scenario(&cfg)?;
            write_run_dir(&record, &out)?;
            match &record.summary {
                Some(s) => println!("{s}"),
                None => println!("no assimilation cycles"),
            }
        }
        Command::TruthGen { config, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let n = write_truth_dir(&cfg, &out)?;
            println!("wrote {n} truth fields");
        }
        Command::Metrics { run_dir } => {
            let record = load_run_dir(&run_dir)?;
            let s = summarize(&record.metrics)?;
            println!("{s}");
        }
        Command::PlotData { run_dir, what, out } => {
            let request: PlotRequest = what.parse()?;
            let record = load_run_dir(&run_dir)?;
            let csv = emit_plot_data(&record, &request)?;
            std::fs::write(&out, csv).map_err(|e| Error::Io { path: out.clone(), source: e })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}
