use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use teamsim::simrunner::{build_config, export_csv, run_scenario, summarize, Overrides, RunError, ScenarioKind};

#[derive(Parser)]
#[command(name = "teamsim", version, about = "Lockstep multi-robot coordination simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write trace.jsonl, summary.json and config.json.
    Run {
        scenario: ScenarioKind,
        #[arg(short = 'n')]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        duration: Option<f64>,
        /// `complete`, `er:<p>`, or an adjacency-matrix file.
        #[arg(long)]
        graph: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// JSON config; command-line values override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Recompute summary metrics from a trace.
    Summarize { trace: PathBuf },
    /// Write plot-ready CSV tables from a trace.
    ExportCsv {
        trace: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("teamsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.cmd {
        Cmd::Run {
            scenario,
            n,
            seed,
            dt,
            duration,
            graph,
            out,
            config,
        } => {
            let text = match &config {
                Some(p) => Some(std::fs::read_to_string(p).map_err(|e| {
                    RunError::Config(teamsim::simrunner::ConfigError {
                        path: String::new(),
                        msg: format!("{}: {e}", p.display()),
                    })
                })?),
                None => None,
            };
            let o = Overrides {
                scenario: Some(scenario),
                n,
                seed,
                dt,
                duration,
                graph,
            };
            let cfg = build_config(text.as_deref(), &o)?;
            let summary = run_scenario(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Cmd::Summarize { trace } => {
            println!("{}", serde_json::to_string_pretty(&summarize(&trace)?)?);
        }
        Cmd::ExportCsv { trace, out } => {
            for p in export_csv(&trace, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
