use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lth_cli::chart::{render, ChartSpec};
use lth_cli::results::Table;
use lth_cli::{config, experiment, run_experiment, verify};

/// Lottery-ticket experiments: run sweeps, verify results, draw charts.
///
/// Exit status: 0 on success, 1 when a run fails or an assertion does not
/// hold, 2 on usage, config or expectation-file errors.
#[derive(Parser)]
#[command(name = "lth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file.
    ///
    /// Worker threads come from LTH_WORKERS (default: available cores).
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Do not log finished jobs.
        #[arg(long)]
        quiet: bool,
    },
    /// Check a results CSV against an expectations file.
    Verify { csv: PathBuf, expectations: PathBuf },
    /// Draw one metric from a results CSV as SVG.
    Chart {
        csv: PathBuf,
        #[arg(long)]
        metric: String,
        /// Column on the x axis.
        #[arg(long, default_value = "k")]
        x: String,
        /// Pruning level to plot (default: deepest level with values).
        #[arg(long)]
        level: Option<usize>,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn usage(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn failure(e: anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            output_dir,
            quiet,
        } => {
            let cfg = match config::load_config(&config) {
                Ok(c) => c,
                Err(e) => return usage(e),
            };
            let workers = match experiment::worker_count() {
                Ok(n) => n,
                Err(e) => return usage(e),
            };
            let log = |msg: &str| {
                if !quiet {
                    eprintln!("{msg}");
                }
            };
            match run_experiment(&cfg, output_dir.as_deref(), workers, log) {
                Ok(out) => {
                    println!("{} rows -> {}", out.rows.len(), out.csv.display());
                    for c in &out.charts {
                        println!("chart -> {}", c.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => failure(e),
            }
        }
        Command::Verify { csv, expectations } => {
            let table = match Table::read(&csv) {
                Ok(t) => t,
                Err(e) => return usage(format!("{e:#}")),
            };
            let text = match std::fs::read_to_string(&expectations) {
                Ok(t) => t,
                Err(e) => return usage(format!("cannot read {}: {e}", expectations.display())),
            };
            let outcomes = match verify::verify(&table, &text) {
                Ok(o) => o,
                Err(e) => return usage(format!("{}: {e}", expectations.display())),
            };
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            for o in &outcomes {
                println!("{o}");
            }
            println!("{} of {} assertions passed", outcomes.len() - failed, outcomes.len());
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Chart {
            csv,
            metric,
            x,
            level,
            out,
        } => {
            let table = match Table::read(&csv) {
                Ok(t) => t,
                Err(e) => return usage(format!("{e:#}")),
            };
            let spec = ChartSpec { metric, x, level };
            let title = csv.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            let svg = match render(&table, &spec, &title) {
                Ok(s) => s,
                Err(e) => return usage(format!("{e:#}")),
            };
            match out {
                Some(path) => match std::fs::write(&path, svg) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => failure(anyhow::anyhow!("cannot write {}: {e}", path.display())),
                },
                None => {
                    print!("{svg}");
                    ExitCode::SUCCESS
                }
            }
        }
    }
}
