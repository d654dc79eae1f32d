//! Command-line front end for lottery-ticket experiments: config parsing,
//! sweep execution, CSV results, verification and charts.

pub mod chart;
pub mod config;
pub mod experiment;
pub mod results;
pub mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::ExperimentConfig;
use crate::experiment::{load_datasets, Experiment};
use crate::results::{CsvSink, ResultRow, Table};

/// Files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub csv: PathBuf,
    pub charts: Vec<PathBuf>,
    pub rows: Vec<ResultRow>,
}

/// Runs every job of `cfg`, writing `<name>-results.csv` row by row and one
/// chart per metric into the output directory.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    output_dir: Option<&Path>,
    workers: usize,
    log: impl FnMut(&str),
) -> Result<RunOutput> {
    let (train, test) = load_datasets(cfg)?;
    let exp = Experiment::new(cfg, &train, &test)?;
    let csv = experiment::results_path(cfg, output_dir);
    let dir = csv.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let file = fs::File::create(&csv).with_context(|| format!("cannot create {}", csv.display()))?;
    let mut sink = CsvSink::new(std::io::BufWriter::new(file))?;
    let rows = experiment::execute(&exp, workers, &mut sink, log)?;
    drop(sink.into_inner()?);

    let table = Table::read(&csv)?;
    let mut charts = Vec::new();
    for metric in chart::available_metrics(&table) {
        let spec = chart::ChartSpec::new(metric);
        let title = format!("{} {metric}", exp.arch.name);
        let svg = chart::render(&table, &spec, &title)?;
        let path = dir.join(format!("{}-{}-{metric}.svg", cfg.name, exp.arch.name));
        fs::write(&path, svg).with_context(|| format!("cannot write {}", path.display()))?;
        charts.push(path);
    }
    Ok(RunOutput { csv, charts, rows })
}
