//! Result rows and their CSV form.
//!
//! Columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | experiment, network | config name and architecture name |
//! | k | rewind iteration |
//! | level | 0 for the full network, pruning level otherwise |
//! | sparsity, surviving | fraction of prunable weights removed / kept |
//! | variant | full, imp, random, reinit or snip |
//! | replicate_seed | seed of the replicate |
//! | accuracy | final test accuracy in [0, 1] |
//! | iterations | optimizer steps of the accuracy run |
//! | total_iterations | T* |
//! | {data_order,pruning}_{distance,angle}[_min,_max] | stability mean and band |
//! | stability_iterations | distinct step counts of the stability runs, `;`-joined |
//! | wall_seconds | wall-clock time spent on the row |
//!
//! Numbers use `.` as the decimal mark, no grouping and at most 12
//! significant digits. Empty cells mean "not measured".

use std::io::Write;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Full,
    Imp,
    Random,
    Reinit,
    Snip,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::Imp, Variant::Random, Variant::Reinit, Variant::Snip];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Imp => "imp",
            Variant::Random => "random",
            Variant::Reinit => "reinit",
            Variant::Snip => "snip",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// Mean, min and max of one stability measurement.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Band {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Band {
    pub fn from_report(r: &lth_core::StabilityReport) -> Self {
        Band {
            mean: r.mean,
            min: r.min,
            max: r.max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Stability {
    pub data_order_distance: Option<Band>,
    pub data_order_angle: Option<Band>,
    pub pruning_distance: Option<Band>,
    pub pruning_angle: Option<Band>,
    pub iterations: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub network: String,
    pub k: u64,
    pub level: usize,
    pub surviving: f64,
    pub variant: Variant,
    pub replicate_seed: u64,
    pub accuracy: f64,
    pub iterations: u64,
    pub total_iterations: u64,
    pub stability: Stability,
    pub wall_seconds: f64,
}

pub const COLUMNS: &[&str] = &[
    "experiment",
    "network",
    "k",
    "level",
    "sparsity",
    "surviving",
    "variant",
    "replicate_seed",
    "accuracy",
    "iterations",
    "total_iterations",
    "data_order_distance",
    "data_order_distance_min",
    "data_order_distance_max",
    "data_order_angle",
    "data_order_angle_min",
    "data_order_angle_max",
    "pruning_distance",
    "pruning_distance_min",
    "pruning_distance_max",
    "pruning_angle",
    "pruning_angle_min",
    "pruning_angle_max",
    "stability_iterations",
    "wall_seconds",
];

/// At most 12 significant digits, shortest form that reads back the same.
pub fn format_number(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    let s = rounded.to_string();
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn band_cells(b: &Option<Band>) -> [String; 3] {
    match b {
        Some(b) => [format_number(b.mean), format_number(b.min), format_number(b.max)],
        None => Default::default(),
    }
}

impl ResultRow {
    pub fn sparsity(&self) -> f64 {
        1.0 - self.surviving
    }

    pub fn cells(&self) -> Vec<String> {
        let s = &self.stability;
        let mut its = s.iterations.clone();
        its.sort_unstable();
        its.dedup();
        let mut out = vec![
            self.experiment.clone(),
            self.network.clone(),
            self.k.to_string(),
            self.level.to_string(),
            format_number(self.sparsity()),
            format_number(self.surviving),
            self.variant.name().to_string(),
            self.replicate_seed.to_string(),
            format_number(self.accuracy),
            self.iterations.to_string(),
            self.total_iterations.to_string(),
        ];
        for b in [&s.data_order_distance, &s.data_order_angle, &s.pruning_distance, &s.pruning_angle] {
            out.extend(band_cells(b));
        }
        out.push(its.iter().map(u64::to_string).collect::<Vec<_>>().join(";"));
        out.push(format_number(self.wall_seconds));
        out
    }
}

/// Writes rows as they arrive, flushing after each one.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(COLUMNS)?;
        writer.flush()?;
        Ok(CsvSink { writer })
    }

    pub fn write(&mut self, row: &ResultRow) -> Result<()> {
        self.writer.write_record(row.cells())?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.writer.into_inner().map_err(|e| anyhow::anyhow!("{}", e.error()))
    }
}

/// A results file read back as strings, for verification and charting.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &std::path::Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.with_context(|| format!("malformed row in {}", path.display()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        match self.headers.iter().position(|h| h == name) {
            Some(i) => Ok(i),
            None => bail!("no column `{name}`"),
        }
    }

    /// Cell as a number; `None` when empty.
    pub fn number(&self, row: usize, col: usize) -> Result<Option<f64>> {
        let cell = &self.rows[row][col];
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse()
            .map(Some)
            .with_context(|| format!("row {}: `{cell}` in `{}` is not a number", row + 1, self.headers[col]))
    }
}
