//! SVG line charts of one metric against rewind iteration (or another
//! numeric column), one line per variant with a shaded min/max band.

use std::fmt::Write as _;

use anyhow::{bail, Result};

use crate::results::{format_number, Table, Variant};

pub const METRICS: [&str; 5] = [
    "accuracy",
    "data_order_distance",
    "data_order_angle",
    "pruning_distance",
    "pruning_angle",
];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn color(v: Variant) -> &'static str {
    match v {
        Variant::Full => "#444444",
        Variant::Imp => "#1f77b4",
        Variant::Random => "#d62728",
        Variant::Reinit => "#2ca02c",
        Variant::Snip => "#9467bd",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartSpec {
    pub metric: String,
    /// Column on the x axis.
    pub x: String,
    /// Pruning level to plot; `None` picks the deepest level with values.
    /// Ignored when `x` is `level`, `surviving` or `sparsity`.
    pub level: Option<usize>,
}

impl ChartSpec {
    pub fn new(metric: &str) -> Self {
        ChartSpec {
            metric: metric.to_string(),
            x: "k".into(),
            level: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub variant: Variant,
    pub points: Vec<Point>,
}

/// x, then the means, lower and upper band values of every row at x.
type Gathered = (f64, Vec<f64>, Vec<f64>, Vec<f64>);

fn plots_by_level(x: &str) -> bool {
    !matches!(x, "level" | "surviving" | "sparsity")
}

/// Aggregates the table into one series per variant, in variant order.
///
/// A point's line value is the mean over matching rows; its band spans the
/// `_min`/`_max` columns when the metric has them, and the spread across
/// rows otherwise.
pub fn series(table: &Table, spec: &ChartSpec) -> Result<(Vec<Series>, Option<usize>)> {
    let metric = table.column(&spec.metric)?;
    let x = table.column(&spec.x)?;
    let variant = table.column("variant")?;
    let level_col = table.column("level")?;
    let lo = table.column(&format!("{}_min", spec.metric)).ok();
    let hi = table.column(&format!("{}_max", spec.metric)).ok();

    let level_of = |row: usize| -> Result<usize> {
        let cell = &table.rows[row][level_col];
        cell.parse().map_err(|_| anyhow::anyhow!("row {}: bad level `{cell}`", row + 1))
    };
    let mut level = None;
    if plots_by_level(&spec.x) {
        level = match spec.level {
            Some(l) => Some(l),
            None => {
                let mut deepest = None;
                for row in 0..table.rows.len() {
                    if table.number(row, metric)?.is_some() && table.rows[row][variant] != "full" {
                        deepest = deepest.max(Some(level_of(row)?));
                    }
                }
                deepest
            }
        };
    }

    let mut out = Vec::new();
    for v in Variant::ALL {
        let mut points: Vec<Gathered> = Vec::new();
        for row in 0..table.rows.len() {
            if table.rows[row][variant] != v.name() {
                continue;
            }
            if let Some(l) = level {
                if v != Variant::Full && level_of(row)? != l {
                    continue;
                }
            }
            let Some(value) = table.number(row, metric)? else {
                continue;
            };
            let Some(xv) = table.number(row, x)? else {
                continue;
            };
            let low = match lo {
                Some(c) => table.number(row, c)?.unwrap_or(value),
                None => value,
            };
            let high = match hi {
                Some(c) => table.number(row, c)?.unwrap_or(value),
                None => value,
            };
            match points.iter_mut().find(|p| p.0 == xv) {
                Some(p) => {
                    p.1.push(value);
                    p.2.push(low);
                    p.3.push(high);
                }
                None => points.push((xv, vec![value], vec![low], vec![high])),
            }
        }
        if points.is_empty() {
            continue;
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.push(Series {
            variant: v,
            points: points
                .into_iter()
                .map(|(x, m, l, h)| Point {
                    x,
                    mean: m.iter().sum::<f64>() / m.len() as f64,
                    min: l.iter().copied().fold(f64::INFINITY, f64::min),
                    max: h.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                })
                .collect(),
        });
    }
    if out.is_empty() {
        bail!("no values for `{}`", spec.metric);
    }
    Ok((out, level))
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.05 };
        (lo - pad, hi + pad)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

fn coord(v: f64) -> String {
    format!("{v:.2}")
}

fn label(v: f64) -> String {
    format_number(format!("{v:.4e}").parse().unwrap_or(v))
}

/// Renders the chart. Identical input gives identical bytes.
pub fn render(table: &Table, spec: &ChartSpec, title: &str) -> Result<String> {
    let (series, level) = series(table, spec)?;
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.x)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().flat_map(|p| [p.min, p.max, p.mean])));
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )?;
    writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#)?;
    let heading = match level {
        Some(l) => format!("{title} (level {l})"),
        None => title.to_string(),
    };
    writeln!(w, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, coord(WIDTH / 2.0), escape(&heading))?;

    // Axes and ticks.
    let (bx, by) = (coord(LEFT), coord(TOP + ph));
    writeln!(w, r#"<line x1="{bx}" y1="{by}" x2="{}" y2="{by}" stroke="black"/>"#, coord(LEFT + pw))?;
    writeln!(w, r#"<line x1="{bx}" y1="{}" x2="{bx}" y2="{by}" stroke="black"/>"#, coord(TOP))?;
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let (px, py) = (coord(sx(xv)), coord(sy(yv)));
        writeln!(w, r#"<line x1="{px}" y1="{by}" x2="{px}" y2="{}" stroke="black"/>"#, coord(TOP + ph + 4.0))?;
        writeln!(w, r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#, coord(TOP + ph + 17.0), label(xv))?;
        writeln!(w, r#"<line x1="{}" y1="{py}" x2="{bx}" y2="{py}" stroke="black"/>"#, coord(LEFT - 4.0))?;
        writeln!(w, r#"<text x="{}" y="{py}" text-anchor="end" dominant-baseline="middle">{}</text>"#, coord(LEFT - 7.0), label(yv))?;
    }
    writeln!(w, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, coord(LEFT + pw / 2.0), coord(HEIGHT - 12.0), escape(&spec.x))?;
    writeln!(
        w,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        coord(TOP + ph / 2.0),
        escape(&spec.metric)
    )?;

    for s in &series {
        let c = color(s.variant);
        let name = s.variant.name();
        if s.points.len() > 1 && s.points.iter().any(|p| p.min < p.max) {
            let upper = s.points.iter().map(|p| format!("{},{}", coord(sx(p.x)), coord(sy(p.max))));
            let lower = s.points.iter().rev().map(|p| format!("{},{}", coord(sx(p.x)), coord(sy(p.min))));
            let pts: Vec<String> = upper.chain(lower).collect();
            writeln!(w, r#"<polygon class="band {name}" points="{}" fill="{c}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "))?;
        }
        if s.points.len() > 1 {
            let pts: Vec<String> = s.points.iter().map(|p| format!("{},{}", coord(sx(p.x)), coord(sy(p.mean)))).collect();
            writeln!(w, r#"<polyline class="line {name}" points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, pts.join(" "))?;
        }
        for p in &s.points {
            writeln!(w, r#"<circle class="marker {name}" cx="{}" cy="{}" r="3" fill="{c}"/>"#, coord(sx(p.x)), coord(sy(p.mean)))?;
        }
    }

    for (i, s) in series.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = LEFT + pw + 15.0;
        let (x1, x2, tx, yy) = (coord(x), coord(x + 20.0), coord(x + 26.0), coord(y));
        let (c, name) = (color(s.variant), s.variant.name());
        writeln!(
            w,
            r#"<g class="legend"><line x1="{x1}" y1="{yy}" x2="{x2}" y2="{yy}" stroke="{c}" stroke-width="2"/><text x="{tx}" y="{yy}" dominant-baseline="middle">{name}</text></g>"#
        )?;
    }
    writeln!(w, "</svg>")?;
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Metrics with at least one value in the table.
pub fn available_metrics(table: &Table) -> Vec<&'static str> {
    METRICS
        .into_iter()
        .filter(|m| {
            table
                .column(m)
                .map(|c| (0..table.rows.len()).any(|r| !table.rows[r][c].is_empty()))
                .unwrap_or(false)
        })
        .collect()
}
