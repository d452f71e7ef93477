//! File emission. Everything is written after the computation finishes, by
//! a single writer, with `f64` in shortest round-trip form.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use osde_core::bench::{CellSummary, ExperimentRecord, Method, ScalingSummary, Slope};
use osde_core::pipeline::DensityTrajectory;
use serde::Serialize;

/// Which query and depth totals feed the plots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Accounting {
    /// Transition-oracle units.
    UpUnits,
    /// Grover applications as the estimation schedules count them.
    RawGrover,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `trajectory.json` and `steps.csv`.
pub fn write_trajectory(dir: &Path, traj: &DensityTrajectory) -> Result<()> {
    ensure_dir(dir)?;
    write_json(&dir.join("trajectory.json"), traj)?;

    let degree = traj.config.degree;
    let mut header: Vec<String> = vec!["i".into(), "t".into()];
    header.extend((0..=degree).map(|l| format!("a_{l}")));
    header.extend(
        [
            "total_queries",
            "max_depth",
            "min_on_grid",
            "argmin",
            "bona_fide",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let rows: Vec<Vec<String>> = traj
        .steps
        .iter()
        .map(|s| {
            let mut r = vec![s.i.to_string(), s.t.to_string()];
            r.extend(s.density.coeffs().iter().map(f64::to_string));
            r.push(s.total_queries.to_string());
            r.push(s.max_depth.to_string());
            r.push(s.min_on_grid.to_string());
            r.push(s.argmin.to_string());
            r.push(s.bona_fide.to_string());
            r
        })
        .collect();
    write_rows(&dir.join("steps.csv"), &header, &rows)
}

pub fn write_records_csv(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn slope_rows(method: Method, metrics: &[(&str, Slope)]) -> Vec<Vec<String>> {
    metrics
        .iter()
        .map(|(name, s)| {
            vec![
                method.to_string(),
                name.to_string(),
                s.slope.to_string(),
                s.std_err.to_string(),
            ]
        })
        .collect()
}

type Metric = fn(&CellSummary) -> f64;

/// `records.{csv,json}`, `summary.{csv,json}`, `fits.csv` and
/// `plotdata/{rmse,queries,depth}.csv`.
pub fn write_bench(
    dir: &Path,
    records: &[ExperimentRecord],
    summary: &ScalingSummary,
    accounting: Accounting,
) -> Result<()> {
    ensure_dir(dir)?;
    write_records_csv(&dir.join("records.csv"), records)?;
    write_json(&dir.join("records.json"), &records)?;
    write_json(&dir.join("summary.json"), summary)?;

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for c in &summary.cells {
        w.serialize(c)?;
    }
    w.flush()?;

    let header: Vec<String> = ["method", "metric", "slope", "std_err"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = summary
        .fits
        .iter()
        .flat_map(|f| {
            slope_rows(
                f.method,
                &[
                    ("queries", f.queries),
                    ("queries_all", f.queries_all),
                    ("queries_raw", f.queries_raw),
                    ("depth", f.depth),
                    ("depth_raw", f.depth_raw),
                    ("rmse", f.rmse),
                ],
            )
        })
        .collect();
    write_rows(&dir.join("fits.csv"), &header, &rows)?;

    let plot = dir.join("plotdata");
    ensure_dir(&plot)?;
    let (queries, depth): (Metric, Metric) = match accounting {
        Accounting::UpUnits => (|c| c.mean_queries, |c| c.mean_depth),
        Accounting::RawGrover => (|c| c.mean_queries_raw, |c| c.mean_depth_raw),
    };
    write_plot(&plot.join("rmse.csv"), summary, |c| c.rmse, false)?;
    write_plot(&plot.join("queries.csv"), summary, queries, true)?;
    write_plot(&plot.join("depth.csv"), summary, depth, false)
}

/// One row per `N`, one column per method. With `reference_line`, adds an
/// `N^1.5` line through the transport method's smallest-`N` value, the
/// order shared with simultaneous-estimation methods.
fn write_plot(
    path: &Path,
    summary: &ScalingSummary,
    metric: impl Fn(&CellSummary) -> f64,
    reference_line: bool,
) -> Result<()> {
    let methods: Vec<Method> = Method::ALL
        .into_iter()
        .filter(|m| summary.cells.iter().any(|c| c.method == *m))
        .collect();
    let ns: BTreeSet<usize> = summary.cells.iter().map(|c| c.n).collect();
    let anchor = summary
        .cells
        .iter()
        .filter(|c| c.method == Method::Proposed)
        .min_by_key(|c| c.n)
        .map(|c| (c.n as f64, metric(c)));
    let with_ref = reference_line && anchor.is_some();

    let mut header = vec!["N".to_string()];
    header.extend(methods.iter().map(|m| m.to_string()));
    if with_ref {
        header.push("N^1.5 reference".into());
    }
    let rows: Vec<Vec<String>> = ns
        .iter()
        .map(|&n| {
            let mut r = vec![n.to_string()];
            for &m in &methods {
                r.push(
                    summary
                        .cell(m, n)
                        .map(|c| metric(c).to_string())
                        .unwrap_or_default(),
                );
            }
            if let (true, Some((n0, v0))) = (with_ref, anchor) {
                r.push((v0 * (n as f64 / n0).powf(1.5)).to_string());
            }
            r
        })
        .collect();
    write_rows(path, &header, &rows)
}
