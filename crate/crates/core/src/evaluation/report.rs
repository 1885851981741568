//! CSV and JSON serialisation of comparison results.
//!
//! Files written by [`write_reports`]:
//!
//! * `report_<strategy>.csv`: one row per case with `best_<metric>` (window
//!   with the highest whole-tumor recall) and `mean_<metric>` (mean over the
//!   case's windows) columns, plus `roi_dice`, `warnings` and `seconds`.
//! * `comparison.csv`: one row per strategy. `best_<metric>` and
//!   `mean_<metric>` are corpus means of the per-case columns above;
//!   `*_median_tumor_fraction` are corpus medians.
//! * `comparison.json`: every report, including per-window scores and failures.
//! * `imbalance.json`: label counts before and after patching.
//!
//! Undefined values are written as `NA`; seconds are `NA` when timing is off.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::volume_io::write_atomic;

use super::{Comparison, MetricRow, StrategyReport, ViewAggregate, METRICS};

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == "NA" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Serialization(format!("bad number {s:?} in report")))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Serialization(e.to_string()))
}

/// One per-case row of `report_<strategy>.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseRow {
    pub case_id: String,
    pub patches: usize,
    pub best_index: usize,
    pub best: MetricRow,
    pub mean: MetricRow,
    pub roi_dice: Option<f64>,
    pub warnings: usize,
    pub seconds: Option<f64>,
}

fn case_header() -> Vec<String> {
    let mut h = vec!["case_id".to_string(), "patches".into(), "best_index".into()];
    for view in ["best", "mean"] {
        h.extend(METRICS.iter().map(|m| format!("{view}_{m}")));
    }
    h.extend(["roi_dice".into(), "warnings".into(), "seconds".into()]);
    h
}

fn case_csv(report: &StrategyReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(case_header()).map_err(csv_err)?;
    for c in &report.cases {
        let mut row = vec![c.case_id.clone(), c.patches.len().to_string(), c.best_index.to_string()];
        row.extend(c.best.iter().chain(c.mean.iter()).map(|v| fmt_opt(*v)));
        row.extend([fmt_opt(c.roi_dice), c.warnings.len().to_string(), fmt_opt(c.seconds)]);
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

/// Parse the rows of a `report_<strategy>.csv`.
pub fn read_case_rows(bytes: &[u8]) -> Result<Vec<CaseRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != case_header() {
        return Err(Error::Serialization("unexpected report header".into()));
    }
    let n = METRICS.len();
    let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Serialization(format!("bad count {s:?}")));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let mut best = [None; METRICS.len()];
        let mut mean = [None; METRICS.len()];
        for k in 0..n {
            best[k] = parse_opt(&rec[3 + k])?;
            mean[k] = parse_opt(&rec[3 + n + k])?;
        }
        rows.push(CaseRow {
            case_id: rec[0].to_string(),
            patches: int(&rec[1])?,
            best_index: int(&rec[2])?,
            best,
            mean,
            roi_dice: parse_opt(&rec[3 + 2 * n])?,
            warnings: int(&rec[4 + 2 * n])?,
            seconds: parse_opt(&rec[5 + 2 * n])?,
        });
    }
    Ok(rows)
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => (a - b).abs() <= 1e-12 * a.abs().max(1.0),
        _ => false,
    }
}

fn check_view(name: &str, stored: &ViewAggregate, recomputed: &ViewAggregate) -> Result<()> {
    let pairs = stored
        .means
        .iter()
        .zip(&recomputed.means)
        .chain(std::iter::once((&stored.median_tumor_fraction, &recomputed.median_tumor_fraction)));
    if pairs.into_iter().all(|(a, b)| close(*a, *b)) {
        Ok(())
    } else {
        Err(Error::Serialization(format!("{name} aggregates disagree with the written rows")))
    }
}

/// Re-read a written case table and check the report's aggregates against it.
fn verify(report: &StrategyReport, bytes: &[u8]) -> Result<()> {
    let rows = read_case_rows(bytes)?;
    if rows.len() != report.cases.len()
        || rows.iter().map(|r| r.patches).sum::<usize>() != report.patch_count
    {
        return Err(Error::Serialization(format!("{} report rows are incomplete", report.strategy)));
    }
    check_view("best", &report.best, &ViewAggregate::of(rows.iter().map(|r| &r.best)))?;
    check_view("mean", &report.mean, &ViewAggregate::of(rows.iter().map(|r| &r.mean)))
}

fn comparison_csv(c: &Comparison) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["strategy", "cases", "failures", "patches"].map(String::from).to_vec();
    for view in ["best", "mean"] {
        header.push(format!("{view}_median_tumor_fraction"));
        header.extend(METRICS.iter().map(|m| format!("{view}_{m}")));
    }
    header.push("seconds".into());
    w.write_record(&header).map_err(csv_err)?;
    for r in &c.reports {
        let mut row = vec![
            r.strategy.to_string(),
            r.cases.len().to_string(),
            r.failures.len().to_string(),
            r.patch_count.to_string(),
        ];
        for view in [&r.best, &r.mean] {
            row.push(fmt_opt(view.median_tumor_fraction));
            row.extend(view.means.iter().map(|v| fmt_opt(*v)));
        }
        row.push(fmt_opt(r.seconds));
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

fn json_bytes<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Write every report file into `dir` and return their paths.
pub fn write_reports(dir: &Path, comparison: &Comparison) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    for r in &comparison.reports {
        let bytes = case_csv(r)?;
        verify(r, &bytes)?;
        files.push((dir.join(format!("report_{}.csv", r.strategy)), bytes));
    }
    files.push((dir.join("comparison.csv"), comparison_csv(comparison)?));
    files.push((dir.join("comparison.json"), json_bytes(comparison)?));
    files.push((dir.join("imbalance.json"), json_bytes(&comparison.imbalance)?));
    let mut paths = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        write_atomic(&path, &bytes)?;
        paths.push(path);
    }
    Ok(paths)
}
