//! Tidy plot-data CSVs regenerated from a run directory.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hydroembed_core::train::RecordKind;
use serde::Serialize;

use crate::pipeline::{read_log, ProbeReport, SweepRow, METRICS_JSON_FILE, TRAIN_LOG_FILE};

pub const REPORT_DIR: &str = "report";

#[derive(Serialize)]
struct LossRow {
    step: usize,
    epoch: usize,
    invariance: f64,
    variance: f64,
    covariance: f64,
    total: f64,
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    invariance: f64,
    variance: f64,
    covariance: f64,
    total: f64,
    lr: f64,
}

#[derive(Serialize)]
struct AxisRow<'a> {
    value: &'a str,
    accuracy: f64,
    weighted_f1: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Numeric values (or `;`-separated tuples) sort numerically, before any
/// non-numeric names, which sort lexically.
pub fn compare_axis_values(a: &str, b: &str) -> Ordering {
    let parse = |s: &str| s.split(';').map(|p| p.parse::<f64>()).collect::<Result<Vec<f64>, _>>().ok();
    match (parse(a), parse(b)) {
        (Some(x), Some(y)) => x
            .iter()
            .zip(&y)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| x.len().cmp(&y.len())),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(b),
    }
}

/// Writes `report/loss.csv`, `report/epochs.csv`, `report/confusion.csv` and
/// one `report/sweep_<axis>.csv` per sweep table found in `run`. Returns the
/// files written.
pub fn report(run: &Path) -> Result<Vec<PathBuf>> {
    let dir = run.join(REPORT_DIR);
    let mut written = Vec::new();
    let log_path = run.join(TRAIN_LOG_FILE);
    let metrics_path = run.join(METRICS_JSON_FILE);
    let mut sweeps: Vec<PathBuf> = match fs::read_dir(run) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("sweep_") && n.ends_with(".csv"))
            })
            .collect(),
        Err(e) => bail!("cannot read run directory {}: {e}", run.display()),
    };
    sweeps.sort();
    if !log_path.exists() && !metrics_path.exists() && sweeps.is_empty() {
        bail!("{} has no training log, metrics or sweep tables", run.display());
    }
    fs::create_dir_all(&dir)?;

    if log_path.exists() {
        let log = read_log(&log_path)?;
        let steps = log.iter().filter(|r| r.kind == RecordKind::Step).map(|r| LossRow {
            step: r.step,
            epoch: r.epoch,
            invariance: r.invariance,
            variance: r.variance_a + r.variance_b,
            covariance: r.covariance_a + r.covariance_b,
            total: r.total,
        });
        write_rows(&dir.join("loss.csv"), steps)?;
        let epochs = log.iter().filter(|r| r.kind == RecordKind::Epoch).map(|r| EpochRow {
            epoch: r.epoch,
            invariance: r.invariance,
            variance: r.variance_a + r.variance_b,
            covariance: r.covariance_a + r.covariance_b,
            total: r.total,
            lr: r.lr,
        });
        write_rows(&dir.join("epochs.csv"), epochs)?;
        written.extend([dir.join("loss.csv"), dir.join("epochs.csv")]);
    }

    if metrics_path.exists() {
        let text = fs::read_to_string(&metrics_path)?;
        let report: ProbeReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", metrics_path.display()))?;
        let path = dir.join("confusion.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["truth", "predicted", "count"])?;
        for (t, row) in report.metrics.confusion.iter().enumerate() {
            for (p, count) in row.iter().enumerate() {
                w.write_record([report.classes[t].as_str(), report.classes[p].as_str(), &count.to_string()])?;
            }
        }
        w.flush()?;
        written.push(path);
    }

    for sweep in sweeps {
        let mut rows: Vec<SweepRow> = csv::Reader::from_path(&sweep)?
            .deserialize()
            .collect::<Result<_, _>>()
            .with_context(|| format!("parsing {}", sweep.display()))?;
        rows.sort_by(|a, b| compare_axis_values(&a.value, &b.value));
        let path = dir.join(sweep.file_name().unwrap());
        write_rows(
            &path,
            rows.iter().map(|r| AxisRow { value: &r.value, accuracy: r.accuracy, weighted_f1: r.weighted_f1 }),
        )?;
        written.push(path);
    }
    Ok(written)
}
