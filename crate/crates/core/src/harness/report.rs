//! JSON and CSV artefacts for experiment and ablation runs.
//!
//! Everything except `timings.json` is a pure function of the config, the
//! dataset and the seed.

use std::fs;
use std::path::Path;

use csv::Writer;
use serde::Serialize;

use crate::error::{FedniError, Result};

use super::ablation::AblationReport;
use super::runner::{ExperimentReport, Stat, Timings, METRICS};

fn csv_err(e: csv::Error) -> FedniError {
    FedniError::Io(std::io::Error::other(e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn stat_row(w: &mut Writer<fs::File>, lead: &[&str], metric: &str, s: Stat) -> Result<()> {
    let mut row: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    row.extend([
        metric.to_string(),
        s.mean.to_string(),
        s.std.to_string(),
        s.n.to_string(),
    ]);
    w.write_record(&row).map_err(csv_err)
}

/// Writes `report.json`, `summary.csv`, `cells.csv`, `rounds.csv` and
/// `timings.json` into `dir`.
pub fn write_experiment(dir: &Path, report: &ExperimentReport, timings: &Timings) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("report.json"), report)?;
    write_json(&dir.join("timings.json"), timings)?;

    let mut w = Writer::from_path(dir.join("summary.csv")).map_err(csv_err)?;
    w.write_record(["mode", "metric", "mean", "std", "n"])
        .map_err(csv_err)?;
    for r in &report.results {
        for m in METRICS {
            stat_row(
                &mut w,
                &[r.mode.name()],
                m,
                r.summary.get(m).expect("known metric"),
            )?;
        }
    }
    w.flush()?;

    let mut w = Writer::from_path(dir.join("cells.csv")).map_err(csv_err)?;
    w.write_record([
        "mode",
        "repeat",
        "fold",
        "seed",
        "accuracy",
        "auc",
        "precision",
        "recall",
        "f1",
        "count",
    ])
    .map_err(csv_err)?;
    for r in &report.results {
        for c in &r.cells {
            let m = &c.metrics;
            w.write_record([
                r.mode.name().to_string(),
                c.repeat.to_string(),
                c.fold.to_string(),
                c.seed.to_string(),
                m.accuracy.to_string(),
                fmt_opt(m.auc),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                m.count.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let mut w = Writer::from_path(dir.join("rounds.csv")).map_err(csv_err)?;
    w.write_record([
        "phase",
        "mode",
        "repeat",
        "fold",
        "round",
        "mean_client_loss",
        "server_loss",
    ])
    .map_err(csv_err)?;
    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    for s in &report.inpainting {
        for l in &s.logs {
            w.write_record([
                "inpaint".to_string(),
                String::new(),
                s.repeat.to_string(),
                String::new(),
                l.round.to_string(),
                fmt_opt(mean(&l.client_losses)),
                fmt_opt(l.server_loss),
            ])
            .map_err(csv_err)?;
        }
    }
    for r in &report.results {
        for c in &r.cells {
            for l in &c.logs {
                w.write_record([
                    "classify".to_string(),
                    r.mode.name().to_string(),
                    c.repeat.to_string(),
                    c.fold.to_string(),
                    l.round.to_string(),
                    fmt_opt(mean(&l.client_losses)),
                    fmt_opt(l.server_loss),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `ablation.json`, `variants.csv`, `comparisons.csv` and
/// `timings.json` into `dir`.
pub fn write_ablation(dir: &Path, report: &AblationReport, timings: &[Timings]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("ablation.json"), report)?;
    write_json(&dir.join("timings.json"), &timings)?;

    let mut w = Writer::from_path(dir.join("variants.csv")).map_err(csv_err)?;
    w.write_record(["variant", "metric", "mean", "std", "n"])
        .map_err(csv_err)?;
    for v in &report.variants {
        for m in METRICS {
            stat_row(
                &mut w,
                &[&v.name],
                m,
                v.summary.get(m).expect("known metric"),
            )?;
        }
        stat_row(&mut w, &[&v.name], "frechet", v.frechet)?;
    }
    w.flush()?;

    let mut w = Writer::from_path(dir.join("comparisons.csv")).map_err(csv_err)?;
    w.write_record([
        "variant",
        "reference",
        "metric",
        "mean_variant",
        "mean_reference",
        "t",
        "df",
        "p",
    ])
    .map_err(csv_err)?;
    for c in &report.comparisons {
        let (t, df, p) = c
            .test
            .map(|t| (t.t.to_string(), t.df.to_string(), t.p.to_string()))
            .unwrap_or_default();
        w.write_record([
            c.variant.clone(),
            c.reference.clone(),
            c.metric.clone(),
            c.mean_variant.to_string(),
            c.mean_reference.to_string(),
            t,
            df,
            p,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
