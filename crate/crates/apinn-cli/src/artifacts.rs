//! On-disk run artifacts: the metrics CSV (17-significant-digit decimal so
//! re-parsing is loss-free), per-iteration timings, the summary document
//! and checkpoints.

use apinn_core::ntkdiag::{violation_stats, ViolationStats};
use apinn_core::rolltrain::{IterationRecord, Timings, TrainHistory};
use serde::Serialize;
use std::io::Write;
use std::path::Path;

pub const METRICS_HEADER: &str = "iteration,energy,score,train_mse,validation_mse,accepted_g_depth,accepted_d_depth,saturation_count,lambda_min,lambda_max";

/// Decimal formatting that round-trips f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn metrics_row(r: &IterationRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.iteration,
        fmt_f64(r.energy),
        fmt_f64(r.score),
        fmt_opt(r.train_mse),
        fmt_opt(r.validation_mse),
        r.accepted_g_depth,
        r.accepted_d_depth,
        r.saturation_count,
        fmt_f64(r.lambda_min),
        fmt_f64(r.lambda_max)
    )
}

pub fn write_metrics(path: &Path, records: &[IterationRecord], append: bool) -> std::io::Result<()> {
    let mut f = if append && path.exists() {
        std::fs::OpenOptions::new().append(true).open(path)?
    } else {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{METRICS_HEADER}")?;
        f
    };
    for r in records {
        writeln!(f, "{}", metrics_row(r))?;
    }
    Ok(())
}

pub fn write_timings(path: &Path, start_iteration: usize, t: &Timings) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "iteration,wall_ms")?;
    for (i, ms) in t.per_iteration_ms.iter().enumerate() {
        writeln!(f, "{},{}", start_iteration + i, fmt_f64(*ms))?;
    }
    Ok(())
}

/// One parsed metrics row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub iteration: usize,
    pub energy: f64,
    pub score: f64,
    pub train_mse: Option<f64>,
    pub validation_mse: Option<f64>,
    pub accepted_g_depth: usize,
    pub accepted_d_depth: usize,
    pub saturation_count: u64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricRow>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty metrics file")?;
    if header != METRICS_HEADER {
        return Err(format!("unexpected metrics header: {header}"));
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(format!("line {}: expected 10 fields, got {}", ln + 2, fields.len()));
        }
        let opt = |s: &str| -> Result<Option<f64>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|e| e.to_string())
            }
        };
        rows.push(MetricRow {
            iteration: fields[0].parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
            energy: fields[1].parse().map_err(|e: std::num::ParseFloatError| e.to_string())?,
            score: fields[2].parse().map_err(|e: std::num::ParseFloatError| e.to_string())?,
            train_mse: opt(fields[3])?,
            validation_mse: opt(fields[4])?,
            accepted_g_depth: fields[5].parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
            accepted_d_depth: fields[6].parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
            saturation_count: fields[7].parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
            lambda_min: fields[8].parse().map_err(|e: std::num::ParseFloatError| e.to_string())?,
            lambda_max: fields[9].parse().map_err(|e: std::num::ParseFloatError| e.to_string())?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub problem: String,
    pub iterations: usize,
    pub aborted: bool,
    pub final_energy: Option<f64>,
    pub final_train_mse: Option<f64>,
    pub final_validation_mse: Option<f64>,
    pub total_gen_updates: usize,
    pub total_disc_updates: usize,
    pub score_violations: Option<ViolationStats>,
}

pub fn summarize(problem: &str, history: &TrainHistory) -> Summary {
    let last = history.records.last();
    let scores: Vec<f64> = history.records.iter().map(|r| r.score).collect();
    Summary {
        problem: problem.to_string(),
        iterations: history.records.len(),
        aborted: history.aborted,
        final_energy: last.map(|r| r.energy),
        final_train_mse: last.and_then(|r| r.train_mse),
        final_validation_mse: last.and_then(|r| r.validation_mse),
        total_gen_updates: history.total_gen_updates,
        total_disc_updates: history.total_disc_updates,
        score_violations: if scores.is_empty() { None } else { Some(violation_stats(&scores)) },
    }
}

/// Trailing moving average with the given window (the first `w-1` entries
/// average the available prefix).
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for i in 0..series.len() {
        acc += series[i];
        if i >= w {
            acc -= series[i - w];
        }
        let n = (i + 1).min(w);
        out.push(acc / n as f64);
    }
    out
}
