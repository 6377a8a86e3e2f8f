use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Metric, SweepResult, SweepRow};
use crate::{Error, Result};

pub const CSV_HEADER: &str = "metric,lambda,N,trial,rf_value,kernel_value,abs_diff";

/// Sorts by `(metric name, λ, N, trial)`.
pub(crate) fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| {
        a.metric
            .as_str()
            .cmp(b.metric.as_str())
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.n_features.cmp(&b.n_features))
            .then(a.trial.cmp(&b.trial))
    });
}

// 17 significant digits, enough to round-trip any f64.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the CSV form of `rows` (header included), sorted.
pub fn write_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    writeln!(out, "{CSV_HEADER}")?;
    for r in &sorted {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.metric,
            num(r.lambda),
            r.n_features,
            r.trial,
            num(r.rf_value),
            num(r.kernel_value),
            num(r.abs_diff)
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_csv(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    write_csv(&result.rows, BufWriter::new(File::create(path)?))
}

/// Reads rows written by [`emit_csv`].
pub fn parse_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            message: format!("expected header '{CSV_HEADER}'"),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        if rec.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", rec.len())));
        }
        let float = |i: usize| rec[i].trim().parse::<f64>().map_err(|e| bad(format!("field {}: {e}", i + 1)));
        let int = |i: usize| rec[i].trim().parse::<usize>().map_err(|e| bad(format!("field {}: {e}", i + 1)));
        rows.push(SweepRow {
            metric: rec[0].trim().parse().map_err(|e: Error| bad(e.to_string()))?,
            lambda: float(1)?,
            n_features: int(2)?,
            trial: int(3)?,
            rf_value: float(4)?,
            kernel_value: float(5)?,
            abs_diff: float(6)?,
            stderr: None,
        });
    }
    Ok(rows)
}

/// Least-squares line through `(log N, log mean_trials |diff|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Number of `N` values used.
    pub points: usize,
    /// Widths whose mean difference was zero and had to be left out.
    pub dropped: Vec<usize>,
}

/// Fits the log-log slope of the trial-averaged `abs_diff` against `N` for one
/// metric and ridge parameter.
pub fn fit_slope(rows: &[SweepRow], metric: Metric, lambda: f64) -> Result<SlopeFit> {
    let widths: BTreeSet<usize> = rows
        .iter()
        .filter(|r| r.metric == metric && r.lambda == lambda)
        .map(|r| r.n_features)
        .collect();
    let mut pts = Vec::new();
    let mut dropped = Vec::new();
    for &n in &widths {
        let diffs: Vec<f64> = rows
            .iter()
            .filter(|r| r.metric == metric && r.lambda == lambda && r.n_features == n)
            .map(|r| r.abs_diff)
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        if mean > 0.0 && mean.is_finite() {
            pts.push(((n as f64).ln(), mean.ln()));
        } else {
            dropped.push(n);
        }
    }
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{metric} at lambda = {lambda}: {} usable widths (need 3){}",
            pts.len(),
            if dropped.is_empty() {
                String::new()
            } else {
                format!(", zero mean difference at N = {dropped:?}")
            }
        )));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        points: pts.len(),
        dropped,
    })
}

/// One line of a slope report.
#[derive(Debug)]
pub struct SlopeRow {
    pub metric: Metric,
    pub lambda: f64,
    pub fit: Result<SlopeFit>,
    pub pass: bool,
}

/// Slopes for every `(metric, λ)` present in `rows`, checked against
/// `slope <= threshold`. The concentration statistic is included as is.
pub fn slope_table(rows: &[SweepRow], threshold: f64) -> Vec<SlopeRow> {
    let mut keys: Vec<(Metric, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(m, l)| m == r.metric && l == r.lambda) {
            keys.push((r.metric, r.lambda));
        }
    }
    keys.sort_by(|a, b| a.0.as_str().cmp(b.0.as_str()).then(a.1.total_cmp(&b.1)));
    keys.into_iter()
        .map(|(metric, lambda)| {
            let fit = fit_slope(rows, metric, lambda);
            let pass = fit.as_ref().is_ok_and(|f| f.slope <= threshold);
            SlopeRow {
                metric,
                lambda,
                fit,
                pass,
            }
        })
        .collect()
}
