//! CSV artifacts written by an experiment and their readers.
//!
//! | file | columns |
//! |---|---|
//! | `truth.csv`, `est_<name>.csv` | `k, n, gamma, phi, psi, abs_cos_phi` |
//! | `response.csv` | `k, i, h11_re, h11_im, h12_re, h12_im, h21_re, h21_im, h22_re, h22_im` |
//! | `metrics.csv` | `estimator, n, tracking_error, window_variation, verdict, margin` |
//! | `residual.csv` | `estimator, k, response_residual, final_loss` |
//! | `isa_diagnostics.csv` | `k, n, residual_low, residual_high, cond_low, cond_high, unidentifiable` |
//!
//! `n` is the 1-based section index and `i` the frequency index. Empty
//! fields encode absent values (an inconclusive verdict, a tracking error
//! for a model with a different section count, the loss of ISA).

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::metrics::{Estimator, MetricsReport};
use crate::error::{Error, Result};
use crate::isa::PeelDiagnostics;
use crate::jones::JonesMatrix;
use crate::polmodel::{ChannelParams, FrequencyGrid, FrequencyResponse, SectionParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub n: usize,
    pub gamma: f64,
    pub phi: f64,
    pub psi: f64,
    pub abs_cos_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub k: usize,
    pub i: usize,
    pub h11_re: f64,
    pub h11_im: f64,
    pub h12_re: f64,
    pub h12_im: f64,
    pub h21_re: f64,
    pub h21_im: f64,
    pub h22_re: f64,
    pub h22_im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub estimator: Estimator,
    pub n: usize,
    pub tracking_error: Option<f64>,
    pub window_variation: f64,
    pub verdict: Option<usize>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub estimator: Estimator,
    pub k: usize,
    pub response_residual: f64,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub k: usize,
    pub n: usize,
    pub residual_low: f64,
    pub residual_high: f64,
    pub cond_low: f64,
    pub cond_high: f64,
    pub unidentifiable: bool,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn parse_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn trace_rows(series: &[ChannelParams]) -> Vec<TraceRow> {
    series
        .iter()
        .enumerate()
        .flat_map(|(k, p)| {
            p.sections.iter().enumerate().map(move |(n, s)| TraceRow {
                k,
                n: n + 1,
                gamma: s.gamma,
                phi: s.phi,
                psi: s.psi,
                abs_cos_phi: s.abs_cos_phi(),
            })
        })
        .collect()
}

pub fn write_trace(path: &Path, series: &[ChannelParams]) -> Result<()> {
    write_rows(path, &trace_rows(series))
}

/// Reads a `truth.csv` / `est_<name>.csv` file. Rows must be ordered by `k`
/// then `n` with the same section count at every step.
pub fn read_trace(path: &Path, tau: f64) -> Result<Vec<ChannelParams>> {
    let rows: Vec<TraceRow> = read_rows(path)?;
    let mut out: Vec<ChannelParams> = Vec::new();
    for row in rows {
        if row.k == out.len() {
            out.push(ChannelParams {
                sections: Vec::new(),
                tau,
            });
        } else if row.k + 1 != out.len() {
            return Err(parse_error(path, format!("step {} out of order", row.k)));
        }
        let current = out.last_mut().expect("pushed above");
        if row.n != current.sections.len() + 1 {
            return Err(parse_error(path, format!("section {} out of order at k={}", row.n, row.k)));
        }
        current.sections.push(SectionParams::new(row.gamma, row.phi, row.psi));
    }
    if out.iter().any(|p| p.len() != out[0].len()) {
        return Err(parse_error(path, "section count changes over time"));
    }
    Ok(out)
}

pub fn write_responses(path: &Path, series: &[FrequencyResponse]) -> Result<()> {
    let rows: Vec<ResponseRow> = series
        .iter()
        .enumerate()
        .flat_map(|(k, resp)| {
            resp.matrices().iter().enumerate().map(move |(i, m)| {
                let r = m.to_reals();
                ResponseRow {
                    k,
                    i,
                    h11_re: r[0],
                    h11_im: r[1],
                    h12_re: r[2],
                    h12_im: r[3],
                    h21_re: r[4],
                    h21_im: r[5],
                    h22_re: r[6],
                    h22_im: r[7],
                }
            })
        })
        .collect();
    write_rows(path, &rows)
}

/// Reads a `response.csv` file sampled on `grid`.
pub fn read_responses(path: &Path, grid: &FrequencyGrid) -> Result<Vec<FrequencyResponse>> {
    let rows: Vec<ResponseRow> = read_rows(path)?;
    let l = grid.len();
    if !rows.len().is_multiple_of(l) {
        return Err(parse_error(path, format!("{} rows is not a multiple of L = {l}", rows.len())));
    }
    rows.chunks(l)
        .enumerate()
        .map(|(k, chunk)| {
            let matrices = chunk
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    if r.k != k || r.i != i {
                        return Err(parse_error(path, format!("expected k={k} i={i}, got k={} i={}", r.k, r.i)));
                    }
                    Ok(JonesMatrix::from_reals(&[
                        r.h11_re, r.h11_im, r.h12_re, r.h12_im, r.h21_re, r.h21_im, r.h22_re, r.h22_im,
                    ]))
                })
                .collect::<Result<Vec<_>>>()?;
            FrequencyResponse::new(grid.clone(), matrices)
        })
        .collect()
}

/// Writes `metrics.csv` and `residual.csv`. Each entry may carry the
/// estimator's per-step final losses.
pub fn write_metrics(
    metrics_path: &Path,
    residual_path: &Path,
    reports: &[(Estimator, &MetricsReport, Option<&[f64]>)],
) -> Result<()> {
    let mut rows = Vec::new();
    let mut residuals = Vec::new();
    for (estimator, report, losses) in reports {
        for (n, w) in report.window_variation.iter().enumerate() {
            rows.push(MetricsRow {
                estimator: *estimator,
                n: n + 1,
                tracking_error: report.tracking_error.get(n).copied(),
                window_variation: *w,
                verdict: report.verdict,
                margin: report.margin,
            });
        }
        for (k, r) in report.response_residual.iter().enumerate() {
            residuals.push(ResidualRow {
                estimator: *estimator,
                k,
                response_residual: *r,
                final_loss: losses.map(|l| l[k]),
            });
        }
    }
    write_rows(metrics_path, &rows)?;
    write_rows(residual_path, &residuals)
}

/// An estimator's report and, for the learner, its per-step final losses.
pub type StoredMetrics = (Estimator, MetricsReport, Option<Vec<f64>>);

/// Inverse of [`write_metrics`]: one report (and optional per-step losses)
/// per estimator, in file order.
pub fn read_metrics(
    metrics_path: &Path,
    residual_path: &Path,
) -> Result<Vec<StoredMetrics>> {
    let rows: Vec<MetricsRow> = read_rows(metrics_path)?;
    let residuals: Vec<ResidualRow> = read_rows(residual_path)?;
    let mut out: Vec<StoredMetrics> = Vec::new();
    for row in rows {
        if out.last().is_none_or(|(e, _, _)| *e != row.estimator) {
            out.push((
                row.estimator,
                MetricsReport {
                    tracking_error: Vec::new(),
                    window_variation: Vec::new(),
                    verdict: row.verdict,
                    margin: row.margin,
                    response_residual: Vec::new(),
                },
                None,
            ));
        }
        let report = &mut out.last_mut().expect("pushed above").1;
        if let Some(t) = row.tracking_error {
            report.tracking_error.push(t);
        }
        report.window_variation.push(row.window_variation);
    }
    for row in residuals {
        let entry = out
            .iter_mut()
            .find(|(e, _, _)| *e == row.estimator)
            .ok_or_else(|| parse_error(residual_path, format!("no metrics for {}", row.estimator)))?;
        if row.k != entry.1.response_residual.len() {
            return Err(parse_error(residual_path, format!("step {} out of order", row.k)));
        }
        entry.1.response_residual.push(row.response_residual);
        if let Some(loss) = row.final_loss {
            entry.2.get_or_insert_with(Vec::new).push(loss);
        }
    }
    Ok(out)
}

pub fn write_diagnostics(path: &Path, per_step: &[Vec<PeelDiagnostics>]) -> Result<()> {
    let rows: Vec<DiagnosticsRow> = per_step
        .iter()
        .enumerate()
        .flat_map(|(k, diags)| {
            diags.iter().map(move |d| DiagnosticsRow {
                k,
                n: d.section,
                residual_low: d.residual_low,
                residual_high: d.residual_high,
                cond_low: d.cond_low,
                cond_high: d.cond_high,
                unidentifiable: d.unidentifiable,
            })
        })
        .collect();
    write_rows(path, &rows)
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<Vec<PeelDiagnostics>>> {
    let rows: Vec<DiagnosticsRow> = read_rows(path)?;
    let mut out: Vec<Vec<PeelDiagnostics>> = Vec::new();
    for r in rows {
        if r.k == out.len() {
            out.push(Vec::new());
        } else if r.k + 1 != out.len() {
            return Err(parse_error(path, format!("step {} out of order", r.k)));
        }
        out.last_mut().expect("pushed above").push(PeelDiagnostics {
            section: r.n,
            residual_low: r.residual_low,
            residual_high: r.residual_high,
            cond_low: r.cond_low,
            cond_high: r.cond_high,
            unidentifiable: r.unidentifiable,
        });
    }
    Ok(out)
}
