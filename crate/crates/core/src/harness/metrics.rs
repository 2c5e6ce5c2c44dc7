//! Tracking and localization statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isa::PeelDiagnostics;
use crate::learner::identifiability;
use crate::polmodel::{channel_response, response_distance, ChannelParams, FrequencyGrid};

/// Realizations whose response Jacobian has `σ_min / σ_max` below this at any
/// time step are treated as overparameterized and excluded from success
/// rates.
pub const DEGENERATE_IDENTIFIABILITY: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Isa,
    Learn,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Isa => "isa",
            Estimator::Learn => "learn",
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-step estimates from one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSeries {
    pub estimator: Estimator,
    pub estimates: Vec<ChannelParams>,
    /// Learner only: loss at the end of each step's fit.
    pub final_losses: Option<Vec<f64>>,
    /// ISA only: per-step, per-section peel diagnostics.
    pub peel_diagnostics: Option<Vec<Vec<PeelDiagnostics>>>,
}

impl EstimateSeries {
    /// `|cos φ̂_n(k)|` indexed `[n][k]`.
    pub fn abs_cos_traces(&self) -> Vec<Vec<f64>> {
        abs_cos_traces(&self.estimates)
    }
}

pub fn abs_cos_traces(series: &[ChannelParams]) -> Vec<Vec<f64>> {
    let n = series.first().map_or(0, ChannelParams::len);
    (0..n)
        .map(|s| series.iter().map(|p| p.sections[s].abs_cos_phi()).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Mean over `k` of `||cos φ̂_n| − |cos φ_n||`, per section. Empty when the
    /// estimate has a different section count than the truth.
    pub tracking_error: Vec<f64>,
    /// `Σ_{k∈window} ||cos φ̂_n(k)| − |cos φ̂_n(k−1)||`, per section.
    pub window_variation: Vec<f64>,
    /// 1-based section with the largest window variation; `None` on a tie.
    pub verdict: Option<usize>,
    /// Largest minus second-largest window variation.
    pub margin: f64,
    /// `‖H(θ̂_k) − H(θ_k)‖² / ‖H(θ_k)‖²` per step.
    pub response_residual: Vec<f64>,
}

impl MetricsReport {
    pub fn is_inconclusive(&self) -> bool {
        self.verdict.is_none()
    }

    pub fn mean_tracking_error(&self) -> f64 {
        if self.tracking_error.is_empty() {
            return f64::NAN;
        }
        self.tracking_error.iter().sum::<f64>() / self.tracking_error.len() as f64
    }
}

/// Compares estimates with the ground truth over the whole horizon and
/// localizes the perturbation inside `window = [k₁, k₂]`.
pub fn compute_metrics(
    estimates: &[ChannelParams],
    truth: &[ChannelParams],
    grid: &FrequencyGrid,
    window: [usize; 2],
) -> Result<MetricsReport> {
    if estimates.len() != truth.len() || truth.is_empty() {
        return Err(Error::Misaligned(format!(
            "{} estimates vs {} ground-truth steps",
            estimates.len(),
            truth.len()
        )));
    }
    let horizon = truth.len() - 1;
    if window[0] == 0 || window[0] > window[1] || window[1] > horizon {
        return Err(Error::InvalidConfig(format!(
            "metric window [{}, {}] must lie within [1, {horizon}]",
            window[0], window[1]
        )));
    }

    let est_traces = abs_cos_traces(estimates);
    let same_shape = estimates.iter().all(|e| e.len() == truth[0].len());
    let tracking_error = if same_shape {
        let true_traces = abs_cos_traces(truth);
        est_traces
            .iter()
            .zip(&true_traces)
            .map(|(e, t)| {
                e.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / e.len() as f64
            })
            .collect()
    } else {
        Vec::new()
    };

    let window_variation: Vec<f64> = est_traces
        .iter()
        .map(|trace| {
            (window[0]..=window[1])
                .map(|k| (trace[k] - trace[k - 1]).abs())
                .sum()
        })
        .collect();
    let (verdict, margin) = localize(&window_variation);

    let response_residual = estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| {
            let reference = channel_response(t, grid);
            let modeled = channel_response(e, grid);
            response_distance(&reference, &modeled).map(|d| d / reference.energy())
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(MetricsReport {
        tracking_error,
        window_variation,
        verdict,
        margin,
        response_residual,
    })
}

fn localize(stat: &[f64]) -> (Option<usize>, f64) {
    let mut order: Vec<usize> = (0..stat.len()).collect();
    order.sort_by(|&a, &b| stat[b].total_cmp(&stat[a]));
    match order.as_slice() {
        [] => (None, 0.0),
        [only] => (Some(only + 1), stat[*only]),
        [first, second, ..] => {
            let margin = stat[*first] - stat[*second];
            if margin > 0.0 {
                (Some(first + 1), margin)
            } else {
                (None, 0.0)
            }
        }
    }
}

/// Identifiability of a ground-truth trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioHealth {
    /// Smallest Jacobian `σ_min / σ_max` over all steps.
    pub min_identifiability: f64,
    pub degenerate: bool,
}

pub fn scenario_health(truth: &[ChannelParams], grid: &FrequencyGrid) -> ScenarioHealth {
    let min_identifiability = truth
        .iter()
        .map(|t| identifiability(t, grid))
        .fold(f64::INFINITY, f64::min);
    ScenarioHealth {
        min_identifiability,
        degenerate: min_identifiability.is_nan() || min_identifiability < DEGENERATE_IDENTIFIABILITY,
    }
}
