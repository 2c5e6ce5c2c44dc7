//! Search for realizations the learner fits well in response but not in
//! parameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{abs_cos_traces, Estimator};
use super::{run_experiment, EstimatorSelection, ExperimentConfig};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanThresholds {
    /// Upper bound on the worst per-step relative response residual.
    pub max_residual: f64,
    /// Lower bound on the largest single-step jump of `|cos φ̂_n|` in a
    /// section whose true parameters never move.
    pub min_drift: f64,
}

impl Default for ScanThresholds {
    fn default() -> Self {
        Self {
            max_residual: 1e-3,
            min_drift: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub seed: u64,
    pub max_residual: f64,
    pub max_static_drift: f64,
    pub mean_tracking_error: f64,
    pub nontrackable: bool,
}

/// Runs the learner on `template` for every seed and flags realizations with
/// residual at most `max_residual` and static-section drift at least
/// `min_drift`.
pub fn scan_nontrackable(
    template: &ExperimentConfig,
    seeds: &[u64],
    thresholds: ScanThresholds,
) -> Result<Vec<ScanRow>> {
    let mut base = template.clone();
    base.estimator = EstimatorSelection::Learn;
    base.output_dir = None;
    let p = &base.scenario.perturbation;
    let static_sections: Vec<usize> = (0..base.scenario.n_sections)
        .filter(|&n| p.sigma2[n].iter().chain(&p.rho2[n]).all(|v| *v == 0.0))
        .collect();

    seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.scenario.seed = seed;
            let out = run_experiment(&cfg)?;
            let (est, metrics) = out.get(Estimator::Learn).expect("learner selected");
            let traces = abs_cos_traces(&est.estimates);
            let max_static_drift = static_sections
                .iter()
                .filter_map(|&n| traces.get(n))
                .flat_map(|t| t.windows(2).map(|w| (w[1] - w[0]).abs()))
                .fold(0.0, f64::max);
            let max_residual = metrics.response_residual.iter().cloned().fold(0.0, f64::max);
            Ok(ScanRow {
                seed,
                max_residual,
                max_static_drift,
                mean_tracking_error: metrics.mean_tracking_error(),
                nontrackable: max_residual <= thresholds.max_residual
                    && max_static_drift >= thresholds.min_drift,
            })
        })
        .collect()
}
