//! Experiment orchestration: scenario generation, both estimators over every
//! time step, metrics, CSV artifacts and parameter sweeps.

mod io;
mod metrics;
mod scan;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{
    read_diagnostics, read_metrics, read_responses, read_rows, read_trace, trace_rows,
    write_diagnostics, write_metrics, write_responses, write_rows, write_trace, DiagnosticsRow,
    MetricsRow, ResidualRow, ResponseRow, StoredMetrics, TraceRow,
};
pub use metrics::{
    abs_cos_traces, compute_metrics, scenario_health, EstimateSeries, Estimator, MetricsReport,
    ScenarioHealth, DEGENERATE_IDENTIFIABILITY,
};
pub use scan::{scan_nontrackable, ScanRow, ScanThresholds};

use crate::error::{Error, Result};
use crate::isa::run_isa_series;
use crate::learner::{track, OptimizerConfig};
use crate::polmodel::FrequencyResponse;
use crate::simulator::{generate_scenario, write_scenario, MeasurementSeries, ScenarioConfig};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "POLSENSE_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorSelection {
    Isa,
    Learn,
    Both,
}

impl EstimatorSelection {
    pub fn estimators(&self) -> Vec<Estimator> {
        match self {
            EstimatorSelection::Isa => vec![Estimator::Isa],
            EstimatorSelection::Learn => vec![Estimator::Learn],
            EstimatorSelection::Both => vec![Estimator::Isa, Estimator::Learn],
        }
    }
}

impl std::str::FromStr for EstimatorSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isa" => Ok(Self::Isa),
            "learn" => Ok(Self::Learn),
            "both" => Ok(Self::Both),
            other => Err(Error::InvalidConfig(format!(
                "estimator must be isa, learn or both, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub estimator: EstimatorSelection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Inclusive step range `[k₁, k₂]` searched for the perturbation.
    pub metric_window: [usize; 2],
    /// When present, overrides `scenario.noise.sigma2_z` through
    /// [`ScenarioConfig::with_snr_db`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
}

impl ExperimentConfig {
    /// The reference scenario tracked by both estimators with default Adam
    /// settings and the window `[15, 35]`.
    pub fn reference(seed: u64) -> Self {
        Self {
            scenario: ScenarioConfig::reference(seed),
            optimizer: OptimizerConfig::default(),
            estimator: EstimatorSelection::Both,
            output_dir: None,
            metric_window: [15, 35],
            snr_db: None,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.optimizer.validate()?;
        let [k1, k2] = self.metric_window;
        if k1 == 0 || k1 > k2 || k2 > self.scenario.horizon {
            return Err(Error::InvalidConfig(format!(
                "metric_window [{k1}, {k2}] must lie within [1, {}]",
                self.scenario.horizon
            )));
        }
        if let Some(snr) = self.snr_db {
            if snr.is_nan() {
                return Err(Error::InvalidConfig("snr_db is NaN".into()));
            }
        }
        Ok(())
    }

    /// Validated copy with the SNR (if any) applied to the noise model.
    pub fn resolved(&self) -> Result<Self> {
        self.validate()?;
        let mut out = self.clone();
        if let Some(snr) = self.snr_db {
            out.scenario = self.scenario.with_snr_db(snr)?;
        }
        Ok(out)
    }

    /// 1-based section carrying the most random-walk variance, if unique.
    pub fn perturbed_section(&self) -> Option<usize> {
        let p = &self.scenario.perturbation;
        let totals: Vec<f64> = p
            .sigma2
            .iter()
            .zip(&p.rho2)
            .map(|(s, r)| s.iter().chain(r).sum())
            .collect();
        let best = totals.iter().cloned().fold(0.0, f64::max);
        let mut hits = totals.iter().enumerate().filter(|(_, t)| **t == best && best > 0.0);
        match (hits.next(), hits.next()) {
            (Some((n, _)), None) => Some(n + 1),
            _ => None,
        }
    }
}

/// Everything produced by one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// The resolved configuration.
    pub config: ExperimentConfig,
    pub series: MeasurementSeries,
    pub health: ScenarioHealth,
    pub estimates: Vec<EstimateSeries>,
    /// Parallel to `estimates`.
    pub metrics: Vec<MetricsReport>,
}

impl ExperimentOutput {
    pub fn get(&self, estimator: Estimator) -> Option<(&EstimateSeries, &MetricsReport)> {
        self.estimates
            .iter()
            .zip(&self.metrics)
            .find(|(e, _)| e.estimator == estimator)
    }
}

/// Runs one estimator over a measurement sequence. Only measurements and the
/// model structure are visible here.
pub fn estimate(
    estimator: Estimator,
    measurements: &[FrequencyResponse],
    n_sections: usize,
    tau: f64,
    optimizer: &OptimizerConfig,
) -> Result<EstimateSeries> {
    match estimator {
        Estimator::Isa => {
            let runs = run_isa_series(measurements, n_sections, tau)?;
            let (estimates, diags) = runs.into_iter().map(|r| (r.params, r.diagnostics)).unzip();
            Ok(EstimateSeries {
                estimator,
                estimates,
                final_losses: None,
                peel_diagnostics: Some(diags),
            })
        }
        Estimator::Learn => {
            let res = track(measurements, optimizer, n_sections, tau)?;
            Ok(EstimateSeries {
                estimator,
                estimates: res.estimates,
                final_losses: Some(res.final_losses),
                peel_diagnostics: None,
            })
        }
    }
}

/// Generates the scenario described by `cfg`, runs the selected estimators
/// and, if `cfg.output_dir` is set, writes all artifacts there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let cfg = cfg.resolved()?;
    let series = generate_scenario(&cfg.scenario)?;
    run_on_series(&cfg, series)
}

/// Like [`run_experiment`] on an existing measurement series. The series must
/// match the scenario's `N`, `K` and `τ`.
pub fn run_on_series(cfg: &ExperimentConfig, series: MeasurementSeries) -> Result<ExperimentOutput> {
    let cfg = cfg.resolved()?;
    let sc = &cfg.scenario;
    let truth_n = series.ground_truth()[0].len();
    if truth_n != sc.n_sections || series.len() != sc.horizon + 1 {
        return Err(Error::Misaligned(format!(
            "series has N = {truth_n}, K = {}; config has N = {}, K = {}",
            series.len() - 1,
            sc.n_sections,
            sc.horizon
        )));
    }
    if series.grid().tau() != sc.tau {
        return Err(Error::InvalidGrid(format!(
            "series tau {} differs from config tau {}",
            series.grid().tau(),
            sc.tau
        )));
    }

    let health = scenario_health(series.ground_truth(), series.grid());
    let mut estimates = Vec::new();
    let mut metrics = Vec::new();
    for estimator in cfg.estimator.estimators() {
        let est = estimate(estimator, series.measurements(), sc.n_sections, sc.tau, &cfg.optimizer)?;
        metrics.push(compute_metrics(
            &est.estimates,
            series.ground_truth(),
            series.grid(),
            cfg.metric_window,
        )?);
        estimates.push(est);
    }
    let out = ExperimentOutput {
        config: cfg,
        series,
        health,
        estimates,
        metrics,
    };
    if let Some(dir) = &out.config.output_dir {
        write_outputs(dir, &out)?;
    }
    Ok(out)
}

/// Writes `config.json`, `health.json`, `scenario.csv`, `truth.csv`,
/// `response.csv`, `est_<name>.csv`, `metrics.csv`, `residual.csv` and, for
/// ISA, `isa_diagnostics.csv` into `dir`.
pub fn write_outputs(dir: &Path, out: &ExperimentOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_series(dir, &out.config, &out.series)?;
    std::fs::write(dir.join("health.json"), serde_json::to_string_pretty(&out.health)?)?;
    for est in &out.estimates {
        write_trace(&dir.join(format!("est_{}.csv", est.estimator)), &est.estimates)?;
        if let Some(diags) = &est.peel_diagnostics {
            write_diagnostics(&dir.join("isa_diagnostics.csv"), diags)?;
        }
    }
    let reports: Vec<_> = out
        .estimates
        .iter()
        .zip(&out.metrics)
        .map(|(e, m)| (e.estimator, m, e.final_losses.as_deref()))
        .collect();
    write_metrics(&dir.join("metrics.csv"), &dir.join("residual.csv"), &reports)
}

/// Writes the simulation artifacts only: `config.json`, `scenario.csv`,
/// `truth.csv` and `response.csv`.
pub fn write_series(dir: &Path, cfg: &ExperimentConfig, series: &MeasurementSeries) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    write_scenario(&dir.join("scenario.csv"), series)?;
    write_trace(&dir.join("truth.csv"), series.ground_truth())?;
    write_responses(&dir.join("response.csv"), series.measurements())
}

/// Noise levels for a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseAxis {
    /// Per-entry noise variances `σ²_z`.
    Sigma2(Vec<f64>),
    /// Per-entry SNRs in dB.
    SnrDb(Vec<f64>),
}

impl NoiseAxis {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseAxis::Sigma2(_) => "sigma2_z",
            NoiseAxis::SnrDb(_) => "snr_db",
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            NoiseAxis::Sigma2(v) | NoiseAxis::SnrDb(v) => v,
        }
    }

    fn apply(&self, template: &ExperimentConfig, value: f64, seed: u64) -> ExperimentConfig {
        let mut cfg = template.clone();
        cfg.scenario.seed = seed;
        cfg.output_dir = None;
        match self {
            NoiseAxis::Sigma2(_) => {
                cfg.snr_db = None;
                cfg.scenario.noise.sigma2_z = value;
            }
            NoiseAxis::SnrDb(_) => cfg.snr_db = Some(value),
        }
        cfg
    }
}

/// One experiment of a sweep, reduced to its headline numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub noise_value: f64,
    pub seed: u64,
    pub estimator: Estimator,
    pub degenerate: bool,
    pub min_identifiability: f64,
    pub verdict: Option<usize>,
    pub margin: f64,
    pub success: bool,
    pub mean_tracking_error: f64,
}

/// Per noise level and estimator. Rates and medians are over
/// non-degenerate runs only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub noise_axis: String,
    pub noise_value: f64,
    pub estimator: Estimator,
    pub runs: usize,
    pub degenerate: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub median_tracking_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub runs: Vec<SweepRun>,
    pub aggregate: Vec<SweepAggregate>,
}

pub fn summarize_run(out: &ExperimentOutput, noise_value: f64) -> Vec<SweepRun> {
    let target = out.config.perturbed_section();
    out.estimates
        .iter()
        .zip(&out.metrics)
        .map(|(e, m)| SweepRun {
            noise_value,
            seed: out.config.scenario.seed,
            estimator: e.estimator,
            degenerate: out.health.degenerate,
            min_identifiability: out.health.min_identifiability,
            verdict: m.verdict,
            margin: m.margin,
            success: target.is_some() && m.verdict == target,
            mean_tracking_error: m.mean_tracking_error(),
        })
        .collect()
}

/// Runs every (noise level, seed) pair of the axis in parallel and
/// aggregates localization success and tracking error. With
/// `template.output_dir` set, writes `sweep_runs.csv` and
/// `sweep_aggregate.csv` there.
pub fn sweep(template: &ExperimentConfig, noise: &NoiseAxis, seeds: &[u64]) -> Result<SweepReport> {
    if noise.values().is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("sweep axis is empty".into()));
    }
    template.validate()?;
    let points: Vec<(f64, u64)> = noise
        .values()
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let runs: Vec<SweepRun> = points
        .par_iter()
        .map(|&(v, seed)| {
            let out = run_experiment(&noise.apply(template, v, seed))?;
            Ok(summarize_run(&out, v))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut aggregate = Vec::new();
    for &v in noise.values() {
        for estimator in template.estimator.estimators() {
            let group: Vec<&SweepRun> = runs
                .iter()
                .filter(|r| r.noise_value.to_bits() == v.to_bits() && r.estimator == estimator)
                .collect();
            let counted: Vec<&&SweepRun> = group.iter().filter(|r| !r.degenerate).collect();
            let successes = counted.iter().filter(|r| r.success).count();
            let errors: Vec<f64> = counted.iter().map(|r| r.mean_tracking_error).collect();
            aggregate.push(SweepAggregate {
                noise_axis: noise.name().to_string(),
                noise_value: v,
                estimator,
                runs: group.len(),
                degenerate: group.len() - counted.len(),
                successes,
                success_rate: successes as f64 / counted.len() as f64,
                median_tracking_error: median(errors),
            });
        }
    }
    if let Some(dir) = &template.output_dir {
        std::fs::create_dir_all(dir)?;
        write_rows(&dir.join("sweep_runs.csv"), &runs)?;
        write_rows(&dir.join("sweep_aggregate.csv"), &aggregate)?;
    }
    Ok(SweepReport { runs, aggregate })
}

/// Median of the finite values; NaN when there are none.
fn median(mut xs: Vec<f64>) -> f64 {
    xs.retain(|x| x.is_finite());
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}
