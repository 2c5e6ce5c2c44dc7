//! Ground-truth channel trajectories and noisy Jones-matrix measurements.
//!
//! Rotation angles follow independent Gaussian random walks whose per-step
//! variances come from a [`PerturbationProfile`]; PDL and DGD stay fixed. Each
//! measured response is the exact cascade response plus i.i.d. circular
//! complex-normal noise on every matrix entry.
//!
//! Randomness is drawn from named ChaCha substreams of one master seed (initial
//! state, random walk, and one noise stream per time step), so changing the
//! noise level leaves the channel trajectory untouched.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jones::{JonesMatrix, C64};
use crate::polmodel::{
    channel_response, ChannelParams, FrequencyGrid, FrequencyResponse, SectionParams,
};

const STREAM_INIT: u64 = 1;
const STREAM_WALK: u64 = 2;
const STREAM_NOISE_BASE: u64 = 1 << 32;

/// A ChaCha generator for one named substream of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-section, per-step random-walk variances for `φ` (`sigma2`) and `ψ`
/// (`rho2`). Both are `N × (K+1)`; column `k` drives the increment into step
/// `k`, column 0 is unused by the walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationProfile {
    pub sigma2: Vec<Vec<f64>>,
    pub rho2: Vec<Vec<f64>>,
}

impl PerturbationProfile {
    /// No perturbation anywhere.
    pub fn quiet(n_sections: usize, horizon: usize) -> Self {
        let zeros = vec![vec![0.0; horizon + 1]; n_sections];
        Self {
            sigma2: zeros.clone(),
            rho2: zeros,
        }
    }

    /// Variance `variance` on both angles of `section` (1-based) for
    /// `k ∈ [window[0], window[1]]`, zero elsewhere.
    pub fn windowed(
        n_sections: usize,
        horizon: usize,
        section: usize,
        window: [usize; 2],
        variance: f64,
    ) -> Self {
        let mut profile = Self::quiet(n_sections, horizon);
        if (1..=n_sections).contains(&section) {
            for k in window[0]..=window[1].min(horizon) {
                profile.sigma2[section - 1][k] = variance;
                profile.rho2[section - 1][k] = variance;
            }
        }
        profile
    }

    pub fn horizon(&self) -> usize {
        self.sigma2.first().map_or(0, |r| r.len().saturating_sub(1))
    }

    pub fn validate(&self, n_sections: usize, horizon: usize) -> Result<()> {
        for (name, table) in [("sigma2", &self.sigma2), ("rho2", &self.rho2)] {
            if table.len() != n_sections || table.iter().any(|row| row.len() != horizon + 1) {
                return Err(Error::InvalidConfig(format!(
                    "perturbation.{name} must be {n_sections} x {}",
                    horizon + 1
                )));
            }
            if table.iter().flatten().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidConfig(format!(
                    "perturbation.{name} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Per-entry variance `E|Z|²` of the additive Jones-matrix estimation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub sigma2_z: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if self.sigma2_z >= 0.0 && self.sigma2_z.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "noise.sigma2_z must be finite and nonnegative, got {}",
                self.sigma2_z
            )))
        }
    }
}

/// Everything needed to regenerate a scenario bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "N")]
    pub n_sections: usize,
    #[serde(rename = "K")]
    pub horizon: usize,
    pub tau: f64,
    #[serde(rename = "L")]
    pub n_freqs: usize,
    pub gamma_range: [f64; 2],
    pub angle_range: [f64; 2],
    pub perturbation: PerturbationProfile,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Five sections, 51 steps, section 2 perturbed with variance 0.1 on
    /// `k ∈ [15, 35]`, PDL drawn from `[0.07, 0.17]` nepers, noiseless.
    /// `L = N + 1` so both estimators can share the measurement grid.
    pub fn reference(seed: u64) -> Self {
        let (n, k) = (5, 50);
        Self {
            n_sections: n,
            horizon: k,
            tau: 1.0,
            n_freqs: n + 1,
            gamma_range: [0.07, 0.17],
            angle_range: [-PI, PI],
            perturbation: PerturbationProfile::windowed(n, k, 2, [15, 35], 0.1),
            noise: NoiseModel::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sections == 0 {
            return Err(Error::InvalidConfig("N must be at least 1".into()));
        }
        if self.n_freqs == 0 {
            return Err(Error::InvalidConfig("L must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        for (name, r) in [("gamma_range", self.gamma_range), ("angle_range", self.angle_range)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::InvalidConfig(format!("{name} must satisfy lo <= hi")));
            }
        }
        self.perturbation.validate(self.n_sections, self.horizon)?;
        self.noise.validate()
    }

    pub fn grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::canonical(self.n_freqs, self.tau)
    }

    /// Copy of this config with `sigma2_z` set for the given per-entry SNR,
    /// `σ²_z = P · 10^{-SNR/10}` where `P` is the mean per-entry power of the
    /// noiseless response at `k = 0`.
    pub fn with_snr_db(&self, snr_db: f64) -> Result<Self> {
        self.validate()?;
        let theta0 = sample_initial(self, &mut substream(self.seed, STREAM_INIT));
        let resp = channel_response(&theta0, &self.grid()?);
        let power = resp.energy() / (4 * resp.grid().len()) as f64;
        let mut out = self.clone();
        out.noise.sigma2_z = sigma2_for_snr(snr_db, power);
        Ok(out)
    }
}

/// `σ²_z = power · 10^{-snr_db/10}`.
pub fn sigma2_for_snr(snr_db: f64, power: f64) -> f64 {
    power * 10f64.powf(-snr_db / 10.0)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    // A degenerate range still consumes one draw to keep stream alignment.
    let u: f64 = rng.random();
    range[0] + (range[1] - range[0]) * u
}

/// Draws `γ_n ~ U[gamma_range]` and `φ_n(0), ψ_n(0) ~ U[angle_range]`.
pub fn sample_initial<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> ChannelParams {
    let sections = (0..config.n_sections)
        .map(|_| {
            let gamma = uniform(rng, config.gamma_range);
            let phi = uniform(rng, config.angle_range);
            let psi = uniform(rng, config.angle_range);
            SectionParams::new(gamma, phi, psi)
        })
        .collect();
    ChannelParams {
        sections,
        tau: config.tau,
    }
}

/// One random-walk step into time `k`: `φ_n += N(0, σ²_n(k))`,
/// `ψ_n += N(0, ϱ²_n(k))`.
pub fn evolve<R: Rng + ?Sized>(
    theta_prev: &ChannelParams,
    profile: &PerturbationProfile,
    k: usize,
    rng: &mut R,
) -> ChannelParams {
    let mut next = theta_prev.clone();
    for (n, s) in next.sections.iter_mut().enumerate() {
        let dphi: f64 = rng.sample(StandardNormal);
        let dpsi: f64 = rng.sample(StandardNormal);
        s.phi += profile.sigma2[n][k].sqrt() * dphi;
        s.psi += profile.rho2[n][k].sqrt() * dpsi;
    }
    next
}

/// One circular complex-normal sample with `E|z|² = sigma2`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, sigma2: f64) -> C64 {
    let s = (0.5 * sigma2).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Adds independent complex-normal noise to every entry of every matrix.
pub fn add_noise<R: Rng + ?Sized>(
    resp: &FrequencyResponse,
    model: &NoiseModel,
    rng: &mut R,
) -> FrequencyResponse {
    let mut out = resp.clone();
    if model.sigma2_z == 0.0 {
        return out;
    }
    for h in out.matrices_mut() {
        for z in h.m.iter_mut().flatten() {
            *z += complex_normal(rng, model.sigma2_z);
        }
    }
    out
}

/// Noisy measurements for `k = 0..=K` together with the ground truth that
/// produced them.
///
/// Estimators receive [`MeasurementSeries::measurements`] only; the truth is
/// reachable through [`MeasurementSeries::ground_truth`] for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    grid: FrequencyGrid,
    measured: Vec<FrequencyResponse>,
    truth: Vec<ChannelParams>,
}

impl MeasurementSeries {
    pub fn new(
        grid: FrequencyGrid,
        measured: Vec<FrequencyResponse>,
        truth: Vec<ChannelParams>,
    ) -> Result<Self> {
        if measured.len() != truth.len() || measured.is_empty() {
            return Err(Error::Misaligned(format!(
                "{} measurements vs {} ground-truth states",
                measured.len(),
                truth.len()
            )));
        }
        if measured.iter().any(|m| m.grid() != &grid) {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            grid,
            measured,
            truth,
        })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn measurements(&self) -> &[FrequencyResponse] {
        &self.measured
    }

    pub fn ground_truth(&self) -> &[ChannelParams] {
        &self.truth
    }

    pub fn len(&self) -> usize {
        self.measured.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measured.is_empty()
    }
}

/// Builds the full trajectory and its noisy measurements from `config`.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<MeasurementSeries> {
    config.validate()?;
    let grid = config.grid()?;
    let mut walk = substream(config.seed, STREAM_WALK);
    let mut theta = sample_initial(config, &mut substream(config.seed, STREAM_INIT));

    let mut truth = Vec::with_capacity(config.horizon + 1);
    let mut measured = Vec::with_capacity(config.horizon + 1);
    for k in 0..=config.horizon {
        if k > 0 {
            theta = evolve(&theta, &config.perturbation, k, &mut walk);
        }
        let clean = channel_response(&theta, &grid);
        let mut noise_rng = substream(config.seed, STREAM_NOISE_BASE + k as u64);
        measured.push(add_noise(&clean, &config.noise, &mut noise_rng));
        truth.push(theta.clone());
    }
    MeasurementSeries::new(grid, measured, truth)
}

fn scenario_header(n_sections: usize, n_freqs: usize) -> Vec<String> {
    let mut header = vec!["k".to_string()];
    for n in 1..=n_sections {
        header.extend(["gamma", "phi", "psi"].iter().map(|p| format!("{p}_{n}")));
    }
    for i in 0..n_freqs {
        for e in ["11", "12", "21", "22"] {
            header.push(format!("h{i}_{e}_re"));
            header.push(format!("h{i}_{e}_im"));
        }
    }
    header
}

/// Writes one CSV record per time step: `k`, the ground-truth section
/// triples, then the `8L` real numbers of the measured matrices. A leading
/// `#` line carries `tau` and the grid.
pub fn write_scenario(path: &Path, series: &MeasurementSeries) -> Result<()> {
    let n_sections = series.truth[0].len();
    let grid = &series.grid;
    let mut file = BufWriter::new(File::create(path)?);
    let omegas: Vec<String> = grid.omegas().iter().map(|w| w.to_string()).collect();
    writeln!(file, "# tau={} omegas={}", grid.tau(), omegas.join(";"))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(scenario_header(n_sections, grid.len()))?;
    for (k, (theta, h)) in series.truth.iter().zip(&series.measured).enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend(theta.to_vec().iter().map(f64::to_string));
        rec.extend(h.matrices().iter().flat_map(|m| m.to_reals()).map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_scenario`].
pub fn read_scenario(path: &Path) -> Result<MeasurementSeries> {
    let text = std::fs::read_to_string(path)?;
    let bad = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let first = text.lines().next().ok_or_else(|| bad("empty file".into()))?;
    let meta = first
        .strip_prefix("# ")
        .ok_or_else(|| bad("missing metadata line".into()))?;
    let mut tau = None;
    let mut omegas = None;
    for field in meta.split_whitespace() {
        if let Some(v) = field.strip_prefix("tau=") {
            tau = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?);
        } else if let Some(v) = field.strip_prefix("omegas=") {
            let ws = v
                .split(';')
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(e.to_string()))?;
            omegas = Some(ws);
        }
    }
    let tau = tau.ok_or_else(|| bad("missing tau".into()))?;
    let grid = FrequencyGrid::new(omegas.ok_or_else(|| bad("missing omegas".into()))?, tau)?;
    let l = grid.len();

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let width = reader.headers()?.len();
    if width < 1 + 8 * l || (width - 1 - 8 * l) % 3 != 0 {
        return Err(bad(format!("unexpected column count {width}")));
    }
    let n_sections = (width - 1 - 8 * l) / 3;

    let mut truth = Vec::new();
    let mut measured = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {row}: {e}")))?;
        if vals[0] as usize != row {
            return Err(bad(format!("row {row} has k = {}", vals[0])));
        }
        let split = 1 + 3 * n_sections;
        truth.push(ChannelParams::from_vec(&vals[1..split], tau));
        let matrices = vals[split..]
            .chunks_exact(8)
            .map(|c| JonesMatrix::from_reals(c.try_into().expect("chunk of 8")))
            .collect();
        measured.push(FrequencyResponse::new(grid.clone(), matrices)?);
    }
    MeasurementSeries::new(grid, measured, truth)
}
