//! Physics-based estimator: fit all section parameters of the cascade model
//! jointly by minimizing `ℒ(θ̂) = Σ_i ‖H̃(ω_i) − H(ω_i; θ̂)‖²_F` with Adam.
//!
//! Gradients are exact. For `H = Q_n A_n P_n` with prefix `P_n = A_{n-1}⋯A_1`
//! and suffix `Q_n = A_N⋯A_{n+1}`, each parameter of section `n` only touches
//! `S_n = Γ_n R_n` inside `A_n = S_n T`, so
//!
//! ```text
//! ∂ℒ/∂p = −2 Σ_i Re tr(W_{n,i}† ∂S_n/∂p),   W_{n,i} = Q_n† E_i (T P_n)†
//! ```
//!
//! with `E_i = H̃_i − H_i`. One prefix and one suffix sweep per frequency give
//! all `3N` components.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jones::{JonesMatrix, C64};
use crate::polmodel::{
    channel_response, make_dgd, make_pdl, make_rotation, response_distance, ChannelParams,
    FrequencyGrid, FrequencyResponse, SectionParams,
};

/// Adam settings. Field names in JSON follow the usual symbols (`M`, `alpha`,
/// `M_track`, `N_model`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Iterations for the first (cold-started) fit.
    #[serde(rename = "M")]
    pub iterations: usize,
    #[serde(rename = "alpha")]
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Iterations for every warm-started fit after the first step.
    #[serde(rename = "M_track")]
    pub track_iterations: usize,
    /// Stop early once the gradient norm drops below this value. Off when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    /// Number of sections in the learned model; defaults to the channel's.
    #[serde(rename = "N_model", default, skip_serializing_if = "Option::is_none")]
    pub model_sections: Option<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            track_iterations: 300,
            grad_tol: None,
            model_sections: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.iterations == 0 || self.track_iterations == 0 {
            return bad("M and M_track must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if matches!(self.grad_tol, Some(t) if t.is_nan() || t < 0.0) {
            return bad("grad_tol must be nonnegative");
        }
        if self.model_sections == Some(0) {
            return bad("N_model must be at least 1");
        }
        Ok(())
    }
}

/// Outcome of one [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ChannelParams,
    /// Loss before each optimizer step.
    pub losses: Vec<f64>,
    pub final_loss: f64,
    pub grad_norm: f64,
}

/// Per-step learner output from [`track`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub estimates: Vec<ChannelParams>,
    pub final_losses: Vec<f64>,
}

fn check_tau(params: &ChannelParams, grid: &FrequencyGrid) -> Result<()> {
    if (params.tau - grid.tau()).abs() <= 1e-12 * grid.tau() {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// `Σ_i ‖H̃_i − H(ω_i; θ̂)‖²_F`.
pub fn loss(params: &ChannelParams, measured: &FrequencyResponse) -> Result<f64> {
    check_tau(params, measured.grid())?;
    response_distance(measured, &channel_response(params, measured.grid()))
}

/// `∂ℒ/∂θ̂` flattened as `[γ₁, φ₁, ψ₁, γ₂, …]`.
pub fn loss_gradient(params: &ChannelParams, measured: &FrequencyResponse) -> Result<Vec<f64>> {
    loss_and_gradient(params, measured).map(|(_, g)| g)
}

/// Per-section factor `S = Γ R` and its three parameter derivatives.
struct SectionDerivs {
    s: JonesMatrix,
    d_gamma: JonesMatrix,
    d_phi: JonesMatrix,
    d_psi: JonesMatrix,
}

impl SectionDerivs {
    fn new(sec: &SectionParams) -> Self {
        let pdl = make_pdl(sec.gamma);
        let rot = make_rotation(sec.phi, sec.psi);
        let (sn, cs) = sec.phi.sin_cos();
        let e = C64::from_polar(1.0, sec.psi);
        let j = C64::new(0.0, 1.0);
        let d_rot_phi = JonesMatrix::new(
            C64::new(-sn, 0.0),
            j * e * cs,
            j * e.conj() * cs,
            C64::new(-sn, 0.0),
        );
        let d_rot_psi = JonesMatrix::new(C64::new(0.0, 0.0), -e * sn, e.conj() * sn, C64::new(0.0, 0.0));
        let s = pdl * rot;
        Self {
            s,
            d_gamma: JonesMatrix::diag(C64::new(0.5, 0.0), C64::new(-0.5, 0.0)) * s,
            d_phi: pdl * d_rot_phi,
            d_psi: pdl * d_rot_psi,
        }
    }
}

/// Loss and analytic gradient in one pass.
pub fn loss_and_gradient(params: &ChannelParams, measured: &FrequencyResponse) -> Result<(f64, Vec<f64>)> {
    let grid = measured.grid();
    check_tau(params, grid)?;
    let n = params.len();
    let derivs: Vec<SectionDerivs> = params.sections.iter().map(SectionDerivs::new).collect();
    let mut grad = vec![0.0; 3 * n];
    let mut total = 0.0;
    let mut prefix = vec![JonesMatrix::identity(); n + 1];
    let mut factors = vec![JonesMatrix::identity(); n];

    for (&omega, target) in grid.omegas().iter().zip(measured.matrices()) {
        let t = make_dgd(omega, params.tau);
        for (k, d) in derivs.iter().enumerate() {
            factors[k] = d.s * t;
            prefix[k + 1] = factors[k] * prefix[k];
        }
        let err = *target - prefix[n];
        total += err.norm_sqr();

        // Walk from the output end, carrying Q_k† E.
        let mut q_adj_err = err;
        for k in (0..n).rev() {
            let w = q_adj_err * (t * prefix[k]).adjoint();
            let d = &derivs[k];
            grad[3 * k] -= 2.0 * w.real_inner(&d.d_gamma);
            grad[3 * k + 1] -= 2.0 * w.real_inner(&d.d_phi);
            grad[3 * k + 2] -= 2.0 * w.real_inner(&d.d_psi);
            q_adj_err = factors[k].adjoint() * q_adj_err;
        }
    }
    Ok((total, grad))
}

/// Jacobian of the stacked real response (`8L` rows, entry order as
/// [`JonesMatrix::to_reals`]) with respect to the `3N` parameters.
pub fn response_jacobian(params: &ChannelParams, grid: &FrequencyGrid) -> DMatrix<f64> {
    let n = params.len();
    let derivs: Vec<SectionDerivs> = params.sections.iter().map(SectionDerivs::new).collect();
    let mut jac = DMatrix::zeros(8 * grid.len(), 3 * n);
    let mut prefix = vec![JonesMatrix::identity(); n + 1];
    let mut factors = vec![JonesMatrix::identity(); n];
    for (i, &omega) in grid.omegas().iter().enumerate() {
        let t = make_dgd(omega, params.tau);
        for (k, d) in derivs.iter().enumerate() {
            factors[k] = d.s * t;
            prefix[k + 1] = factors[k] * prefix[k];
        }
        let mut suffix = JonesMatrix::identity();
        for k in (0..n).rev() {
            let right = t * prefix[k];
            let d = &derivs[k];
            for (c, ds) in [d.d_gamma, d.d_phi, d.d_psi].iter().enumerate() {
                let col = (suffix * *ds * right).to_reals();
                for (r, v) in col.iter().enumerate() {
                    jac[(8 * i + r, 3 * k + c)] = *v;
                }
            }
            suffix = suffix * factors[k];
        }
    }
    jac
}

/// `σ_min / σ_max` of [`response_jacobian`]. Small values mean some
/// direction in parameter space barely changes the response, i.e. the
/// realization is close to overparameterized.
pub fn identifiability(params: &ChannelParams, grid: &FrequencyGrid) -> f64 {
    let sv = response_jacobian(params, grid).singular_values();
    let max = sv.max();
    if max > 0.0 {
        sv.min() / max
    } else {
        0.0
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: &OptimizerConfig, dim: usize) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((xi, gi), mi), vi) in x.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *xi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn fit_iters(
    measured: &FrequencyResponse,
    init: &ChannelParams,
    cfg: &OptimizerConfig,
    iterations: usize,
) -> Result<FitResult> {
    let tau = init.tau;
    let mut x = init.to_vec();
    let mut adam = Adam::new(cfg, x.len());
    let mut losses = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let params = ChannelParams::from_vec(&x, tau);
        let (l, g) = loss_and_gradient(&params, measured)?;
        if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: it, step: None });
        }
        losses.push(l);
        if matches!(cfg.grad_tol, Some(tol) if norm(&g) < tol) {
            break;
        }
        adam.step(&mut x, &g);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: it, step: None });
        }
    }
    let params = ChannelParams::from_vec(&x, tau);
    let (final_loss, g) = loss_and_gradient(&params, measured)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence { iteration: iterations, step: None });
    }
    Ok(FitResult {
        params,
        losses,
        final_loss,
        grad_norm: norm(&g),
    })
}

/// Runs `cfg.iterations` Adam steps from `init`.
pub fn fit(measured: &FrequencyResponse, init: &ChannelParams, cfg: &OptimizerConfig) -> Result<FitResult> {
    cfg.validate()?;
    init.validate()?;
    fit_iters(measured, init, cfg, cfg.iterations)
}

/// Fits every time step in order: step 0 from all-zero parameters with `M`
/// iterations, later steps warm-started from the previous estimate with
/// `M_track` iterations.
pub fn track(
    measurements: &[FrequencyResponse],
    cfg: &OptimizerConfig,
    n_sections: usize,
    tau: f64,
) -> Result<TrackResult> {
    cfg.validate()?;
    if measurements.is_empty() {
        return Err(Error::InvalidConfig("cannot track an empty series".into()));
    }
    let n_model = cfg.model_sections.unwrap_or(n_sections);
    let mut current = ChannelParams::new(vec![SectionParams::default(); n_model], tau)?;
    let mut estimates = Vec::with_capacity(measurements.len());
    let mut final_losses = Vec::with_capacity(measurements.len());
    for (k, m) in measurements.iter().enumerate() {
        let iters = if k == 0 { cfg.iterations } else { cfg.track_iterations };
        let res = fit_iters(m, &current, cfg, iters).map_err(|e| match e {
            Error::Divergence { iteration, .. } => Error::Divergence { iteration, step: Some(k) },
            other => other,
        })?;
        current = res.params;
        estimates.push(current.clone());
        final_losses.push(res.final_loss);
    }
    Ok(TrackResult {
        estimates,
        final_losses,
    })
}
