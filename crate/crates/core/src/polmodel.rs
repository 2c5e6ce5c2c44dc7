//! Forward model of a fiber built from `N` concatenated sections.
//!
//! Each section applies DGD, then a polarization rotation, then PDL:
//! `A_n(ω) = Γ(γ_n) R(φ_n, ψ_n) T(ω)`. The end-to-end response is the ordered
//! product `H(ω) = A_N(ω) ⋯ A_1(ω)`, so section 1 acts first on the input
//! field. Since `T(ω) = diag(1, z)` with `z = e^{jωτ}`, `H` is a matrix
//! polynomial of degree `N` in `z`; its coefficients are the time-domain taps.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jones::{JonesMatrix, C64, J, ONE, ZERO};

/// Minimum separation of `e^{jω_iτ}` values on the unit circle before two grid
/// points count as aliased.
const ALIAS_TOL: f64 = 1e-9;

/// One section's PDL extinction `gamma` (nepers), rotation angle `phi` and
/// rotation phase `psi` (radians). Angles are kept unwrapped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SectionParams {
    pub gamma: f64,
    pub phi: f64,
    pub psi: f64,
}

impl SectionParams {
    pub fn new(gamma: f64, phi: f64, psi: f64) -> Self {
        Self { gamma, phi, psi }
    }

    pub fn is_finite(&self) -> bool {
        self.gamma.is_finite() && self.phi.is_finite() && self.psi.is_finite()
    }

    /// `|cos φ|`, invariant under the sign flips that commute through the
    /// cascade.
    pub fn abs_cos_phi(&self) -> f64 {
        self.phi.cos().abs()
    }

    /// The frequency-independent part of the section, `Γ(γ) R(φ, ψ)`.
    pub fn static_matrix(&self) -> JonesMatrix {
        make_pdl(self.gamma) * make_rotation(self.phi, self.psi)
    }
}

/// Full channel state: sections in propagation order plus the shared DGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub sections: Vec<SectionParams>,
    pub tau: f64,
}

impl ChannelParams {
    pub fn new(sections: Vec<SectionParams>, tau: f64) -> Result<Self> {
        let params = Self { sections, tau };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sections.is_empty() {
            return Err(Error::InvalidParams("channel needs at least one section".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParams(format!("tau must be positive, got {}", self.tau)));
        }
        if let Some(n) = self.sections.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidParams(format!("section {} is not finite", n + 1)));
        }
        Ok(())
    }

    /// All-zero parameters: no PDL, no rotation.
    pub fn zeros(n_sections: usize, tau: f64) -> Self {
        Self {
            sections: vec![SectionParams::default(); n_sections],
            tau,
        }
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn abs_cos_phi(&self) -> Vec<f64> {
        self.sections.iter().map(SectionParams::abs_cos_phi).collect()
    }

    /// Flattened as `[γ₁, φ₁, ψ₁, γ₂, …]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.sections
            .iter()
            .flat_map(|s| [s.gamma, s.phi, s.psi])
            .collect()
    }

    pub fn from_vec(values: &[f64], tau: f64) -> Self {
        assert_eq!(values.len() % 3, 0, "parameter vector length must be a multiple of 3");
        let sections = values
            .chunks_exact(3)
            .map(|c| SectionParams::new(c[0], c[1], c[2]))
            .collect();
        Self { sections, tau }
    }
}

/// Angular frequencies at which responses are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    omegas: Vec<f64>,
    tau: f64,
}

impl FrequencyGrid {
    /// Arbitrary grid. Rejects empty grids and points whose phase factors
    /// `e^{jω_iτ}` coincide.
    pub fn new(omegas: Vec<f64>, tau: f64) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::InvalidGrid("grid needs at least one frequency".into()));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidGrid(format!("tau must be positive, got {tau}")));
        }
        if omegas.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidGrid("non-finite frequency".into()));
        }
        let z: Vec<C64> = omegas.iter().map(|w| C64::from_polar(1.0, w * tau)).collect();
        for i in 0..z.len() {
            for j in 0..i {
                if (z[i] - z[j]).norm() < ALIAS_TOL {
                    return Err(Error::InvalidGrid(format!(
                        "frequencies {j} and {i} alias (equal modulo 2π/τ)"
                    )));
                }
            }
        }
        Ok(Self { omegas, tau })
    }

    /// `L` points spread evenly over one free spectral range:
    /// `ω_i τ = 2π i / L`, `i = 0..L-1`.
    pub fn canonical(l: usize, tau: f64) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidGrid("grid needs at least one frequency".into()));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidGrid(format!("tau must be positive, got {tau}")));
        }
        let omegas = (0..l).map(|i| TAU * i as f64 / (l as f64 * tau)).collect();
        Ok(Self { omegas, tau })
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    /// Whether this grid coincides with [`FrequencyGrid::canonical`] of the
    /// same length.
    pub fn is_canonical(&self) -> bool {
        let l = self.len() as f64;
        self.omegas
            .iter()
            .enumerate()
            .all(|(i, w)| (w * self.tau - TAU * i as f64 / l).abs() <= 1e-12 * (1.0 + TAU))
    }

    /// `z_i = e^{jω_iτ}` for every grid point.
    pub fn phase_factors(&self) -> Vec<C64> {
        self.omegas
            .iter()
            .map(|w| C64::from_polar(1.0, w * self.tau))
            .collect()
    }

    fn matches(&self, other: &Self) -> bool {
        self.len() == other.len()
            && (self.tau - other.tau).abs() <= 1e-12 * self.tau.abs()
            && self
                .omegas
                .iter()
                .zip(&other.omegas)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
    }
}

/// Jones matrices sampled on a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    grid: FrequencyGrid,
    matrices: Vec<JonesMatrix>,
}

impl FrequencyResponse {
    pub fn new(grid: FrequencyGrid, matrices: Vec<JonesMatrix>) -> Result<Self> {
        if matrices.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "{} matrices for {} grid points",
                matrices.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, matrices })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn matrices(&self) -> &[JonesMatrix] {
        &self.matrices
    }

    pub(crate) fn matrices_mut(&mut self) -> &mut [JonesMatrix] {
        &mut self.matrices
    }

    /// `Σ_i ‖H_i‖²_F`.
    pub fn energy(&self) -> f64 {
        self.matrices.iter().map(JonesMatrix::norm_sqr).sum()
    }

    pub fn ensure_same_grid(&self, other: &FrequencyResponse) -> Result<()> {
        if self.grid.matches(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Matrix-polynomial coefficients `h_0..h_D` of `H(z) = Σ h_m z^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TapSequence {
    pub taps: Vec<JonesMatrix>,
    pub tau: f64,
}

impl TapSequence {
    /// Polynomial degree `D` (one less than the tap count).
    pub fn degree(&self) -> usize {
        self.taps.len().saturating_sub(1)
    }

    /// Frobenius norm over all taps.
    pub fn norm(&self) -> f64 {
        self.taps.iter().map(JonesMatrix::norm_sqr).sum::<f64>().sqrt()
    }

    /// `Σ_m h_m e^{jmωτ}` by Horner's rule.
    pub fn evaluate(&self, omega: f64) -> JonesMatrix {
        let z = C64::from_polar(1.0, omega * self.tau);
        self.taps
            .iter()
            .rev()
            .fold(JonesMatrix::zero(), |acc, h| acc * z + *h)
    }

    pub fn evaluate_on(&self, grid: &FrequencyGrid) -> FrequencyResponse {
        let matrices = grid.omegas().iter().map(|&w| self.evaluate(w)).collect();
        FrequencyResponse {
            grid: grid.clone(),
            matrices,
        }
    }
}

/// `Γ(γ) = diag(e^{γ/2}, e^{-γ/2})`.
pub fn make_pdl(gamma: f64) -> JonesMatrix {
    let g = (0.5 * gamma).exp();
    JonesMatrix::diag(C64::new(g, 0.0), C64::new(1.0 / g, 0.0))
}

/// `R(φ, ψ) = [[cos φ, j e^{jψ} sin φ], [j e^{-jψ} sin φ, cos φ]]`.
pub fn make_rotation(phi: f64, psi: f64) -> JonesMatrix {
    let (s, c) = phi.sin_cos();
    let e = C64::from_polar(1.0, psi);
    JonesMatrix::new(C64::new(c, 0.0), J * e * s, J * e.conj() * s, C64::new(c, 0.0))
}

/// `T(ω) = diag(1, e^{jωτ})`.
pub fn make_dgd(omega: f64, tau: f64) -> JonesMatrix {
    JonesMatrix::diag(ONE, C64::from_polar(1.0, omega * tau))
}

/// Single-section factor `Γ R T(ω)`.
pub fn section_matrix(section: &SectionParams, omega: f64, tau: f64) -> JonesMatrix {
    section.static_matrix() * make_dgd(omega, tau)
}

/// Cascade response `H(ω_i) = A_N ⋯ A_1` at every grid point.
pub fn channel_response(params: &ChannelParams, grid: &FrequencyGrid) -> FrequencyResponse {
    let statics: Vec<JonesMatrix> = params.sections.iter().map(SectionParams::static_matrix).collect();
    let matrices = grid
        .omegas()
        .iter()
        .map(|&w| {
            let t = make_dgd(w, params.tau);
            statics
                .iter()
                .fold(JonesMatrix::identity(), |acc, s| *s * t * acc)
        })
        .collect();
    FrequencyResponse {
        grid: grid.clone(),
        matrices,
    }
}

/// Exact tap expansion of the cascade by symbolic polynomial multiplication.
///
/// Applying a section to `G(z)` multiplies row 2 by `z` (shifting it one tap
/// later) and then left-multiplies every tap by `Γ R`.
pub fn impulse_taps(params: &ChannelParams) -> TapSequence {
    let mut taps = vec![JonesMatrix::identity()];
    for section in &params.sections {
        let m = section.static_matrix();
        let d = taps.len();
        let next = (0..=d)
            .map(|k| {
                let row1 = if k < d { taps[k].row(0) } else { [ZERO, ZERO] };
                let row2 = if k >= 1 { taps[k - 1].row(1) } else { [ZERO, ZERO] };
                m * JonesMatrix::from_rows(row1, row2)
            })
            .collect();
        taps = next;
    }
    TapSequence {
        taps,
        tau: params.tau,
    }
}

/// `Σ_i ‖A_i − B_i‖²_F` over a shared grid.
pub fn response_distance(a: &FrequencyResponse, b: &FrequencyResponse) -> Result<f64> {
    a.ensure_same_grid(b)?;
    Ok(a
        .matrices
        .iter()
        .zip(&b.matrices)
        .map(|(x, y)| (*x - *y).norm_sqr())
        .sum())
}
