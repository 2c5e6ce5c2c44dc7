//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64 as C;
use polsense::{ChannelParams, JonesMatrix, SectionParams};
use rand::Rng;

pub type M2 = [[C; 2]; 2];

pub fn mul(a: &M2, b: &M2) -> M2 {
    let mut out = [[C::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn pdl(gamma: f64) -> M2 {
    let z = C::new(0.0, 0.0);
    [[C::new((gamma / 2.0).exp(), 0.0), z], [z, C::new((-gamma / 2.0).exp(), 0.0)]]
}

pub fn rotation(phi: f64, psi: f64) -> M2 {
    let j = C::new(0.0, 1.0);
    let c = C::new(phi.cos(), 0.0);
    let s = phi.sin();
    [
        [c, j * C::from_polar(1.0, psi) * s],
        [j * C::from_polar(1.0, -psi) * s, c],
    ]
}

pub fn dgd(omega: f64, tau: f64) -> M2 {
    let z = C::new(0.0, 0.0);
    [[C::new(1.0, 0.0), z], [z, C::from_polar(1.0, omega * tau)]]
}

/// `A_N ⋯ A_1` with `A_n = Γ(γ_n) R(φ_n, ψ_n) T(ω)`.
pub fn cascade(sections: &[SectionParams], omega: f64, tau: f64) -> M2 {
    let mut h = [[C::new(1.0, 0.0), C::new(0.0, 0.0)], [C::new(0.0, 0.0), C::new(1.0, 0.0)]];
    for s in sections {
        let a = mul(&mul(&pdl(s.gamma), &rotation(s.phi, s.psi)), &dgd(omega, tau));
        h = mul(&a, &h);
    }
    h
}

pub fn det(a: &M2) -> C {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

pub fn frob_sq(a: &M2, b: &M2) -> f64 {
    (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| (a[i][j] - b[i][j]).norm_sqr())
        .sum()
}

pub fn to_m2(a: &JonesMatrix) -> M2 {
    a.m
}

pub fn is_identity(a: &M2) -> bool {
    let id = [[C::new(1.0, 0.0), C::new(0.0, 0.0)], [C::new(0.0, 0.0), C::new(1.0, 0.0)]];
    frob_sq(a, &id) == 0.0
}

/// `N` sections with `γ ∈ gamma`, `φ, ψ ∈ [−π, π]` and `|sin φ| > min_sin`.
pub fn random_channel<R: Rng>(rng: &mut R, n: usize, gamma: [f64; 2], min_sin: f64) -> ChannelParams {
    let sections = (0..n)
        .map(|_| loop {
            let s = SectionParams::new(
                rng.random_range(gamma[0]..gamma[1]),
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
            );
            if s.phi.sin().abs() > min_sin {
                break s;
            }
        })
        .collect();
    ChannelParams { sections, tau: 1.0 }
}

/// `Σ_i ‖H̃_i − H(ω_i; θ)‖²_F` from the reference cascade.
pub fn reference_loss(params: &ChannelParams, omegas: &[f64], measured: &[JonesMatrix]) -> f64 {
    omegas
        .iter()
        .zip(measured)
        .map(|(&w, m)| frob_sq(&m.m, &cascade(&params.sections, w, params.tau)))
        .sum()
}
