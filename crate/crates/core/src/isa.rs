//! Inverse scattering by layer peeling.
//!
//! The measured response is first converted to its `N + 1` matrix taps. The
//! outermost section leaves a rank-1 fingerprint on both end taps:
//!
//! ```text
//! h_0 = (Γ_N R_N e₁) · (row 1 of g_0)        h_N = (Γ_N R_N e₂) · (row 2 of g_{N-1})
//! ```
//!
//! where `g` are the taps of sections `1..N-1`. The two column directions fix
//! `γ_N, φ_N, ψ_N` in closed form. Multiplying by `(Γ_N R_N)⁻¹` and undoing
//! the DGD row shift strips the section and lowers the degree by one; the
//! procedure repeats down to section 1.
//!
//! The recovered angles are one member of the sign-equivalence class of the
//! true ones: `φ̂_n` is chosen in `[0, π/2]`, and a leftover global `-1` is
//! folded into section 1 as `(π - φ̂₁, ψ̂₁ + π)`. Compare through `|cos φ|`.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::jones::{JonesMatrix, C64, J, ZERO};
use crate::polmodel::{ChannelParams, FrequencyResponse, SectionParams, TapSequence};

/// Below this magnitude a direction component counts as zero and the section
/// is declared unidentifiable.
const DEGENERATE_TOL: f64 = 1e-9;

/// End taps smaller than this fraction of the whole sequence are treated as
/// missing.
const ZERO_TAP_TOL: f64 = 1e-12;

/// Per-section numerical health of one extraction + peel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PeelDiagnostics {
    /// 1-based section index this peel extracted.
    pub section: usize,
    /// `‖row 2 of b_0‖ / ‖b_0‖`, zero for a consistent noiseless peel.
    pub residual_low: f64,
    /// `‖row 1 of b_D‖ / ‖b_D‖`.
    pub residual_high: f64,
    /// `σ_min / σ_max` of `h_0`; zero when the end tap is exactly rank-1.
    pub cond_low: f64,
    /// `σ_min / σ_max` of `h_D`.
    pub cond_high: f64,
    /// `γ̂` and `ψ̂` could not be determined (`sin φ` or `cos φ` vanished) and
    /// were set to zero.
    pub unidentifiable: bool,
}

impl PeelDiagnostics {
    pub fn residual(&self) -> f64 {
        self.residual_low.hypot(self.residual_high)
    }
}

/// Result of [`peel`]: the shortened tap sequence and the two discarded rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Peeled {
    pub taps: TapSequence,
    pub residual_low: f64,
    pub residual_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsaEstimate {
    /// Estimated sections in propagation order `1..N`.
    pub params: ChannelParams,
    /// One entry per section, in the same order as `params.sections`.
    pub diagnostics: Vec<PeelDiagnostics>,
    /// What is left after all peels; `±I` for consistent data.
    pub final_tap: JonesMatrix,
    /// Some estimate came out NaN or infinite.
    pub non_finite: bool,
}

impl IsaEstimate {
    /// `‖final_tap ∓ I‖_F` after the sign fold, a whole-chain consistency
    /// residual.
    pub fn final_residual(&self) -> f64 {
        (self.final_tap - JonesMatrix::identity()).norm()
    }
}

/// Fits `N + 1` taps to the measured response.
///
/// On a canonical grid this is the inverse DFT (exact for `L = N + 1`, the
/// least-squares projection for larger `L` because the DFT columns are
/// orthogonal). Other non-aliased grids are solved through the normal
/// equations.
pub fn response_to_taps(resp: &FrequencyResponse, n_sections: usize) -> Result<TapSequence> {
    let grid = resp.grid();
    let n_taps = n_sections + 1;
    if grid.len() < n_taps {
        return Err(Error::Underdetermined {
            taps: n_taps,
            samples: grid.len(),
        });
    }
    let z = grid.phase_factors();
    let taps = if grid.is_canonical() {
        let scale = 1.0 / grid.len() as f64;
        (0..n_taps)
            .map(|m| {
                resp.matrices()
                    .iter()
                    .zip(&z)
                    .fold(JonesMatrix::zero(), |acc, (h, zi)| acc + *h * zi.conj().powu(m as u32))
                    * scale
            })
            .collect()
    } else {
        least_squares_taps(resp.matrices(), &z, n_taps)?
    };
    Ok(TapSequence {
        taps,
        tau: grid.tau(),
    })
}

/// Solves `min Σ_i ‖H_i − Σ_m h_m z_i^m‖²` via `(V†V) X = V†H`.
fn least_squares_taps(h: &[JonesMatrix], z: &[C64], n_taps: usize) -> Result<Vec<JonesMatrix>> {
    let powers: Vec<Vec<C64>> = z
        .iter()
        .map(|zi| (0..n_taps).map(|m| zi.powu(m as u32)).collect())
        .collect();
    let mut gram = vec![vec![ZERO; n_taps]; n_taps];
    let mut rhs = vec![JonesMatrix::zero(); n_taps];
    for (row, hi) in powers.iter().zip(h) {
        for a in 0..n_taps {
            for b in 0..n_taps {
                gram[a][b] += row[a].conj() * row[b];
            }
            rhs[a] += *hi * row[a].conj();
        }
    }
    // Gaussian elimination with partial pivoting, four right-hand sides at once.
    for col in 0..n_taps {
        let pivot = (col..n_taps)
            .max_by(|&a, &b| gram[a][col].norm().total_cmp(&gram[b][col].norm()))
            .expect("nonempty range");
        if gram[pivot][col].norm() < 1e-13 {
            return Err(Error::InvalidGrid("tap fit is singular on this grid".into()));
        }
        gram.swap(col, pivot);
        rhs.swap(col, pivot);
        let inv = gram[col][col].inv();
        let pivot_row = gram[col].clone();
        for r in (col + 1)..n_taps {
            let f = gram[r][col] * inv;
            if f == ZERO {
                continue;
            }
            for (dst, v) in gram[r][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= f * v;
            }
            let v = rhs[col];
            rhs[r] = rhs[r] - v * f;
        }
    }
    let mut x = vec![JonesMatrix::zero(); n_taps];
    for r in (0..n_taps).rev() {
        let mut acc = rhs[r];
        for c in (r + 1)..n_taps {
            acc = acc - x[c] * gram[r][c];
        }
        x[r] = acc * gram[r][r].inv();
    }
    Ok(x)
}

fn end_taps(taps: &TapSequence) -> Result<(JonesMatrix, JonesMatrix)> {
    if taps.taps.len() < 2 {
        return Err(Error::InvalidParams(
            "layer peeling needs at least two taps".into(),
        ));
    }
    let low = taps.taps[0];
    let high = *taps.taps.last().expect("checked length");
    let floor = ZERO_TAP_TOL * taps.norm();
    if low.norm() <= floor || high.norm() <= floor || !low.is_finite() || !high.is_finite() {
        return Err(Error::DegenerateSection { section: None });
    }
    Ok((low, high))
}

fn wrap_angle(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    } else if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

fn cond(h: &JonesMatrix) -> f64 {
    let (hi, lo) = h.singular_values();
    if hi > 0.0 {
        lo / hi
    } else {
        0.0
    }
}

/// Closed-form `(γ̂, φ̂, ψ̂)` of the outermost section from the column
/// directions of the end taps.
///
/// With `u ∝ Γ R e₁` and `v ∝ Γ R e₂` (arbitrary complex scales),
/// `u₁v₂ ∝ cos²φ`, `−u₂v₁ ∝ sin²φ`, `|u₁v₁| / |u₂v₂| = e^{2γ}` and
/// `arg(u₂v₂ · conj(u₁v₁)) = −2ψ`. Under noise the `tan²φ` ratio is
/// projected onto the real axis.
pub fn extract_last_section(taps: &TapSequence) -> Result<(SectionParams, PeelDiagnostics)> {
    let (low, high) = end_taps(taps)?;
    let u = low.dominant_left_singular_vector();
    let v = high.dominant_left_singular_vector();
    let mut diag = PeelDiagnostics {
        section: taps.degree(),
        cond_low: cond(&low),
        cond_high: cond(&high),
        ..Default::default()
    };

    // u and v have unit norm, so these are the ratios r₁ = u₂/u₁, r₂ = v₁/v₂
    // up to a bounded factor.
    if u[1].norm() < DEGENERATE_TOL && v[0].norm() < DEGENERATE_TOL {
        diag.unidentifiable = true;
        return Ok((SectionParams::new(0.0, 0.0, 0.0), diag));
    }
    if u[0].norm() < DEGENERATE_TOL && v[1].norm() < DEGENERATE_TOL {
        diag.unidentifiable = true;
        return Ok((SectionParams::new(0.0, FRAC_PI_2, 0.0), diag));
    }

    let p = u[0] * v[1];
    let q = -(u[1] * v[0]);
    let tan_num = (q * p.conj()).re.max(0.0).sqrt();
    let phi = tan_num.atan2(p.norm());

    let diag_prod = u[0] * v[0];
    let off_prod = u[1] * v[1];
    let gamma = 0.5 * (diag_prod.norm() / off_prod.norm()).ln();
    let psi0 = -0.5 * (off_prod * diag_prod.conj()).arg();

    // Both ratios are `j e^{∓jψ} tan φ` times a positive factor; a negative
    // projection means the π-shifted branch of ψ.
    let e = C64::from_polar(1.0, psi0);
    let orient = (u[1] * u[0].conj() * e / J).re + (v[0] * v[1].conj() * e.conj() / J).re;
    let psi = if orient < 0.0 { wrap_angle(psi0 + PI) } else { psi0 };

    Ok((SectionParams::new(gamma, phi, psi), diag))
}

/// Removes `section` from the output end of the cascade.
///
/// `b_m = (Γ R)⁻¹ h_m`; then row 1 of `g_m` is row 1 of `b_m` and row 2 of
/// `g_m` is row 2 of `b_{m+1}`. The two rows that fall off (row 2 of `b_0`,
/// row 1 of `b_D`) are reported relative to the tap they came from.
pub fn peel(taps: &TapSequence, section: &SectionParams) -> Result<Peeled> {
    if taps.taps.len() < 2 {
        return Err(Error::InvalidParams(
            "layer peeling needs at least two taps".into(),
        ));
    }
    let inv = section
        .static_matrix()
        .inverse()
        .ok_or_else(|| Error::InvalidParams("section matrix is singular".into()))?;
    let b: Vec<JonesMatrix> = taps.taps.iter().map(|h| inv * *h).collect();
    let d = b.len() - 1;
    let peeled = (0..d)
        .map(|m| JonesMatrix::from_rows(b[m].row(0), b[m + 1].row(1)))
        .collect();
    let row_norm = |r: [C64; 2]| (r[0].norm_sqr() + r[1].norm_sqr()).sqrt();
    let relative = |r: [C64; 2], whole: &JonesMatrix| {
        let n = whole.norm();
        if n > 0.0 {
            row_norm(r) / n
        } else {
            0.0
        }
    };
    Ok(Peeled {
        taps: TapSequence {
            taps: peeled,
            tau: taps.tau,
        },
        residual_low: relative(b[0].row(1), &b[0]),
        residual_high: relative(b[d].row(0), &b[d]),
    })
}

/// Full layer-peeling run on one measured response.
///
/// Noisy input never raises an error; degradation shows up in the
/// diagnostics and in `non_finite`. An exactly vanishing end tap is reported
/// as [`Error::DegenerateSection`] with the section index.
pub fn run_isa(resp: &FrequencyResponse, n_sections: usize, tau: f64) -> Result<IsaEstimate> {
    if n_sections == 0 {
        return Err(Error::InvalidParams("channel needs at least one section".into()));
    }
    let grid_tau = resp.grid().tau();
    if (grid_tau - tau).abs() > 1e-12 * tau.abs() {
        return Err(Error::InvalidGrid(format!(
            "grid tau {grid_tau} differs from model tau {tau}"
        )));
    }
    let mut taps = response_to_taps(resp, n_sections)?;
    let mut sections = Vec::with_capacity(n_sections);
    let mut diagnostics = Vec::with_capacity(n_sections);
    for n in (1..=n_sections).rev() {
        let (section, mut diag) = extract_last_section(&taps).map_err(|e| match e {
            Error::DegenerateSection { .. } => Error::DegenerateSection { section: Some(n) },
            other => other,
        })?;
        let peeled = peel(&taps, &section)?;
        diag.section = n;
        diag.residual_low = peeled.residual_low;
        diag.residual_high = peeled.residual_high;
        taps = peeled.taps;
        sections.push(section);
        diagnostics.push(diag);
    }
    sections.reverse();
    diagnostics.reverse();

    let mut final_tap = taps.taps[0];
    if final_tap.trace().re < 0.0 {
        // R(π - φ, ψ + π) = -R(φ, ψ)
        let s = &mut sections[0];
        s.phi = PI - s.phi;
        s.psi = wrap_angle(s.psi + PI);
        final_tap = -final_tap;
    }
    let non_finite = sections.iter().any(|s| !s.is_finite());
    Ok(IsaEstimate {
        params: ChannelParams { sections, tau },
        diagnostics,
        final_tap,
        non_finite,
    })
}

/// Runs [`run_isa`] independently on every time step, in parallel.
pub fn run_isa_series(
    measurements: &[FrequencyResponse],
    n_sections: usize,
    tau: f64,
) -> Result<Vec<IsaEstimate>> {
    measurements
        .par_iter()
        .map(|m| run_isa(m, n_sections, tau))
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::polmodel::{channel_response, impulse_taps, make_dgd, FrequencyGrid};

    fn random_channel(rng: &mut ChaCha8Rng, n: usize) -> ChannelParams {
        let sections = (0..n)
            .map(|_| loop {
                let s = SectionParams::new(
                    rng.random_range(0.07..0.17),
                    rng.random_range(-PI..PI),
                    rng.random_range(-PI..PI),
                );
                if s.phi.sin().abs() > 0.05 && s.phi.cos().abs() > 0.05 {
                    break s;
                }
            })
            .collect();
        ChannelParams { sections, tau: 1.0 }
    }

    fn max_tap_error(a: &TapSequence, b: &TapSequence) -> f64 {
        assert_eq!(a.taps.len(), b.taps.len());
        a.taps
            .iter()
            .zip(&b.taps)
            .map(|(x, y)| (*x - *y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn taps_of_pure_dgd() {
        let grid = FrequencyGrid::canonical(2, 1.0).unwrap();
        let matrices = grid.omegas().iter().map(|&w| make_dgd(w, 1.0)).collect();
        let resp = FrequencyResponse::new(grid, matrices).unwrap();
        let taps = response_to_taps(&resp, 1).unwrap();
        let one = C64::new(1.0, 0.0);
        assert!((taps.taps[0] - JonesMatrix::diag(one, ZERO)).norm() < 1e-15);
        assert!((taps.taps[1] - JonesMatrix::diag(ZERO, one)).norm() < 1e-15);
    }

    #[test]
    fn inverse_dft_recovers_symbolic_taps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=7 {
            let params = random_channel(&mut rng, n);
            let exact = impulse_taps(&params);
            let grid = FrequencyGrid::canonical(n + 1, 1.0).unwrap();
            let taps = response_to_taps(&channel_response(&params, &grid), n).unwrap();
            assert!(max_tap_error(&taps, &exact) <= 1e-11);
        }
    }

    #[test]
    fn general_grid_least_squares_matches_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = random_channel(&mut rng, 4);
        let exact = impulse_taps(&params);
        let grid = FrequencyGrid::new(vec![0.1, 0.9, 1.3, 2.2, 3.0, 4.4, 5.9], 1.0).unwrap();
        assert!(!grid.is_canonical());
        let taps = response_to_taps(&channel_response(&params, &grid), 4).unwrap();
        assert!(max_tap_error(&taps, &exact) <= 1e-10);
    }

    #[test]
    fn too_few_samples() {
        let params = ChannelParams::zeros(5, 1.0);
        let grid = FrequencyGrid::canonical(5, 1.0).unwrap();
        let err = response_to_taps(&channel_response(&params, &grid), 5).unwrap_err();
        assert!(matches!(err, Error::Underdetermined { taps: 6, samples: 5 }));
    }

    #[test]
    fn oversampled_least_squares_beats_subset_solve() {
        let n = 3;
        let fine = FrequencyGrid::canonical(2 * (n + 1), 1.0).unwrap();
        let coarse = FrequencyGrid::canonical(n + 1, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut ls_err, mut subset_err) = (0.0, 0.0);
        for _ in 0..100 {
            let params = random_channel(&mut rng, n);
            let exact = impulse_taps(&params);
            let noisy: Vec<JonesMatrix> = channel_response(&params, &fine)
                .matrices()
                .iter()
                .map(|h| {
                    let mut h = *h;
                    for z in h.m.iter_mut().flatten() {
                        *z += crate::simulator::complex_normal(&mut rng, 1e-2);
                    }
                    h
                })
                .collect();
            let full = FrequencyResponse::new(fine.clone(), noisy.clone()).unwrap();
            // Even-indexed points of the fine grid form the coarse grid.
            let sub = FrequencyResponse::new(coarse.clone(), noisy.iter().step_by(2).copied().collect())
                .unwrap();
            let ls = response_to_taps(&full, n).unwrap();
            let ex = response_to_taps(&sub, n).unwrap();
            let err = |t: &TapSequence| -> f64 {
                t.taps.iter().zip(&exact.taps).map(|(a, b)| (*a - *b).norm_sqr()).sum()
            };
            ls_err += err(&ls);
            subset_err += err(&ex);
        }
        assert!(ls_err < subset_err, "ls {ls_err} vs subset {subset_err}");
    }

    #[test]
    fn single_section_round_trip() {
        let params = ChannelParams::new(vec![SectionParams::new(0.1, 0.7, -1.2)], 1.0).unwrap();
        let taps = impulse_taps(&params);
        let (est, diag) = extract_last_section(&taps).unwrap();
        assert!(!diag.unidentifiable);
        assert!((est.abs_cos_phi() - 0.7f64.cos().abs()).abs() <= 1e-9);
        assert!((est.gamma - 0.1).abs() <= 1e-9);

        let grid = FrequencyGrid::canonical(2, 1.0).unwrap();
        let resp = channel_response(&params, &grid);
        let run = run_isa(&resp, 1, 1.0).unwrap();
        let rebuilt = channel_response(&run.params, &grid);
        for (a, b) in resp.matrices().iter().zip(rebuilt.matrices()) {
            assert!((*a - *b).norm() <= 1e-10);
        }
    }

    #[test]
    fn sign_class_folds_into_section_one() {
        // cos φ < 0 is outside the extraction branch; the global sign must be
        // folded back so the response still matches.
        let params = ChannelParams::new(vec![SectionParams::new(0.12, 2.5, 0.4)], 1.0).unwrap();
        let grid = FrequencyGrid::canonical(2, 1.0).unwrap();
        let resp = channel_response(&params, &grid);
        let run = run_isa(&resp, 1, 1.0).unwrap();
        assert!(run.final_residual() < 1e-12);
        let rebuilt = channel_response(&run.params, &grid);
        for (a, b) in resp.matrices().iter().zip(rebuilt.matrices()) {
            assert!((*a - *b).norm() <= 1e-10);
        }
        assert!((run.params.sections[0].abs_cos_phi() - 2.5f64.cos().abs()).abs() < 1e-10);
    }

    #[test]
    fn zero_rotation_is_flagged() {
        let params = ChannelParams::new(vec![SectionParams::new(0.1, 0.0, 0.8)], 1.0).unwrap();
        let (est, diag) = extract_last_section(&impulse_taps(&params)).unwrap();
        assert!(diag.unidentifiable);
        assert_eq!(est, SectionParams::new(0.0, 0.0, 0.0));
    }

    #[test]
    fn zero_end_tap_is_an_error() {
        let taps = TapSequence {
            taps: vec![JonesMatrix::zero(), JonesMatrix::identity()],
            tau: 1.0,
        };
        assert!(matches!(
            extract_last_section(&taps),
            Err(Error::DegenerateSection { section: None })
        ));
        let grid = FrequencyGrid::canonical(3, 1.0).unwrap();
        let resp = TapSequence {
            taps: vec![JonesMatrix::identity(), JonesMatrix::identity(), JonesMatrix::zero()],
            tau: 1.0,
        }
        .evaluate_on(&grid);
        assert!(matches!(
            run_isa(&resp, 2, 1.0),
            Err(Error::DegenerateSection { section: Some(2) })
        ));
    }

    #[test]
    fn peeling_the_true_section_leaves_the_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..=6 {
            let params = random_channel(&mut rng, n);
            let taps = impulse_taps(&params);
            let last = *params.sections.last().unwrap();
            let peeled = peel(&taps, &last).unwrap();
            let prefix = ChannelParams {
                sections: params.sections[..n - 1].to_vec(),
                tau: 1.0,
            };
            assert_eq!(peeled.taps.taps.len(), n);
            assert!(max_tap_error(&peeled.taps, &impulse_taps(&prefix)) <= 1e-10);
            assert!(peeled.residual_low <= 1e-12 && peeled.residual_high <= 1e-12);
        }
    }

    #[test]
    fn single_section_peels_to_identity() {
        let params = ChannelParams::new(vec![SectionParams::new(0.15, -1.0, 2.0)], 1.0).unwrap();
        let peeled = peel(&impulse_taps(&params), &params.sections[0]).unwrap();
        assert_eq!(peeled.taps.taps.len(), 1);
        assert!((peeled.taps.taps[0] - JonesMatrix::identity()).norm() <= 1e-12);
    }

    #[test]
    fn wrong_section_leaves_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let params = random_channel(&mut rng, 3);
            let mut wrong = *params.sections.last().unwrap();
            wrong.phi += 0.3;
            wrong.psi -= 0.2;
            let peeled = peel(&impulse_taps(&params), &wrong).unwrap();
            assert!(peeled.residual_low.max(peeled.residual_high) > 1e-3, "{peeled:?} {params:?}");
        }
    }

    #[test]
    fn noiseless_five_sections() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let grid = FrequencyGrid::canonical(6, 1.0).unwrap();
        for _ in 0..50 {
            let params = random_channel(&mut rng, 5);
            let resp = channel_response(&params, &grid);
            let run = run_isa(&resp, 5, 1.0).unwrap();
            assert!(!run.non_finite);
            for (d, (est, truth)) in run.diagnostics.iter().zip(run.params.sections.iter().zip(&params.sections)) {
                assert!((est.abs_cos_phi() - truth.abs_cos_phi()).abs() <= 1e-6);
                assert!((est.gamma - truth.gamma).abs() <= 1e-6);
                assert!(d.residual() <= 1e-9, "{d:?} {truth:?}");
                assert!(!d.unidentifiable);
            }
            assert_eq!(
                run.diagnostics.iter().map(|d| d.section).collect::<Vec<_>>(),
                vec![1, 2, 3, 4, 5]
            );
        }
    }
}
