//! Fixed-size 2×2 complex matrix algebra.
//!
//! Everything the channel model touches (section factors, cascade responses,
//! tap coefficients, noise realizations) is a [`JonesMatrix`]. The type is
//! `Copy` and all operations are allocation free.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64;

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const J: C64 = C64::new(0.0, 1.0);

/// A 2×2 complex matrix stored row-major.
#[derive(Clone, Copy, PartialEq, Default)]
pub struct JonesMatrix {
    pub m: [[C64; 2]; 2],
}

impl JonesMatrix {
    pub const fn new(a11: C64, a12: C64, a21: C64, a22: C64) -> Self {
        Self {
            m: [[a11, a12], [a21, a22]],
        }
    }

    pub const fn zero() -> Self {
        Self::new(ZERO, ZERO, ZERO, ZERO)
    }

    pub const fn identity() -> Self {
        Self::new(ONE, ZERO, ZERO, ONE)
    }

    pub const fn diag(d1: C64, d2: C64) -> Self {
        Self::new(d1, ZERO, ZERO, d2)
    }

    pub fn from_rows(row1: [C64; 2], row2: [C64; 2]) -> Self {
        Self { m: [row1, row2] }
    }

    #[inline]
    pub fn a11(&self) -> C64 {
        self.m[0][0]
    }
    #[inline]
    pub fn a12(&self) -> C64 {
        self.m[0][1]
    }
    #[inline]
    pub fn a21(&self) -> C64 {
        self.m[1][0]
    }
    #[inline]
    pub fn a22(&self) -> C64 {
        self.m[1][1]
    }

    pub fn row(&self, r: usize) -> [C64; 2] {
        self.m[r]
    }

    pub fn col(&self, c: usize) -> [C64; 2] {
        [self.m[0][c], self.m[1][c]]
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::new(
            self.m[0][0].conj(),
            self.m[1][0].conj(),
            self.m[0][1].conj(),
            self.m[1][1].conj(),
        )
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    pub fn det(&self) -> C64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn trace(&self) -> C64 {
        self.m[0][0] + self.m[1][1]
    }

    /// Inverse via the adjugate. Returns `None` for a singular matrix.
    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d.norm() == 0.0 || !d.is_finite() {
            return None;
        }
        let inv = d.inv();
        Some(Self::new(
            self.m[1][1] * inv,
            -self.m[0][1] * inv,
            -self.m[1][0] * inv,
            self.m[0][0] * inv,
        ))
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = *self;
        out.m.iter_mut().flatten().for_each(|x| *x *= s);
        out
    }

    /// Squared Frobenius norm, `Σ |a_ij|²`.
    pub fn norm_sqr(&self) -> f64 {
        self.m.iter().flatten().map(|x| x.norm_sqr()).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|x| x.is_finite())
    }

    /// `Re tr(A† B)`, the real inner product on 2×2 complex matrices.
    pub fn real_inner(&self, other: &Self) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    /// Singular values `(σ_max, σ_min)`.
    pub fn singular_values(&self) -> (f64, f64) {
        // σ_max σ_min = |det A|; going through the product avoids the
        // cancellation in λ_min of A A†.
        let (hi, _) = hermitian_eigenvalues(&(*self * self.adjoint()));
        let hi = hi.max(0.0).sqrt();
        let lo = if hi > 0.0 { (self.det().norm() / hi).min(hi) } else { 0.0 };
        (hi, lo)
    }

    /// Unit-norm left singular vector belonging to the largest singular value.
    ///
    /// The phase is normalized so that the largest-magnitude component is real
    /// and positive. For a multiple of the identity (no dominant direction)
    /// `e₁` is returned.
    pub fn dominant_left_singular_vector(&self) -> [C64; 2] {
        dominant_eigenvector(&(*self * self.adjoint()))
    }

    /// The 8 real numbers `re, im` of `a11, a12, a21, a22` in that order.
    pub fn to_reals(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (i, x) in self.m.iter().flatten().enumerate() {
            out[2 * i] = x.re;
            out[2 * i + 1] = x.im;
        }
        out
    }

    pub fn from_reals(v: &[f64; 8]) -> Self {
        Self::new(
            C64::new(v[0], v[1]),
            C64::new(v[2], v[3]),
            C64::new(v[4], v[5]),
            C64::new(v[6], v[7]),
        )
    }
}

/// Eigenvalues `(λ_max, λ_min)` of a Hermitian matrix. Only the upper triangle
/// and the real parts of the diagonal are read.
fn hermitian_eigenvalues(a: &JonesMatrix) -> (f64, f64) {
    let p = a.m[0][0].re;
    let d = a.m[1][1].re;
    let b = a.m[0][1];
    let mean = 0.5 * (p + d);
    let half = 0.5 * (p - d);
    let r = half.hypot(b.norm());
    (mean + r, mean - r)
}

fn dominant_eigenvector(a: &JonesMatrix) -> [C64; 2] {
    let p = a.m[0][0].re;
    let d = a.m[1][1].re;
    let b = a.m[0][1];
    let (lambda, _) = hermitian_eigenvalues(a);
    // Two algebraically equivalent null vectors of (A - λI); pick the
    // better-conditioned one.
    let v = if p >= d {
        [C64::new(lambda - d, 0.0), b.conj()]
    } else {
        [b, C64::new(lambda - p, 0.0)]
    };
    let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    if n == 0.0 || !n.is_finite() {
        return [ONE, ZERO];
    }
    let pivot = if v[0].norm() >= v[1].norm() { v[0] } else { v[1] };
    let phase = pivot.conj() / pivot.norm();
    [v[0] * phase / n, v[1] * phase / n]
}

impl Mul for JonesMatrix {
    type Output = JonesMatrix;

    #[inline]
    fn mul(self, rhs: JonesMatrix) -> JonesMatrix {
        let a = &self.m;
        let b = &rhs.m;
        JonesMatrix::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

impl Mul<C64> for JonesMatrix {
    type Output = JonesMatrix;

    fn mul(self, rhs: C64) -> JonesMatrix {
        self.scale(rhs)
    }
}

impl Mul<f64> for JonesMatrix {
    type Output = JonesMatrix;

    fn mul(self, rhs: f64) -> JonesMatrix {
        self.scale(C64::new(rhs, 0.0))
    }
}

impl Add for JonesMatrix {
    type Output = JonesMatrix;

    fn add(mut self, rhs: JonesMatrix) -> JonesMatrix {
        self += rhs;
        self
    }
}

impl AddAssign for JonesMatrix {
    fn add_assign(&mut self, rhs: JonesMatrix) {
        for (a, b) in self.m.iter_mut().flatten().zip(rhs.m.iter().flatten()) {
            *a += *b;
        }
    }
}

impl Sub for JonesMatrix {
    type Output = JonesMatrix;

    fn sub(self, rhs: JonesMatrix) -> JonesMatrix {
        self + (-rhs)
    }
}

impl Neg for JonesMatrix {
    type Output = JonesMatrix;

    fn neg(self) -> JonesMatrix {
        self.scale(-ONE)
    }
}

impl fmt::Debug for JonesMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{}, {}], [{}, {}]]",
            self.m[0][0], self.m[0][1], self.m[1][0], self.m[1][1]
        )
    }
}
