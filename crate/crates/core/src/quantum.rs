//! Single-qubit linear algebra: 2×2 unitaries, states, the average gate
//! fidelity and Bloch-sphere coordinates.

use std::ops::Mul;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Hilbert-space dimension of a single qubit.
pub const HILBERT_DIM: f64 = 2.0;

/// Tolerance used when validating caller-supplied unitaries.
pub const UNITARY_ARG_TOL: f64 = 1e-8;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// A 2×2 complex matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unitary2(pub [[Complex64; 2]; 2]);

impl Unitary2 {
    pub const IDENTITY: Unitary2 = Unitary2([[ONE, ZERO], [ZERO, ONE]]);
    pub const ZERO: Unitary2 = Unitary2([[ZERO, ZERO], [ZERO, ZERO]]);

    pub fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        Unitary2([[a, b], [c, d]])
    }

    pub fn pauli_x() -> Self {
        Unitary2([[ZERO, ONE], [ONE, ZERO]])
    }

    pub fn pauli_y() -> Self {
        Unitary2([[ZERO, -I], [I, ZERO]])
    }

    pub fn pauli_z() -> Self {
        Unitary2([[ONE, ZERO], [ZERO, -ONE]])
    }

    pub fn dagger(&self) -> Self {
        let m = &self.0;
        Unitary2([
            [m[0][0].conj(), m[1][0].conj()],
            [m[0][1].conj(), m[1][1].conj()],
        ])
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> Complex64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let m = &self.0;
        Unitary2([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn add(&self, other: &Self) -> Self {
        let (a, b) = (&self.0, &other.0);
        Unitary2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((self.0[r][c] - other.0[r][c]).norm());
            }
        }
        worst
    }

    /// `‖U†U − I‖_max`.
    pub fn unitarity_error(&self) -> f64 {
        (self.dagger() * *self).max_abs_diff(&Unitary2::IDENTITY)
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.0
            .iter()
            .flatten()
            .all(|z| z.re.is_finite() && z.im.is_finite())
            && self.unitarity_error() <= tol
    }

    pub fn apply(&self, s: &QubitState) -> QubitState {
        let m = &self.0;
        QubitState {
            x: m[0][0] * s.x + m[0][1] * s.y,
            y: m[1][0] * s.x + m[1][1] * s.y,
        }
    }
}

impl Mul for Unitary2 {
    type Output = Unitary2;

    fn mul(self, rhs: Unitary2) -> Unitary2 {
        let (a, b) = (&self.0, &rhs.0);
        Unitary2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

/// Pure state `x|0⟩ + y|1⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitState {
    pub x: Complex64,
    pub y: Complex64,
}

impl QubitState {
    pub const GROUND: QubitState = QubitState { x: ONE, y: ZERO };
    pub const EXCITED: QubitState = QubitState { x: ZERO, y: ONE };

    pub fn new(x: Complex64, y: Complex64) -> Self {
        QubitState { x, y }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.x.norm_sqr() + self.y.norm_sqr()
    }

    /// `|⟨self|other⟩|²`.
    pub fn overlap(&self, other: &QubitState) -> f64 {
        (self.x.conj() * other.x + self.y.conj() * other.y).norm_sqr()
    }
}

/// Rotation about the x-axis, `exp(−iβσx/2)`.
pub fn rx_gate(beta: f64) -> Result<Unitary2> {
    if !beta.is_finite() {
        return Err(invalid(format!(
            "rotation angle must be finite, got {beta}"
        )));
    }
    let (s, c) = (beta / 2.0).sin_cos();
    let c = Complex64::new(c, 0.0);
    let ms = Complex64::new(0.0, -s);
    Ok(Unitary2::new(c, ms, ms, c))
}

/// Average gate fidelity `(M + |tr(U1†U2)|²) / (M(M+1))` with `M = 2`.
///
/// Both arguments must be unitary to within [`UNITARY_ARG_TOL`].
pub fn gate_fidelity(u1: &Unitary2, u2: &Unitary2) -> Result<f64> {
    for (name, u) in [("first", u1), ("second", u2)] {
        if !u.is_unitary(UNITARY_ARG_TOL) {
            return Err(invalid(format!(
                "{name} gate is not unitary (‖U†U − I‖ = {:e})",
                u.unitarity_error()
            )));
        }
    }
    Ok(fidelity_unchecked(u1, u2))
}

/// Fidelity without the unitarity check, for hot loops on propagator output.
pub(crate) fn fidelity_unchecked(u1: &Unitary2, u2: &Unitary2) -> f64 {
    let tr = trace_of_adjoint_product(u1, u2);
    (HILBERT_DIM + tr.norm_sqr()) / (HILBERT_DIM * (HILBERT_DIM + 1.0))
}

/// `tr(A†B)` without forming the product.
pub(crate) fn trace_of_adjoint_product(a: &Unitary2, b: &Unitary2) -> Complex64 {
    let (a, b) = (&a.0, &b.0);
    let mut acc = ZERO;
    for r in 0..2 {
        for c in 0..2 {
            acc += a[r][c].conj() * b[r][c];
        }
    }
    acc
}

/// Bloch vector `(2Re(x̄y), 2Im(x̄y), |x|² − |y|²)` of a normalized state.
pub fn bloch_coords(s: &QubitState) -> Result<[f64; 3]> {
    let n = s.norm_sqr();
    if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("state is not normalized (norm² = {n})")));
    }
    let xy = s.x.conj() * s.y;
    Ok([2.0 * xy.re, 2.0 * xy.im, s.x.norm_sqr() - s.y.norm_sqr()])
}
