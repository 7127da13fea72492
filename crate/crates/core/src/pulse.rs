//! B-spline control envelopes and the rotating-frame single-qubit propagator.
//!
//! The control Hamiltonian is `H(t) = ½(p(t)σx + q(t)σy)` with `p`, `q` in
//! rad/ns, so a constant `p` held for `T` ns rotates by `p·T` radians about x.
//! Time evolution uses `N` midpoint-sampled steps, each exponentiated exactly.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quantum::{fidelity_unchecked, trace_of_adjoint_product, QubitState, Unitary2};

/// Degree of the envelope splines.
pub const SPLINE_DEGREE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseConfig {
    /// Pulse length in ns.
    pub duration: f64,
    pub spline_count: usize,
    pub carrier_count: usize,
    pub time_steps: usize,
}

impl Default for PulseConfig {
    fn default() -> Self {
        PulseConfig {
            duration: 100.0,
            spline_count: 10,
            carrier_count: 1,
            time_steps: 1000,
        }
    }
}

impl PulseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(invalid(format!(
                "pulse duration must be > 0, got {}",
                self.duration
            )));
        }
        if self.spline_count < 3 {
            return Err(invalid(format!(
                "need at least 3 splines, got {}",
                self.spline_count
            )));
        }
        if self.time_steps < 10 {
            return Err(invalid(format!(
                "need at least 10 time steps, got {}",
                self.time_steps
            )));
        }
        if self.carrier_count != 1 {
            return Err(invalid(format!(
                "only a single carrier is supported, got {}",
                self.carrier_count
            )));
        }
        Ok(())
    }

    /// Length of the flattened control vector.
    pub fn param_len(&self) -> usize {
        2 * self.spline_count * self.carrier_count
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.time_steps as f64
    }
}

/// Spline coefficients of the two control quadratures (rad/ns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl PulseParams {
    pub fn zeros(spline_count: usize) -> Self {
        PulseParams {
            p: vec![0.0; spline_count],
            q: vec![0.0; spline_count],
        }
    }

    /// Constant x-quadrature pulse that realizes `Rx(beta)` exactly.
    pub fn constant_rotation(beta: f64, cfg: &PulseConfig) -> Self {
        PulseParams {
            p: vec![beta / cfg.duration; cfg.spline_count],
            q: vec![0.0; cfg.spline_count],
        }
    }

    /// Splits a flattened `[p..., q...]` vector.
    pub fn from_slice(alpha: &[f64]) -> Result<Self> {
        if alpha.is_empty() || !alpha.len().is_multiple_of(2) {
            return Err(invalid(format!(
                "pulse vector must have even nonzero length, got {}",
                alpha.len()
            )));
        }
        let (p, q) = alpha.split_at(alpha.len() / 2);
        Ok(PulseParams {
            p: p.to_vec(),
            q: q.to_vec(),
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.p.iter().chain(&self.q).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.p.len() + self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scaled(&self, s: f64) -> Self {
        PulseParams {
            p: self.p.iter().map(|v| v * s).collect(),
            q: self.q.iter().map(|v| v * s).collect(),
        }
    }

    pub fn validate(&self, cfg: &PulseConfig) -> Result<()> {
        if self.p.len() != cfg.spline_count || self.q.len() != cfg.spline_count {
            return Err(invalid(format!(
                "expected {} coefficients per quadrature, got {} and {}",
                cfg.spline_count,
                self.p.len(),
                self.q.len()
            )));
        }
        if !self.p.iter().chain(&self.q).all(|v| v.is_finite()) {
            return Err(invalid("pulse coefficients must be finite"));
        }
        Ok(())
    }
}

/// Quadratic B-spline basis on a clamped uniform knot vector over `[0, T]`.
#[derive(Debug, Clone)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    count: usize,
    duration: f64,
}

impl BSplineBasis {
    pub fn new(cfg: &PulseConfig) -> Result<Self> {
        cfg.validate()?;
        let count = cfg.spline_count;
        let intervals = count - SPLINE_DEGREE;
        let mut knots = Vec::with_capacity(count + SPLINE_DEGREE + 1);
        knots.extend(std::iter::repeat_n(0.0, SPLINE_DEGREE));
        for j in 0..=intervals {
            knots.push(cfg.duration * j as f64 / intervals as f64);
        }
        knots.extend(std::iter::repeat_n(cfg.duration, SPLINE_DEGREE));
        Ok(BSplineBasis {
            knots,
            count,
            duration: cfg.duration,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(invalid(format!(
                "time {t} ns outside pulse window [0, {}]",
                self.duration
            )));
        }
        Ok(())
    }

    /// Knot span `i` with `knots[i] <= t < knots[i+1]`; the right endpoint
    /// belongs to the last nonempty span.
    fn span(&self, t: f64) -> usize {
        let last = self.count - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        // knots[DEGREE..=count] are the distinct breakpoints
        let breakpoints = &self.knots[SPLINE_DEGREE..=self.count];
        let k = breakpoints.partition_point(|&x| x <= t);
        (SPLINE_DEGREE + k - 1).clamp(SPLINE_DEGREE, last)
    }

    /// Nonzero basis values at `t`: returns the first index `s` and values of
    /// `B_s, B_{s+1}, B_{s+2}`.
    pub fn nonzero(&self, t: f64) -> Result<(usize, [f64; SPLINE_DEGREE + 1])> {
        self.check_time(t)?;
        Ok(self.nonzero_unchecked(t))
    }

    fn nonzero_unchecked(&self, t: f64) -> (usize, [f64; SPLINE_DEGREE + 1]) {
        let i = self.span(t);
        let u = &self.knots;
        let mut n = [0.0; SPLINE_DEGREE + 1];
        let mut left = [0.0; SPLINE_DEGREE + 1];
        let mut right = [0.0; SPLINE_DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=SPLINE_DEGREE {
            left[j] = t - u[i + 1 - j];
            right[j] = u[i + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        (i - SPLINE_DEGREE, n)
    }

    /// Value of basis function `d` at `t`.
    pub fn eval(&self, d: usize, t: f64) -> Result<f64> {
        if d >= self.count {
            return Err(invalid(format!(
                "basis index {d} out of range (count {})",
                self.count
            )));
        }
        let (start, vals) = self.nonzero(t)?;
        Ok(if (start..start + vals.len()).contains(&d) {
            vals[d - start]
        } else {
            0.0
        })
    }

    fn combine(&self, coeffs: &[f64], start: usize, vals: &[f64; SPLINE_DEGREE + 1]) -> f64 {
        vals.iter()
            .zip(&coeffs[start..start + vals.len()])
            .map(|(b, c)| b * c)
            .sum()
    }
}

/// Value of the `d`-th basis spline at time `t`.
pub fn bspline_basis(d: usize, t: f64, cfg: &PulseConfig) -> Result<f64> {
    BSplineBasis::new(cfg)?.eval(d, t)
}

/// Control amplitudes `(p(t), q(t))` in rad/ns.
pub fn envelope(alpha: &PulseParams, t: f64, cfg: &PulseConfig) -> Result<(f64, f64)> {
    let basis = BSplineBasis::new(cfg)?;
    alpha.validate(cfg)?;
    let (s, vals) = basis.nonzero(t)?;
    Ok((
        basis.combine(&alpha.p, s, &vals),
        basis.combine(&alpha.q, s, &vals),
    ))
}

/// Series-safe `sin θ / θ` and `(θ cos θ − sin θ) / θ³`.
fn sinc_terms(theta: f64) -> (f64, f64) {
    if theta < 0.1 {
        let t2 = theta * theta;
        let f = 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0)));
        let g = -1.0 / 3.0
            + t2 * (1.0 / 30.0 + t2 * (-1.0 / 840.0 + t2 * (1.0 / 45360.0 - t2 / 3991680.0)));
        (f, g)
    } else {
        let (s, c) = theta.sin_cos();
        (s / theta, (theta * c - s) / (theta * theta * theta))
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `exp(−i(aσx + bσy))`.
fn step_exp(a: f64, b: f64) -> Unitary2 {
    let theta = a.hypot(b);
    let (f, _) = sinc_terms(theta);
    let cth = theta.cos();
    Unitary2::new(
        c(cth, 0.0),
        c(-f * b, -f * a),
        c(f * b, -f * a),
        c(cth, 0.0),
    )
}

/// Step exponential together with its partials in `a` and `b`.
fn step_exp_with_partials(a: f64, b: f64) -> (Unitary2, Unitary2, Unitary2) {
    let theta = a.hypot(b);
    let (f, g) = sinc_terms(theta);
    let cth = theta.cos();
    let u = Unitary2::new(
        c(cth, 0.0),
        c(-f * b, -f * a),
        c(f * b, -f * a),
        c(cth, 0.0),
    );
    let gab = g * a * b;
    let da = Unitary2::new(
        c(-f * a, 0.0),
        c(-gab, -(g * a * a + f)),
        c(gab, -(g * a * a + f)),
        c(-f * a, 0.0),
    );
    let db = Unitary2::new(
        c(-f * b, 0.0),
        c(-(g * b * b + f), -gab),
        c(g * b * b + f, -gab),
        c(-f * b, 0.0),
    );
    (u, da, db)
}

/// `tr(A·B)` for 2×2 matrices.
fn trace_product(a: &Unitary2, b: &Unitary2) -> Complex64 {
    let (a, b) = (&a.0, &b.0);
    a[0][0] * b[0][0] + a[0][1] * b[1][0] + a[1][0] * b[0][1] + a[1][1] * b[1][1]
}

/// Precomputed time grid: for each step, the midpoint basis support.
///
/// Immutable once built; share freely between threads.
#[derive(Debug, Clone)]
pub struct Propagator {
    cfg: PulseConfig,
    basis: BSplineBasis,
    steps: Vec<(usize, [f64; SPLINE_DEGREE + 1])>,
}

impl Propagator {
    pub fn new(cfg: &PulseConfig) -> Result<Self> {
        let basis = BSplineBasis::new(cfg)?;
        let dt = cfg.dt();
        let steps = (0..cfg.time_steps)
            .map(|k| basis.nonzero_unchecked((k as f64 + 0.5) * dt))
            .collect();
        Ok(Propagator {
            cfg: cfg.clone(),
            basis,
            steps,
        })
    }

    pub fn config(&self) -> &PulseConfig {
        &self.cfg
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    fn amplitudes(&self, alpha: &PulseParams, k: usize) -> (f64, f64) {
        let (s, vals) = &self.steps[k];
        (
            self.basis.combine(&alpha.p, *s, vals),
            self.basis.combine(&alpha.q, *s, vals),
        )
    }

    fn step(&self, alpha: &PulseParams, k: usize) -> Unitary2 {
        let (p, q) = self.amplitudes(alpha, k);
        let half_dt = 0.5 * self.cfg.dt();
        step_exp(p * half_dt, q * half_dt)
    }

    /// Time-ordered product `U_N ⋯ U_1`.
    pub fn propagate(&self, alpha: &PulseParams) -> Result<Unitary2> {
        alpha.validate(&self.cfg)?;
        Ok(self.propagate_unchecked(alpha))
    }

    pub(crate) fn propagate_unchecked(&self, alpha: &PulseParams) -> Unitary2 {
        (0..self.cfg.time_steps).fold(Unitary2::IDENTITY, |acc, k| self.step(alpha, k) * acc)
    }

    /// States at `samples` uniformly spaced times from 0 to T inclusive.
    pub fn trajectory(
        &self,
        alpha: &PulseParams,
        s0: &QubitState,
        samples: usize,
    ) -> Result<Vec<(f64, QubitState)>> {
        alpha.validate(&self.cfg)?;
        if samples < 2 {
            return Err(invalid(format!("need at least 2 samples, got {samples}")));
        }
        if (s0.norm_sqr() - 1.0).abs() > 1e-9 {
            return Err(invalid("initial state is not normalized"));
        }
        let dt = self.cfg.dt();
        let total = self.cfg.duration;
        let mut out = Vec::with_capacity(samples);
        let mut state = *s0;
        let mut done = 0usize;
        for j in 0..samples {
            let t = if j + 1 == samples {
                total
            } else {
                total * j as f64 / (samples - 1) as f64
            };
            let full = if j + 1 == samples {
                self.cfg.time_steps
            } else {
                ((t / dt).floor() as usize).min(self.cfg.time_steps)
            };
            while done < full {
                state = self.step(alpha, done).apply(&state);
                done += 1;
            }
            let t0 = done as f64 * dt;
            let rem = t - t0;
            let sample = if rem > 0.0 {
                let mid = t0 + 0.5 * rem;
                let (s, vals) = self.basis.nonzero_unchecked(mid.min(total));
                let p = self.basis.combine(&alpha.p, s, &vals);
                let q = self.basis.combine(&alpha.q, s, &vals);
                step_exp(0.5 * p * rem, 0.5 * q * rem).apply(&state)
            } else {
                state
            };
            out.push((t, sample));
        }
        Ok(out)
    }

    /// Fidelity against `target` and its gradient with respect to the
    /// flattened `[p..., q...]` coefficients.
    ///
    /// Differentiates each closed-form step exponential and contracts with
    /// prefix (right) and suffix (left) propagator products.
    pub fn fidelity_and_gradient(
        &self,
        alpha: &PulseParams,
        target: &Unitary2,
    ) -> Result<(f64, Vec<f64>)> {
        alpha.validate(&self.cfg)?;
        Ok(self.fidelity_and_gradient_unchecked(alpha, target))
    }

    pub(crate) fn fidelity_and_gradient_unchecked(
        &self,
        alpha: &PulseParams,
        target: &Unitary2,
    ) -> (f64, Vec<f64>) {
        let n = self.cfg.time_steps;
        let d = self.cfg.spline_count;
        let half_dt = 0.5 * self.cfg.dt();

        let mut steps = Vec::with_capacity(n);
        let mut prefix = Vec::with_capacity(n);
        let mut acc = Unitary2::IDENTITY;
        for k in 0..n {
            let (p, q) = self.amplitudes(alpha, k);
            let (u, da, db) = step_exp_with_partials(p * half_dt, q * half_dt);
            prefix.push(acc);
            acc = u * acc;
            steps.push((u, da, db));
        }
        let total = acc;
        let overlap = trace_of_adjoint_product(target, &total);
        let fidelity = fidelity_unchecked(target, &total);

        let target_dag = target.dagger();
        let mut grad_p = vec![Complex64::new(0.0, 0.0); d];
        let mut grad_q = vec![Complex64::new(0.0, 0.0); d];
        let mut suffix = Unitary2::IDENTITY;
        for k in (0..n).rev() {
            let (u, da, db) = &steps[k];
            // ∂g/∂x_k = tr(R_k G† L_k ∂U_k)
            let env = prefix[k] * target_dag * suffix;
            let cp = trace_product(&env, da) * half_dt;
            let cq = trace_product(&env, db) * half_dt;
            let (s, vals) = &self.steps[k];
            for (j, b) in vals.iter().enumerate() {
                grad_p[s + j] += cp * *b;
                grad_q[s + j] += cq * *b;
            }
            suffix = suffix * *u;
        }
        // F = (2 + |g|²)/6  ⇒  ∂F = Re(ḡ ∂g)/3
        let scale = overlap.conj() / 3.0;
        let grad = grad_p
            .iter()
            .chain(&grad_q)
            .map(|z| (scale * z).re)
            .collect();
        (fidelity, grad)
    }
}

/// Time-ordered propagator for the pulse `alpha`.
pub fn propagate(alpha: &PulseParams, cfg: &PulseConfig) -> Result<Unitary2> {
    Propagator::new(cfg)?.propagate(alpha)
}

pub fn propagate_trajectory(
    alpha: &PulseParams,
    cfg: &PulseConfig,
    s0: &QubitState,
    samples: usize,
) -> Result<Vec<(f64, QubitState)>> {
    Propagator::new(cfg)?.trajectory(alpha, s0, samples)
}

/// `∂F/∂α` for `F = gate_fidelity(target, propagate(α))`.
pub fn fidelity_gradient(
    alpha: &PulseParams,
    target: &Unitary2,
    cfg: &PulseConfig,
) -> Result<Vec<f64>> {
    if !target.is_unitary(crate::quantum::UNITARY_ARG_TOL) {
        return Err(invalid("target gate is not unitary"));
    }
    Ok(Propagator::new(cfg)?
        .fidelity_and_gradient(alpha, target)?
        .1)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::quantum::{bloch_coords, rx_gate};

    #[test]
    fn default_knot_vector() {
        let b = BSplineBasis::new(&PulseConfig::default()).unwrap();
        let expect: Vec<f64> = [
            0.0, 0.0, 0.0, 12.5, 25.0, 37.5, 50.0, 62.5, 75.0, 87.5, 100.0, 100.0, 100.0,
        ]
        .to_vec();
        assert_eq!(b.knots(), expect.as_slice());
    }

    #[test]
    fn clamped_endpoints() {
        let cfg = PulseConfig::default();
        assert_eq!(bspline_basis(0, 0.0, &cfg).unwrap(), 1.0);
        for d in 1..10 {
            assert_eq!(bspline_basis(d, 0.0, &cfg).unwrap(), 0.0);
        }
        assert_eq!(bspline_basis(9, 100.0, &cfg).unwrap(), 1.0);
        for d in 0..9 {
            assert_eq!(bspline_basis(d, 100.0, &cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn basis_rejects_out_of_window() {
        let cfg = PulseConfig::default();
        assert!(bspline_basis(0, -1e-9, &cfg).is_err());
        assert!(bspline_basis(0, 100.0 + 1e-9, &cfg).is_err());
        assert!(bspline_basis(10, 5.0, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            PulseConfig {
                duration: 0.0,
                ..Default::default()
            },
            PulseConfig {
                spline_count: 2,
                ..Default::default()
            },
            PulseConfig {
                time_steps: 9,
                ..Default::default()
            },
            PulseConfig {
                carrier_count: 2,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert_eq!(PulseConfig::default().param_len(), 20);
    }

    #[test]
    fn envelope_constant_and_linear() {
        let cfg = PulseConfig::default();
        let mut alpha = PulseParams::zeros(10);
        alpha.p.fill(0.37);
        for t in [0.0, 3.3, 50.0, 99.99, 100.0] {
            let (p, q) = envelope(&alpha, t, &cfg).unwrap();
            assert!((p - 0.37).abs() < 1e-15 && q == 0.0);
        }
        let zero = PulseParams::zeros(10);
        assert_eq!(envelope(&zero, 42.0, &cfg).unwrap(), (0.0, 0.0));

        let a =
            PulseParams::from_slice(&(0..20).map(|i| (i as f64 * 0.7).sin()).collect::<Vec<_>>())
                .unwrap();
        let (p1, q1) = envelope(&a, 31.0, &cfg).unwrap();
        let (p2, q2) = envelope(&a.scaled(2.0), 31.0, &cfg).unwrap();
        assert!((p2 - 2.0 * p1).abs() < 1e-15 && (q2 - 2.0 * q1).abs() < 1e-15);
    }

    #[test]
    fn zero_pulse_is_identity() {
        let cfg = PulseConfig::default();
        let u = propagate(&PulseParams::zeros(10), &cfg).unwrap();
        assert_eq!(u, Unitary2::IDENTITY);
    }

    #[test]
    fn constant_pulse_matches_rx() {
        let cfg = PulseConfig::default();
        for beta in [-PI, -1.0, 0.3, PI / 2.0, PI] {
            let u = propagate(&PulseParams::constant_rotation(beta, &cfg), &cfg).unwrap();
            assert!(u.max_abs_diff(&rx_gate(beta).unwrap()) < 1e-10);
        }
    }

    #[test]
    fn constant_pi_trajectory() {
        let cfg = PulseConfig::default();
        let alpha = PulseParams::constant_rotation(PI, &cfg);
        let traj = propagate_trajectory(&alpha, &cfg, &QubitState::GROUND, 101).unwrap();
        assert_eq!(traj.len(), 101);
        assert_eq!(traj[0].0, 0.0);
        assert_eq!(traj[100].0, 100.0);
        let z0 = bloch_coords(&traj[0].1).unwrap()[2];
        let zm = bloch_coords(&traj[50].1).unwrap()[2];
        let z1 = bloch_coords(&traj[100].1).unwrap()[2];
        assert!((z0 - 1.0).abs() < 1e-12);
        assert!(zm.abs() < 1e-6);
        assert!((z1 + 1.0).abs() < 1e-9);
        // −i|1⟩ up to phase
        assert!((traj[100].1.overlap(&QubitState::EXCITED) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn trajectory_off_grid_samples_end_on_propagator() {
        let cfg = PulseConfig::default();
        let a = PulseParams::from_slice(
            &(0..20)
                .map(|i| 0.02 * ((i * 7 % 5) as f64 - 2.0))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let traj = propagate_trajectory(&a, &cfg, &QubitState::GROUND, 7).unwrap();
        let u = propagate(&a, &cfg).unwrap();
        let last = traj.last().unwrap().1;
        let expect = u.apply(&QubitState::GROUND);
        assert!((last.x - expect.x).norm() < 1e-12 && (last.y - expect.y).norm() < 1e-12);
        for (_, s) in &traj {
            assert!((s.norm_sqr() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn trajectory_validation() {
        let cfg = PulseConfig::default();
        let a = PulseParams::zeros(10);
        assert!(propagate_trajectory(&a, &cfg, &QubitState::GROUND, 1).is_err());
        let bad = QubitState::new(Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0));
        assert!(propagate_trajectory(&a, &cfg, &bad, 5).is_err());
    }

    #[test]
    fn gradient_vanishes_at_exact_optimum() {
        let cfg = PulseConfig::default();
        let beta = 1.1;
        let g = fidelity_gradient(
            &PulseParams::constant_rotation(beta, &cfg),
            &rx_gate(beta).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(g.len(), 20);
        assert!(g.iter().all(|v| v.abs() <= 1e-8), "{g:?}");
    }

    #[test]
    fn sinc_series_continuity() {
        let below = sinc_terms(0.1 - 1e-12);
        let above = sinc_terms(0.1 + 1e-12);
        assert!((below.0 - above.0).abs() < 1e-12);
        assert!((below.1 - above.1).abs() < 1e-10);
    }
}
