//! Independent oracles for the pulse model: a naive Cox–de Boor recursion,
//! central finite differences and a step-doubling convergence study.

mod common;

use std::f64::consts::PI;

use common::{fd_gradient, random_alpha};
use pulsenn::pulse::{
    bspline_basis, fidelity_gradient, propagate, BSplineBasis, PulseConfig, PulseParams,
};
use pulsenn::quantum::rx_gate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook recursive definition with the 0/0 = 0 convention and half-open
/// support; the right endpoint is handled by the caller.
fn cox_de_boor(knots: &[f64], i: usize, k: usize, t: f64) -> f64 {
    if k == 0 {
        return if knots[i] <= t && t < knots[i + 1] {
            1.0
        } else {
            0.0
        };
    }
    let mut v = 0.0;
    let d1 = knots[i + k] - knots[i];
    if d1 > 0.0 {
        v += (t - knots[i]) / d1 * cox_de_boor(knots, i, k - 1, t);
    }
    let d2 = knots[i + k + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + k + 1] - t) / d2 * cox_de_boor(knots, i + 1, k - 1, t);
    }
    v
}

fn oracle_knots(cfg: &PulseConfig) -> Vec<f64> {
    let n = cfg.spline_count;
    let mut k = vec![0.0; 3];
    for j in 1..(n - 2) {
        k.push(cfg.duration * j as f64 / (n - 2) as f64);
    }
    k.extend([cfg.duration; 3]);
    k
}

#[test]
fn basis_matches_cox_de_boor() {
    let cfg = PulseConfig::default();
    let knots = oracle_knots(&cfg);
    assert_eq!(knots, BSplineBasis::new(&cfg).unwrap().knots());
    let v = bspline_basis(3, 50.0, &cfg).unwrap();
    assert!((v - cox_de_boor(&knots, 3, 2, 50.0)).abs() < 1e-15);
    // Frozen values (scipy.interpolate.BSpline on the same knots): B_3 is
    // supported on [12.5, 50], so it vanishes at T/2; B_3(31) = 0.7496.
    assert_eq!(v, 0.0);
    assert!((bspline_basis(3, 31.0, &cfg).unwrap() - 0.7496).abs() < 1e-14);
    assert!((bspline_basis(4, 50.0, &cfg).unwrap() - 0.5).abs() < 1e-15);
    for step in 0..=1000 {
        let t = 0.0999 * step as f64;
        for d in 0..10 {
            let a = bspline_basis(d, t, &cfg).unwrap();
            let b = cox_de_boor(&knots, d, 2, t);
            assert!((a - b).abs() < 1e-14, "d={d} t={t}: {a} vs {b}");
        }
    }
}

#[test]
fn partition_of_unity_dense_grid() {
    for cfg in [
        PulseConfig::default(),
        PulseConfig {
            spline_count: 3,
            ..Default::default()
        },
        PulseConfig {
            spline_count: 17,
            duration: 37.0,
            ..Default::default()
        },
    ] {
        let basis = BSplineBasis::new(&cfg).unwrap();
        for j in 0..=10_000 {
            let t = cfg.duration * j as f64 / 10_000.0;
            let mut sum = 0.0;
            for d in 0..cfg.spline_count {
                let b = basis.eval(d, t).unwrap();
                assert!((-1e-15..=1.0 + 1e-15).contains(&b));
                sum += b;
            }
            assert!((sum - 1.0).abs() <= 1e-12, "t={t} sum={sum}");
        }
    }
}

#[test]
fn propagator_is_unitary_for_random_pulses() {
    let cfg = PulseConfig {
        time_steps: 200,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let u = propagate(&random_alpha(&mut rng, 0.2), &cfg).unwrap();
        assert!(u.unitarity_error() <= 1e-10);
        assert!((u.det().norm() - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn commuting_case_matches_rx() {
    let cfg = PulseConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let beta = rng.gen_range(-PI..=PI);
        let u = propagate(&PulseParams::constant_rotation(beta, &cfg), &cfg).unwrap();
        assert!(u.max_abs_diff(&rx_gate(beta).unwrap()) <= 1e-10);
    }
}

#[test]
fn midpoint_rule_is_second_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let reference = |a: &PulseParams| {
        propagate(
            a,
            &PulseConfig {
                time_steps: 16_000,
                ..Default::default()
            },
        )
        .unwrap()
    };
    for _ in 0..5 {
        let alpha = random_alpha(&mut rng, 0.1);
        let exact = reference(&alpha);
        let err = |n: usize| {
            propagate(
                &alpha,
                &PulseConfig {
                    time_steps: n,
                    ..Default::default()
                },
            )
            .unwrap()
            .max_abs_diff(&exact)
        };
        let order = (err(250) / err(500)).log2();
        assert!((1.8..=2.2).contains(&order), "order {order}");
        // step doubling: |U_N − U_2N| shrinks ≈ 4× each time N doubles
        let at = |n: usize| PulseConfig {
            time_steps: n,
            ..Default::default()
        };
        let diff = |n: usize| {
            propagate(&alpha, &at(n))
                .unwrap()
                .max_abs_diff(&propagate(&alpha, &at(2 * n)).unwrap())
        };
        let ratio = diff(250) / diff(500);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let cfg = PulseConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let alpha = random_alpha(&mut rng, 0.05);
        let beta = rng.gen_range(-PI..=PI);
        let g = fidelity_gradient(&alpha, &rx_gate(beta).unwrap(), &cfg).unwrap();
        let fd = fd_gradient(&alpha, beta, &cfg, 1e-4);
        for (a, b) in g.iter().zip(&fd) {
            let rel = (a - b).abs() / b.abs().max(1e-12);
            worst = worst.max(rel);
        }
    }
    println!("worst relative gradient error {worst:e}");
    assert!(worst <= 1e-6);
}

#[test]
fn gradient_in_q_at_zero_q() {
    let cfg = PulseConfig::default();
    // symmetric p profile, q = 0
    let p: Vec<f64> = (0..10)
        .map(|d| 0.02 + 0.01 * (1.0 - ((d as f64 - 4.5) / 4.5).powi(2)))
        .collect();
    let alpha = PulseParams {
        p,
        q: vec![0.0; 10],
    };
    let beta = 2.0;
    let g = fidelity_gradient(&alpha, &rx_gate(beta).unwrap(), &cfg).unwrap();
    let fd = fd_gradient(&alpha, beta, &cfg, 1e-4);
    for (a, b) in g.iter().zip(&fd) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-4), "{a} vs {b}");
    }
}
