//! Shared checks for the property suites and the acceptance run, plus an
//! arbitrary-precision reference for the fixed-point datapath.

#![allow(dead_code)]

use num_bigint::{BigInt, BigUint, Sign};
use num_complex::Complex64;
use pulsenn::dataset::{Dataset, DatasetMeta, DatasetRow, Split};
use pulsenn::eval::{fidelity_curve, FidelityReport};
use pulsenn::fixed::FxFormat;
use pulsenn::mlp::{loss_and_gradient, Activation, MlpModel, MlpSpec, QuantSpec};
use pulsenn::optimizer::OptimizerConfig;
use pulsenn::pulse::{bspline_basis, propagate, PulseConfig, PulseParams};
use pulsenn::quantum::{gate_fidelity, rx_gate, Unitary2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_alpha(rng: &mut ChaCha8Rng, scale: f64) -> PulseParams {
    let v: Vec<f64> = (0..20).map(|_| rng.gen_range(-scale..scale)).collect();
    PulseParams::from_slice(&v).unwrap()
}

/// Richardson-extrapolated central differences of F(Rx(β), U(α)) in each
/// coefficient, using steps `h` and `2h`.
pub fn fd_gradient(alpha: &PulseParams, beta: f64, cfg: &PulseConfig, h: f64) -> Vec<f64> {
    let target = rx_gate(beta).unwrap();
    let base = alpha.to_vec();
    let fid = |v: &[f64]| {
        gate_fidelity(
            &target,
            &propagate(&PulseParams::from_slice(v).unwrap(), cfg).unwrap(),
        )
        .unwrap()
    };
    let central = |j: usize, h: f64| {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[j] += h;
        minus[j] -= h;
        (fid(&plus) - fid(&minus)) / (2.0 * h)
    };
    (0..base.len())
        .map(|j| (4.0 * central(j, h) - central(j, 2.0 * h)) / 3.0)
        .collect()
}

fn param_mut(m: &mut MlpModel, mut k: usize) -> &mut f64 {
    for l in &mut m.layers {
        if k < l.weights.len() {
            return &mut l.weights[k];
        }
        k -= l.weights.len();
        if k < l.bias.len() {
            return &mut l.bias[k];
        }
        k -= l.bias.len();
    }
    panic!("parameter index out of range")
}

/// `‖g − g_fd‖ / ‖g_fd‖` over all parameters of one random net.
pub fn mlp_gradient_error(hidden: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = MlpSpec::new("g", hidden, 20).unwrap();
    let mut m = MlpModel::init(spec, 1.0, seed).unwrap();
    for l in &mut m.layers {
        for b in &mut l.bias {
            *b = rng.gen_range(-0.3..0.3);
        }
    }
    let rows = 7;
    let xs: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = (0..rows * 20).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, grad) = loss_and_gradient(&m, &xs, &ys);
    let h = 1e-6;
    let (mut diff, mut norm) = (0.0, 0.0);
    #[allow(clippy::needless_range_loop)]
    for k in 0..m.param_count() {
        let orig = *param_mut(&mut m, k);
        *param_mut(&mut m, k) = orig + h;
        let up = loss_and_gradient(&m, &xs, &ys).0;
        *param_mut(&mut m, k) = orig - h;
        let down = loss_and_gradient(&m, &xs, &ys).0;
        *param_mut(&mut m, k) = orig;
        let fd = (up - down) / (2.0 * h);
        diff += (grad[k] - fd).powi(2);
        norm += fd * fd;
    }
    (diff / norm).sqrt()
}

pub type Check = Result<(), String>;

pub fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// `e^{iδ} Rz(a) Ry(b) Rz(c)`, covering all of U(2).
pub fn unitary(delta: f64, a: f64, b: f64, c: f64) -> Unitary2 {
    let e = |x: f64| Complex64::from_polar(1.0, x);
    let (cb, sb) = ((b / 2.0).cos(), (b / 2.0).sin());
    let g = e(delta);
    Unitary2([
        [g * e(-(a + c) / 2.0) * cb, -g * e((c - a) / 2.0) * sb],
        [g * e((a - c) / 2.0) * sb, g * e((a + c) / 2.0) * cb],
    ])
}

/// Range, symmetry, global-phase and joint-unitary invariance of the gate
/// fidelity, plus F(U, U) = 1.
pub fn check_fidelity(u1: &Unitary2, u2: &Unitary2, phase: f64, w: &Unitary2) -> Check {
    let f = gate_fidelity(u1, u2).map_err(|e| e.to_string())?;
    let tol = 1e-12;
    ensure((1.0 / 3.0 - tol..=1.0 + tol).contains(&f), || {
        format!("F = {f} out of range")
    })?;
    let g = gate_fidelity(u2, u1).unwrap();
    ensure((f - g).abs() <= tol, || format!("asymmetric: {f} vs {g}"))?;
    let shifted = u2.scale(Complex64::from_polar(1.0, phase));
    let h = gate_fidelity(u1, &shifted).unwrap();
    ensure((f - h).abs() <= tol, || {
        format!("phase dependent: {f} vs {h}")
    })?;
    let k = gate_fidelity(&(*w * *u1), &(*w * *u2)).unwrap();
    ensure((f - k).abs() <= 1e-11, || {
        format!("not unitarily invariant: {f} vs {k}")
    })?;
    let s = gate_fidelity(u1, u1).unwrap();
    ensure((s - 1.0).abs() <= tol, || format!("F(U, U) = {s}"))
}

/// `Rx(a) Rx(b) = Rx(a + b)`.
pub fn check_rx_group(a: f64, b: f64) -> Check {
    let prod = rx_gate(a).unwrap() * rx_gate(b).unwrap();
    let d = prod.max_abs_diff(&rx_gate(a + b).unwrap());
    ensure(d <= 1e-12, || format!("Rx({a})Rx({b}) off by {d}"))
}

/// Idempotence, monotonicity and the half-resolution error bound.
pub fn check_quantizer(x: f64, y: f64, f: FxFormat) -> Check {
    let (cx, cy) = (f.quantize(x), f.quantize(y));
    ensure(f.quantize(f.decode(cx)) == cx, || {
        format!("{f}: decode/quantize not idempotent at {x}")
    })?;
    let (lo, hi) = if x <= y { (cx, cy) } else { (cy, cx) };
    ensure(lo <= hi, || {
        format!("{f}: not monotone between {x} and {y}")
    })?;
    if f.in_range(x) {
        let err = (x - f.decode(cx)).abs();
        ensure(err <= f.resolution() / 2.0, || {
            format!("{f}: error {err} above half resolution at {x}")
        })?;
    }
    Ok(())
}

pub fn check_partition_of_unity(t: f64, cfg: &PulseConfig) -> Check {
    let sum: f64 = (0..cfg.spline_count)
        .map(|d| bspline_basis(d, t, cfg).unwrap())
        .sum();
    ensure((sum - 1.0).abs() <= 1e-12, || {
        format!("basis sum {sum} at t = {t}")
    })
}

pub fn check_unitary_propagator(alpha: &PulseParams, cfg: &PulseConfig) -> Check {
    let u = propagate(alpha, cfg).map_err(|e| e.to_string())?;
    let err = u.unitarity_error();
    ensure(err <= 1e-10, || {
        format!("propagator off unitarity by {err}")
    })
}

pub fn dataset_of(rows: Vec<(f64, Vec<f64>, f64, Option<Split>)>) -> Dataset {
    Dataset {
        meta: DatasetMeta {
            grid_size: rows.len(),
            seed: 3,
            pulse: PulseConfig::default(),
            optimizer: OptimizerConfig::default(),
            alpha_scale: 0.25,
            split_seed: Some(4),
            tool_version: "t".into(),
        },
        rows: rows
            .into_iter()
            .map(|(beta, a, fidelity, split)| DatasetRow {
                beta,
                alpha: PulseParams::from_slice(&a).unwrap(),
                fidelity,
                split,
            })
            .collect(),
    }
}

pub fn check_dataset_csv(ds: &Dataset) -> Check {
    let back = Dataset::parse_csv(&ds.to_csv(), ds.meta.clone())?;
    ensure(&back == ds, || {
        "dataset CSV round trip changed the rows".into()
    })
}

pub fn check_report_csv(r: &FidelityReport) -> Check {
    let rows = FidelityReport::rows_from_csv(&r.to_csv())?;
    ensure(rows == r.rows, || {
        "fidelity CSV round trip changed the rows".into()
    })
}

/// Fidelity report of a few random pulses, for the CSV round trip.
pub fn small_report(alphas: &[Vec<f64>], betas: &[f64]) -> FidelityReport {
    let lookup = |b: f64| {
        let i = betas.iter().position(|x| *x == b).unwrap();
        PulseParams::from_slice(&alphas[i])
    };
    fidelity_curve("prop", lookup, None, betas, &PulseConfig::default()).unwrap()
}

/// Exact sign-magnitude split of a finite double: `|x| = m · 2^e`.
fn exact(x: f64) -> (bool, BigUint, i32) {
    let bits = x.to_bits();
    let neg = bits >> 63 == 1;
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (m, e) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    };
    (neg, BigUint::from(m), e)
}

/// `m / 2^k` rounded to nearest, ties to even, on magnitudes.
fn div_pow2_half_even(m: &BigUint, k: u32) -> BigUint {
    if k == 0 {
        return m.clone();
    }
    let q = m >> k;
    let r = m - (&q << k);
    let half = BigUint::from(1u8) << (k - 1);
    let odd = q.bit(0);
    if r > half || (r == half && odd) {
        q + 1u8
    } else {
        q
    }
}

fn signed(neg: bool, m: BigUint) -> BigInt {
    BigInt::from_biguint(if neg { Sign::Minus } else { Sign::Plus }, m)
}

fn saturate(v: BigInt, f: FxFormat) -> i64 {
    let lo = BigInt::from(f.min_code());
    let hi = BigInt::from(f.max_code());
    let c = v.clamp(lo, hi);
    i64::try_from(c).unwrap()
}

/// Reference quantizer: exact scaling of the double, then rounding.
pub fn ref_quantize(x: f64, f: FxFormat) -> i64 {
    if x.is_nan() {
        return 0;
    }
    if x.is_infinite() {
        return if x > 0.0 { f.max_code() } else { f.min_code() };
    }
    let (neg, m, e) = exact(x);
    let shift = e + f.frac_bits as i32;
    let mag = if shift >= 0 {
        m << shift as u32
    } else {
        div_pow2_half_even(&m, (-shift) as u32)
    };
    saturate(signed(neg, mag), f)
}

fn ref_requantize(acc: BigInt, from_frac: u32, to: FxFormat) -> i64 {
    let neg = acc.sign() == Sign::Minus;
    let mag = acc.magnitude().clone();
    let v = if from_frac >= to.frac_bits {
        div_pow2_half_even(&mag, from_frac - to.frac_bits)
    } else {
        mag << (to.frac_bits - from_frac)
    };
    saturate(signed(neg, v), to)
}

/// Output codes of the fixed-point network computed from the float model
/// and its formats with arbitrary-precision integers throughout.
pub fn reference_codes(m: &MlpModel, q: &QuantSpec, beta: f64) -> Vec<i64> {
    let mut codes = vec![ref_quantize(beta / m.spec.beta_scale, q.input)];
    let mut frac = q.input.frac_bits;
    for ((layer, fmt), act) in m.layers.iter().zip(&q.layers).zip(&m.spec.activations) {
        let w: Vec<i64> = layer
            .weights
            .iter()
            .map(|v| ref_quantize(*v, fmt.weight))
            .collect();
        let b: Vec<i64> = layer
            .bias
            .iter()
            .map(|v| ref_quantize(*v, fmt.weight))
            .collect();
        let acc_frac = fmt.weight.frac_bits + frac;
        codes = (0..layer.fan_out)
            .map(|o| {
                let mut acc = BigInt::from(b[o]) << frac;
                for i in 0..layer.fan_in {
                    acc += BigInt::from(w[o * layer.fan_in + i]) * BigInt::from(codes[i]);
                }
                if *act == Activation::Relu && acc.sign() == Sign::Minus {
                    acc = BigInt::from(0);
                }
                ref_requantize(acc, acc_frac, fmt.activation)
            })
            .collect();
        frac = fmt.activation.frac_bits;
    }
    codes
}
