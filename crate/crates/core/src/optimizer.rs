//! Gradient-ascent pulse optimization (Adam on the gate fidelity).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::pulse::{Propagator, PulseConfig, PulseParams};
use crate::quantum::rx_gate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub target_fidelity: f64,
    /// Adam step size, rad/ns.
    pub learning_rate: f64,
    /// Adam denominator offset. Large values damp steps along directions
    /// with tiny gradients, which keeps warm-started solutions from drifting
    /// through the fidelity-neutral subspace.
    pub adam_epsilon: f64,
    /// Half-width of the uniform random initialization, rad/ns.
    pub init_scale: f64,
    pub seed: u64,
    pub warm_start: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 5000,
            target_fidelity: 0.999,
            learning_rate: 2e-4,
            adam_epsilon: 0.1,
            init_scale: 0.05,
            seed: 0,
            warm_start: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_fidelity > 0.0 && self.target_fidelity < 1.0) {
            return Err(invalid(format!(
                "target fidelity must lie in (0, 1), got {}",
                self.target_fidelity
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.adam_epsilon.is_finite() && self.adam_epsilon > 0.0) {
            return Err(invalid(format!(
                "adam epsilon must be > 0, got {}",
                self.adam_epsilon
            )));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(invalid(format!(
                "init scale must be >= 0, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Best pulse found by [`optimize_pulse`].
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSolution {
    pub alpha: PulseParams,
    pub fidelity: f64,
    /// Adam steps taken.
    pub iterations: usize,
    /// Best-so-far fidelity after each evaluation (entry 0 is the initial pulse).
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimized {
    Converged(PulseSolution),
    /// Iteration budget exhausted below the target; carries the best pulse seen.
    Unconverged(PulseSolution),
}

impl Optimized {
    pub fn solution(&self) -> &PulseSolution {
        match self {
            Optimized::Converged(s) | Optimized::Unconverged(s) => s,
        }
    }

    pub fn into_solution(self) -> PulseSolution {
        match self {
            Optimized::Converged(s) | Optimized::Unconverged(s) => s,
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, Optimized::Converged(_))
    }
}

/// Per-row seed: the run seed mixed with a splitmix64 hash of the grid index.
pub fn row_seed(seed: u64, index: usize) -> u64 {
    let mut z = (index as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seed ^ (z ^ (z >> 31))
}

/// Uniform draw in `[-scale, scale]` for every coefficient.
pub fn random_pulse(seed: u64, scale: f64, pcfg: &PulseConfig) -> PulseParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |_| {
        if scale > 0.0 {
            rng.gen_range(-scale..=scale)
        } else {
            0.0
        }
    };
    let n = pcfg.spline_count;
    PulseParams {
        p: (0..n).map(&mut draw).collect(),
        q: (0..n).map(&mut draw).collect(),
    }
}

/// Adam ascent on `F(α) = gate_fidelity(Rx(β), propagate(α))` from `init`.
pub fn optimize_pulse(
    beta: f64,
    init: &PulseParams,
    cfg: &OptimizerConfig,
    pcfg: &PulseConfig,
) -> Result<Optimized> {
    let prop = Propagator::new(pcfg)?;
    optimize_with(&prop, beta, init, cfg)
}

pub(crate) fn optimize_with(
    prop: &Propagator,
    beta: f64,
    init: &PulseParams,
    cfg: &OptimizerConfig,
) -> Result<Optimized> {
    cfg.validate()?;
    if !(-std::f64::consts::PI..=std::f64::consts::PI).contains(&beta) {
        return Err(invalid(format!("beta = {beta} outside [-pi, pi]")));
    }
    init.validate(prop.config())?;
    let target = rx_gate(beta)?;

    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;

    let mut x = init.to_vec();
    let n = x.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];

    let mut current = init.clone();
    let (mut f, mut grad) = prop.fidelity_and_gradient_unchecked(&current, &target);
    let mut best = (f, current.clone());
    let mut history = vec![f];
    let mut it = 0;
    while best.0 < cfg.target_fidelity && it < cfg.max_iterations {
        it += 1;
        let c1 = 1.0 - BETA1.powi(it as i32);
        let c2 = 1.0 - BETA2.powi(it as i32);
        for j in 0..n {
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * grad[j];
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * grad[j] * grad[j];
            x[j] += cfg.learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.adam_epsilon);
        }
        let (p, q) = x.split_at(n / 2);
        current.p.copy_from_slice(p);
        current.q.copy_from_slice(q);
        (f, grad) = prop.fidelity_and_gradient_unchecked(&current, &target);
        if !f.is_finite() {
            break;
        }
        if f > best.0 {
            best = (f, current.clone());
        }
        history.push(best.0);
    }

    let solution = PulseSolution {
        alpha: best.1,
        fidelity: best.0,
        iterations: it,
        history,
    };
    Ok(if solution.fidelity >= cfg.target_fidelity {
        Optimized::Converged(solution)
    } else {
        Optimized::Unconverged(solution)
    })
}
