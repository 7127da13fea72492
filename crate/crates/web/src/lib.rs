//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every function returns a JSON string; errors come back as
//! `{"error": "..."}` so the page can show them inline.

use pulsenn::fixed::FxFormat;
use pulsenn::optimizer::{optimize_pulse, random_pulse, OptimizerConfig};
use pulsenn::pulse::{envelope, Propagator, PulseConfig, PulseParams};
use pulsenn::quantum::{bloch_coords, gate_fidelity, rx_gate, QubitState};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const ENVELOPE_SAMPLES: usize = 201;
const TRAJECTORY_SAMPLES: usize = 101;

#[derive(Serialize)]
struct PulseView {
    beta: f64,
    alpha: Vec<f64>,
    fidelity: f64,
    /// (t, p, q) in ns and rad/ns.
    envelope: Vec<[f64; 3]>,
    trajectory: Vec<[f64; 3]>,
    golden: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct OptimizeView {
    #[serde(flatten)]
    pulse: PulseView,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

#[derive(Serialize)]
struct RoundingView {
    format: String,
    resolution: f64,
    codes: Vec<i64>,
    float_fidelity: f64,
    #[serde(flatten)]
    rounded: PulseView,
}

fn to_json<T: Serialize>(r: pulsenn::error::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e.to_string()),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn view(alpha: &PulseParams, beta: f64) -> pulsenn::error::Result<PulseView> {
    let cfg = PulseConfig::default();
    let prop = Propagator::new(&cfg)?;
    let fidelity = gate_fidelity(&rx_gate(beta)?, &prop.propagate(alpha)?)?;
    let envelope = (0..ENVELOPE_SAMPLES)
        .map(|i| {
            let t = cfg.duration * i as f64 / (ENVELOPE_SAMPLES - 1) as f64;
            envelope(alpha, t, &cfg).map(|(p, q)| [t, p, q])
        })
        .collect::<pulsenn::error::Result<_>>()?;
    let trajectory = prop
        .trajectory(alpha, &QubitState::GROUND, TRAJECTORY_SAMPLES)?
        .iter()
        .map(|(_, s)| bloch_coords(s))
        .collect::<pulsenn::error::Result<_>>()?;
    let golden = (0..TRAJECTORY_SAMPLES)
        .map(|i| {
            let f = i as f64 / (TRAJECTORY_SAMPLES - 1) as f64;
            bloch_coords(&rx_gate(beta * f)?.apply(&QubitState::GROUND))
        })
        .collect::<pulsenn::error::Result<_>>()?;
    Ok(PulseView {
        beta,
        alpha: alpha.to_vec(),
        fidelity,
        envelope,
        trajectory,
        golden,
    })
}

/// Optimizes a pulse for `Rx(beta)` from a seeded random start.
#[wasm_bindgen]
pub fn optimize(beta: f64, seed: u32, max_iterations: u32) -> String {
    to_json((|| {
        let pcfg = PulseConfig::default();
        let cfg = OptimizerConfig {
            max_iterations: max_iterations as usize,
            seed: seed as u64,
            ..OptimizerConfig::default()
        };
        let init = random_pulse(cfg.seed, cfg.init_scale, &pcfg);
        let out = optimize_pulse(beta, &init, &cfg, &pcfg)?;
        let converged = out.is_converged();
        let sol = out.into_solution();
        Ok(OptimizeView {
            pulse: view(&sol.alpha, beta)?,
            iterations: sol.iterations,
            converged,
            history: sol.history,
        })
    })())
}

/// Fidelity, envelope and Bloch path of an arbitrary coefficient vector.
#[wasm_bindgen]
pub fn inspect(alpha: &[f64], beta: f64) -> String {
    to_json(PulseParams::from_slice(alpha).and_then(|a| view(&a, beta)))
}

/// Rounds `alpha` to the fixed-point format `<word_bits, int_bits>` and
/// reports the fidelity before and after.
#[wasm_bindgen]
pub fn round_to_fixed(alpha: &[f64], beta: f64, word_bits: u32, int_bits: u32) -> String {
    to_json((|| {
        let fmt = FxFormat::with_word(word_bits, int_bits)?;
        let exact = PulseParams::from_slice(alpha)?;
        let float_fidelity = view(&exact, beta)?.fidelity;
        let codes: Vec<i64> = alpha.iter().map(|v| fmt.quantize(*v)).collect();
        let rounded =
            PulseParams::from_slice(&codes.iter().map(|c| fmt.decode(*c)).collect::<Vec<_>>())?;
        Ok(RoundingView {
            format: fmt.to_string(),
            resolution: fmt.resolution(),
            codes,
            float_fidelity,
            rounded: view(&rounded, beta)?,
        })
    })())
}
