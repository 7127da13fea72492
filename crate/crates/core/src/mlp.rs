//! Fully connected surrogate mapping a rotation angle to pulse coefficients.
//!
//! Inputs are normalized as `β/π`, targets as `α / alpha_scale` where
//! `alpha_scale` is the largest |α| in the training split. Training is
//! full-batch Adam on the mean squared error with early stopping on the
//! validation split. Quantization-aware training inserts fake quantizers on
//! the input, on every weight and bias, and after every activation, and
//! backpropagates through them with the straight-through estimator.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{invalid, Error, Result};
use crate::fixed::{FxFormat, LayerFormats};
use crate::pulse::PulseParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Fixed-point formats for quantization-aware training and inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub input: FxFormat,
    pub layers: Vec<LayerFormats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub name: String,
    /// Layer widths including the input (1) and output (20) layers.
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantization: Option<QuantSpec>,
    pub beta_scale: f64,
}

/// Hidden widths of the built-in architectures.
///
/// `forward` has seven hidden layers and 1,040 parameters, `compact` six
/// hidden layers and 783 parameters, `wide` about ten times `forward`.
pub const PRESET_SPECS: &[(&str, &[usize])] = &[
    ("forward", &[8, 10, 10, 10, 11, 12, 13]),
    ("compact", &[8, 8, 8, 10, 10, 13]),
    ("wide", &[24, 32, 40, 40, 40, 40, 48]),
];

impl MlpSpec {
    /// ReLU hidden layers and a linear output layer.
    pub fn new(name: impl Into<String>, hidden: &[usize], output: usize) -> Result<Self> {
        let mut widths = vec![1];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut activations = vec![Activation::Relu; hidden.len()];
        activations.push(Activation::Linear);
        let spec = MlpSpec {
            name: name.into(),
            widths,
            activations,
            quantization: None,
            beta_scale: PI,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, hidden) = PRESET_SPECS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| invalid(format!("unknown architecture {name:?}")))?;
        MlpSpec::new(name, hidden, 20)
    }

    pub fn with_quantization(mut self, q: QuantSpec) -> Result<Self> {
        self.quantization = Some(q);
        self.validate()?;
        Ok(self)
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn hidden_layers(&self) -> usize {
        self.layer_count().saturating_sub(1)
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    /// Σ (w_in·w_out + w_out).
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths[0] != 1 {
            return Err(invalid(
                "network must have a single input and at least one layer",
            ));
        }
        if self.output_width() != 20 {
            return Err(invalid(format!(
                "network must emit 20 pulse coefficients, got {}",
                self.output_width()
            )));
        }
        if self.widths.contains(&0) {
            return Err(invalid("layer widths must be >= 1"));
        }
        if self.activations.len() != self.layer_count() {
            return Err(invalid("one activation per layer required"));
        }
        if !(self.beta_scale.is_finite() && self.beta_scale > 0.0) {
            return Err(invalid("beta_scale must be > 0"));
        }
        if let Some(q) = &self.quantization {
            if q.layers.len() != self.layer_count() {
                return Err(invalid(format!(
                    "{} layer formats for a {}-layer network",
                    q.layers.len(),
                    self.layer_count()
                )));
            }
            q.input.validate()?;
            for l in &q.layers {
                l.weight.validate()?;
                l.activation.validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// `fan_out × fan_in`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        DenseLayer {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_mse: f64,
    pub val_mse: f64,
    pub test_mse: Option<f64>,
    /// Test MSE in (rad/ns)², i.e. before normalization.
    pub test_mse_unnormalized: Option<f64>,
    pub epochs: usize,
    pub best_epoch: usize,
    pub seed: u64,
    pub quantization_aware: bool,
    /// Training loss after each epoch; not persisted.
    #[serde(skip)]
    pub loss_history: Vec<f64>,
    /// Validation loss after each epoch; not persisted.
    #[serde(skip)]
    pub val_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub spec: MlpSpec,
    pub alpha_scale: f64,
    pub layers: Vec<DenseLayer>,
    pub report: TrainReport,
    /// SHA-256 of the files this model was built from, keyed by role.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    /// 0 = full batch (the only mode supported).
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 5000,
            patience: 250,
            learning_rate: 1e-3,
            batch_size: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience >= self.max_epochs {
            return Err(invalid("patience must be smaller than max_epochs"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid("learning rate must be > 0"));
        }
        if self.batch_size != 0 {
            return Err(invalid(
                "only full-batch training is supported (batch_size = 0)",
            ));
        }
        Ok(())
    }
}

impl MlpModel {
    /// Untrained model with all parameters zero.
    pub fn zeros(spec: MlpSpec, alpha_scale: f64) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .map(|w| DenseLayer::zeros(w[0], w[1]))
            .collect();
        Ok(MlpModel {
            spec,
            alpha_scale,
            layers,
            report: TrainReport::default(),
            inputs: BTreeMap::new(),
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: MlpSpec, alpha_scale: f64, seed: u64) -> Result<Self> {
        let mut m = MlpModel::zeros(spec, alpha_scale)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut m.layers {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            for w in &mut l.weights {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(m)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.layers.len() != self.spec.layer_count() {
            return Err(invalid("layer count does not match spec"));
        }
        for (l, w) in self.layers.iter().zip(self.spec.widths.windows(2)) {
            if l.fan_in != w[0]
                || l.fan_out != w[1]
                || l.weights.len() != w[0] * w[1]
                || l.bias.len() != w[1]
            {
                return Err(invalid("layer shape does not match spec"));
            }
        }
        if !self
            .layers
            .iter()
            .flat_map(DenseLayer::params)
            .all(|v| v.is_finite())
        {
            return Err(invalid("model parameters must be finite"));
        }
        if !(self.alpha_scale.is_finite() && self.alpha_scale > 0.0) {
            return Err(invalid("alpha_scale must be > 0"));
        }
        Ok(())
    }

    /// Network output in normalized units for a normalized input.
    pub fn forward_normalized(&self, x: f64) -> Vec<f64> {
        let quant = self.spec.quantization.as_ref();
        let mut a = vec![quant.map_or(x, |q| q.input.fake_quantize(x))];
        for (i, layer) in self.layers.iter().enumerate() {
            let fmt = quant.map(|q| q.layers[i]);
            let act = self.spec.activations[i];
            a = (0..layer.fan_out)
                .map(|o| {
                    let row = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                    let (z, b) = match fmt {
                        Some(f) => (
                            row.iter()
                                .zip(&a)
                                .map(|(w, v)| f.weight.fake_quantize(*w) * v)
                                .sum::<f64>(),
                            f.weight.fake_quantize(layer.bias[o]),
                        ),
                        None => (
                            row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>(),
                            layer.bias[o],
                        ),
                    };
                    let r = act.apply(z + b);
                    fmt.map_or(r, |f| f.activation.fake_quantize(r))
                })
                .collect();
        }
        a
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: MlpModel = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        m.validate().map_err(|e| Error::parse(path, e))?;
        Ok(m)
    }
}

/// Predicted pulse for rotation angle `beta`.
pub fn mlp_forward(m: &MlpModel, beta: f64) -> Result<PulseParams> {
    if !(-PI..=PI).contains(&beta) {
        return Err(invalid(format!("beta = {beta} outside [-pi, pi]")));
    }
    let y = m.forward_normalized(beta / m.spec.beta_scale);
    PulseParams::from_slice(&y.iter().map(|v| v * m.alpha_scale).collect::<Vec<_>>())
}

/// Mean squared error over `split` in normalized α units.
pub fn mse(m: &MlpModel, ds: &Dataset, split: Split) -> Result<f64> {
    let rows: Vec<_> = ds.split_rows(split).collect();
    if rows.is_empty() {
        return Err(invalid(format!("{} split is empty", split.as_str())));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for r in rows {
        let y = m.forward_normalized(r.beta / m.spec.beta_scale);
        for (p, t) in y.iter().zip(r.alpha.p.iter().chain(&r.alpha.q)) {
            total += (p - t / m.alpha_scale).powi(2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Float training; any quantization formats on `spec` are dropped.
pub fn train(spec: &MlpSpec, ds: &Dataset, cfg: &TrainConfig) -> Result<MlpModel> {
    let mut spec = spec.clone();
    spec.quantization = None;
    fit(spec, ds, cfg, None)
}

/// Quantization-aware training; `spec` must carry formats for every layer.
pub fn train_qat(spec: &MlpSpec, ds: &Dataset, cfg: &TrainConfig) -> Result<MlpModel> {
    if spec.quantization.is_none() {
        return Err(invalid(
            "quantization-aware training needs per-layer formats",
        ));
    }
    fit(spec.clone(), ds, cfg, None)
}

/// Quantization-aware training that starts from the weights of `base`
/// instead of a fresh initialization.
pub fn fine_tune_qat(
    base: &MlpModel,
    formats: QuantSpec,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<MlpModel> {
    base.validate()?;
    let spec = base.spec.clone().with_quantization(formats)?;
    fit(spec, ds, cfg, Some(base))
}

struct Batch {
    x: Vec<f64>,
    /// rows × outputs, row-major
    y: Vec<f64>,
}

fn batch(ds: &Dataset, split: Split, beta_scale: f64, alpha_scale: f64) -> Batch {
    let rows: Vec<_> = ds.split_rows(split).collect();
    Batch {
        x: rows.iter().map(|r| r.beta / beta_scale).collect(),
        y: rows
            .iter()
            .flat_map(|r| r.alpha.p.iter().chain(&r.alpha.q).map(|v| v / alpha_scale))
            .collect(),
    }
}

/// Forward pass over a batch keeping what backprop needs.
struct Trace {
    /// Layer inputs: `inputs[l]` is rows × fan_in(l).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations, rows × fan_out(l).
    pre: Vec<Vec<f64>>,
    /// Activation-quantizer pass-through mask, rows × fan_out(l).
    act_mask: Vec<Vec<bool>>,
    output: Vec<f64>,
}

/// Effective (possibly fake-quantized) parameters plus STE masks.
struct EffectiveParams {
    weights: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
    weight_mask: Vec<Vec<bool>>,
    bias_mask: Vec<Vec<bool>>,
}

fn effective_params(m: &MlpModel) -> EffectiveParams {
    let q = m.spec.quantization.as_ref();
    let mut e = EffectiveParams {
        weights: Vec::new(),
        bias: Vec::new(),
        weight_mask: Vec::new(),
        bias_mask: Vec::new(),
    };
    for (i, l) in m.layers.iter().enumerate() {
        match q.map(|q| q.layers[i].weight) {
            Some(f) => {
                e.weights
                    .push(l.weights.iter().map(|w| f.fake_quantize(*w)).collect());
                e.bias
                    .push(l.bias.iter().map(|w| f.fake_quantize(*w)).collect());
                e.weight_mask
                    .push(l.weights.iter().map(|w| f.in_range(*w)).collect());
                e.bias_mask
                    .push(l.bias.iter().map(|w| f.in_range(*w)).collect());
            }
            None => {
                e.weights.push(l.weights.clone());
                e.bias.push(l.bias.clone());
                e.weight_mask.push(vec![true; l.weights.len()]);
                e.bias_mask.push(vec![true; l.bias.len()]);
            }
        }
    }
    e
}

fn forward_trace(m: &MlpModel, eff: &EffectiveParams, xs: &[f64]) -> Trace {
    let q = m.spec.quantization.as_ref();
    let rows = xs.len();
    let mut a: Vec<f64> = xs
        .iter()
        .map(|x| q.map_or(*x, |q| q.input.fake_quantize(*x)))
        .collect();
    let mut t = Trace {
        inputs: Vec::with_capacity(m.layers.len()),
        pre: Vec::with_capacity(m.layers.len()),
        act_mask: Vec::with_capacity(m.layers.len()),
        output: Vec::new(),
    };
    for (i, l) in m.layers.iter().enumerate() {
        let act = m.spec.activations[i];
        let fmt = q.map(|q| q.layers[i].activation);
        let (w, b) = (&eff.weights[i], &eff.bias[i]);
        let mut z = vec![0.0; rows * l.fan_out];
        let mut out = vec![0.0; rows * l.fan_out];
        let mut mask = vec![true; rows * l.fan_out];
        for r in 0..rows {
            let input = &a[r * l.fan_in..(r + 1) * l.fan_in];
            for o in 0..l.fan_out {
                let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                let s = row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>() + b[o];
                let k = r * l.fan_out + o;
                z[k] = s;
                let v = act.apply(s);
                out[k] = match fmt {
                    Some(f) => {
                        mask[k] = f.in_range(v);
                        f.fake_quantize(v)
                    }
                    None => v,
                };
            }
        }
        t.inputs.push(std::mem::replace(&mut a, out));
        t.pre.push(z);
        t.act_mask.push(mask);
    }
    t.output = a;
    t
}

fn batch_mse(output: &[f64], y: &[f64]) -> f64 {
    output
        .iter()
        .zip(y)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / y.len() as f64
}

/// Loss and its gradient with respect to the stored (unquantized)
/// parameters, laid out as `[w_0, b_0, w_1, b_1, ...]`.
pub fn loss_and_gradient(m: &MlpModel, xs: &[f64], ys: &[f64]) -> (f64, Vec<f64>) {
    let eff = effective_params(m);
    let t = forward_trace(m, &eff, xs);
    let loss = batch_mse(&t.output, ys);
    let rows = xs.len();
    let scale = 2.0 / ys.len() as f64;
    let mut delta: Vec<f64> = t
        .output
        .iter()
        .zip(ys)
        .map(|(p, y)| scale * (p - y))
        .collect();

    let mut grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(m.layers.len());
    for (i, l) in m.layers.iter().enumerate().rev() {
        let act = m.spec.activations[i];
        // through activation quantizer (STE) and activation
        for (k, d) in delta.iter_mut().enumerate() {
            if !t.act_mask[i][k] {
                *d = 0.0;
            } else {
                *d *= act.derivative(t.pre[i][k]);
            }
        }
        let input = &t.inputs[i];
        let mut gw = vec![0.0; l.weights.len()];
        let mut gb = vec![0.0; l.bias.len()];
        let mut prev = vec![0.0; rows * l.fan_in];
        let w = &eff.weights[i];
        for r in 0..rows {
            let a_in = &input[r * l.fan_in..(r + 1) * l.fan_in];
            for o in 0..l.fan_out {
                let d = delta[r * l.fan_out + o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = o * l.fan_in;
                for j in 0..l.fan_in {
                    gw[row + j] += d * a_in[j];
                    prev[r * l.fan_in + j] += d * w[row + j];
                }
            }
        }
        for (g, ok) in gw.iter_mut().zip(&eff.weight_mask[i]) {
            if !ok {
                *g = 0.0;
            }
        }
        for (g, ok) in gb.iter_mut().zip(&eff.bias_mask[i]) {
            if !ok {
                *g = 0.0;
            }
        }
        grads.push((gw, gb));
        delta = prev;
    }
    let flat = grads
        .into_iter()
        .rev()
        .flat_map(|(w, b)| w.into_iter().chain(b))
        .collect();
    (loss, flat)
}

fn params_mut(m: &mut MlpModel) -> impl Iterator<Item = &mut f64> {
    m.layers
        .iter_mut()
        .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
}

fn fit(
    spec: MlpSpec,
    ds: &Dataset,
    cfg: &TrainConfig,
    start: Option<&MlpModel>,
) -> Result<MlpModel> {
    cfg.validate()?;
    spec.validate()?;
    if ds.split_count(Split::Train) == 0 || ds.split_count(Split::Val) == 0 {
        return Err(invalid("dataset needs nonempty train and val splits"));
    }
    let alpha_scale = match ds.alpha_scale(Split::Train) {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let quantization_aware = spec.quantization.is_some();
    let train_set = batch(ds, Split::Train, spec.beta_scale, alpha_scale);
    let val_set = batch(ds, Split::Val, spec.beta_scale, alpha_scale);
    let mut model = MlpModel::init(spec, alpha_scale, cfg.seed)?;
    if let Some(base) = start {
        if base.spec.widths != model.spec.widths {
            return Err(invalid("starting model has a different architecture"));
        }
        model.layers = base.layers.clone();
    }

    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let n = model.param_count();
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];

    let val_loss = |m: &MlpModel| {
        let eff = effective_params(m);
        batch_mse(&forward_trace(m, &eff, &val_set.x).output, &val_set.y)
    };

    let mut best = (val_loss(&model), 0usize, model.layers.clone());
    let mut loss_history = Vec::new();
    let mut val_history = Vec::new();
    let mut epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        let (loss, grad) = loss_and_gradient(&model, &train_set.x, &train_set.y);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        let c1 = 1.0 - BETA1.powi(epoch as i32);
        let c2 = 1.0 - BETA2.powi(epoch as i32);
        for (k, p) in params_mut(&mut model).enumerate() {
            let g = grad[k];
            m1[k] = BETA1 * m1[k] + (1.0 - BETA1) * g;
            m2[k] = BETA2 * m2[k] + (1.0 - BETA2) * g * g;
            *p -= cfg.learning_rate * (m1[k] / c1) / ((m2[k] / c2).sqrt() + EPS);
        }
        epochs = epoch;
        let v = val_loss(&model);
        if !v.is_finite() {
            return Err(Error::Diverged { epoch, loss: v });
        }
        loss_history.push(loss);
        val_history.push(v);
        if v < best.0 {
            best = (v, epoch, model.layers.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }

    model.layers = best.2;
    let eff = effective_params(&model);
    model.report = TrainReport {
        train_mse: batch_mse(
            &forward_trace(&model, &eff, &train_set.x).output,
            &train_set.y,
        ),
        val_mse: best.0,
        test_mse: None,
        test_mse_unnormalized: None,
        epochs,
        best_epoch: best.1,
        seed: cfg.seed,
        quantization_aware,
        loss_history,
        val_history,
    };
    if ds.split_count(Split::Test) > 0 {
        let t = mse(&model, ds, Split::Test)?;
        model.report.test_mse = Some(t);
        model.report.test_mse_unnormalized = Some(t * alpha_scale * alpha_scale);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetMeta, DatasetRow};
    use crate::optimizer::OptimizerConfig;
    use crate::pulse::PulseConfig;

    pub(crate) fn synthetic(n: usize, f: impl Fn(f64, usize) -> f64) -> Dataset {
        let rows = (0..n)
            .map(|i| {
                let beta = -PI + 2.0 * PI * (i + 1) as f64 / n as f64;
                let alpha: Vec<f64> = (0..20).map(|j| f(beta, j)).collect();
                DatasetRow {
                    beta,
                    alpha: PulseParams::from_slice(&alpha).unwrap(),
                    fidelity: 1.0,
                    split: Some(match i % 5 {
                        1 => Split::Val,
                        3 => Split::Test,
                        _ => Split::Train,
                    }),
                }
            })
            .collect();
        Dataset {
            rows,
            meta: DatasetMeta {
                grid_size: n + 1,
                seed: 0,
                pulse: PulseConfig::default(),
                optimizer: OptimizerConfig::default(),
                alpha_scale: 0.0,
                split_seed: None,
                tool_version: "test".into(),
            },
        }
    }

    #[test]
    fn fine_tune_starts_from_base() {
        let ds = synthetic(30, |b, j| 0.01 * (b * (j + 1) as f64).sin());
        let cfg = TrainConfig {
            max_epochs: 300,
            patience: 100,
            ..Default::default()
        };
        let base = train(&MlpSpec::new("t", &[6, 6, 6], 20).unwrap(), &ds, &cfg).unwrap();
        let q = crate::fixed::preset_formats("genesys16", 4).unwrap();
        let tuned = fine_tune_qat(
            &base,
            q.clone(),
            &ds,
            &TrainConfig {
                max_epochs: 2,
                patience: 1,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert!(tuned.report.quantization_aware);
        // one small step from the base weights, far better than a fresh start
        assert!(tuned.report.val_mse < 2.0 * base.report.val_mse + 1e-6);
        let other = MlpModel::zeros(MlpSpec::new("o", &[6, 6], 20).unwrap(), 1.0).unwrap();
        assert!(fine_tune_qat(&other, q, &ds, &cfg).is_err());
    }

    #[test]
    fn preset_parameter_counts() {
        assert_eq!(MlpSpec::preset("forward").unwrap().param_count(), 1040);
        assert_eq!(MlpSpec::preset("forward").unwrap().hidden_layers(), 7);
        assert_eq!(MlpSpec::preset("compact").unwrap().param_count(), 783);
        assert_eq!(MlpSpec::preset("compact").unwrap().hidden_layers(), 6);
        assert_eq!(MlpSpec::preset("wide").unwrap().param_count(), 10036);
        assert!(MlpSpec::preset("nope").is_err());
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = MlpModel::zeros(MlpSpec::preset("forward").unwrap(), 0.05).unwrap();
        for beta in [-PI, -0.3, 0.0, 2.0, PI] {
            assert!(mlp_forward(&m, beta)
                .unwrap()
                .to_vec()
                .iter()
                .all(|v| *v == 0.0));
        }
        assert!(mlp_forward(&m, 3.2).is_err());
    }

    #[test]
    fn zero_input_returns_scaled_bias() {
        let mut m = MlpModel::init(MlpSpec::new("t", &[4], 20).unwrap(), 0.5, 3).unwrap();
        m.layers[0].bias = vec![0.0; 4];
        let bias: Vec<f64> = (0..20).map(|j| j as f64 * 0.01 - 0.1).collect();
        m.layers[1].bias = bias.clone();
        let out = mlp_forward(&m, 0.0).unwrap().to_vec();
        for (o, b) in out.iter().zip(&bias) {
            assert!((o - b * 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_target_is_learned() {
        let ds = synthetic(25, |_, j| 0.01 * (j as f64 - 10.0));
        let cfg = TrainConfig {
            max_epochs: 4000,
            patience: 3999,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let m = train(&MlpSpec::new("c", &[4, 4], 20).unwrap(), &ds, &cfg).unwrap();
        assert!(m.report.train_mse <= 1e-10, "{}", m.report.train_mse);
    }

    #[test]
    fn early_stopping_restores_best_epoch() {
        let ds = synthetic(25, |b, j| (b * (j as f64 + 1.0) * 0.3).sin());
        let cfg = TrainConfig {
            max_epochs: 3000,
            patience: 20,
            learning_rate: 5e-2,
            ..Default::default()
        };
        let m = train(&MlpSpec::new("c", &[3], 20).unwrap(), &ds, &cfg).unwrap();
        let r = &m.report;
        assert!(r.epochs < cfg.max_epochs);
        assert_eq!(r.epochs, r.best_epoch + cfg.patience);
        assert_eq!(r.val_history.len(), r.epochs);
        let best = r.val_history.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(r.val_mse, best);
        assert_eq!(mse(&m, &ds, Split::Val).unwrap(), best);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = synthetic(20, |b, j| b * j as f64 * 0.001);
        let cfg = TrainConfig {
            max_epochs: 200,
            patience: 100,
            seed: 4,
            ..Default::default()
        };
        let spec = MlpSpec::new("d", &[5, 5], 20).unwrap();
        let a = train(&spec, &ds, &cfg).unwrap();
        let b = train(&spec, &ds, &cfg).unwrap();
        assert_eq!(a.layers, b.layers);
    }

    #[test]
    fn nan_loss_aborts() {
        let ds = synthetic(20, |b, j| b * j as f64);
        let cfg = TrainConfig {
            max_epochs: 2000,
            patience: 1000,
            learning_rate: 1e300,
            ..Default::default()
        };
        let err = train(&MlpSpec::new("n", &[4], 20).unwrap(), &ds, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn qat_requires_formats() {
        let ds = synthetic(10, |_, _| 0.1);
        let spec = MlpSpec::new("q", &[4], 20).unwrap();
        assert!(train_qat(&spec, &ds, &TrainConfig::default()).is_err());
    }

    #[test]
    fn mse_errors_on_empty_split() {
        let mut ds = synthetic(10, |_, _| 0.1);
        for r in &mut ds.rows {
            r.split = Some(Split::Train);
        }
        let m = MlpModel::zeros(MlpSpec::new("z", &[2], 20).unwrap(), 1.0).unwrap();
        assert!(mse(&m, &ds, Split::Test).is_err());
        assert!(train(&m.spec, &ds, &TrainConfig::default()).is_err());
        // zero model: MSE equals mean of squared normalized targets
        assert!((mse(&m, &ds, Split::Train).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn spec_validation() {
        let mut s = MlpSpec::new("v", &[3], 20).unwrap();
        s.widths[1] = 0;
        assert!(s.validate().is_err());
        assert!(MlpSpec::new("v", &[3], 19).is_err());
        let fmt = FxFormat::new(2, 7).unwrap();
        let q = QuantSpec {
            input: fmt,
            layers: vec![LayerFormats {
                weight: fmt,
                activation: fmt,
            }],
        };
        assert!(MlpSpec::new("v", &[3], 20)
            .unwrap()
            .with_quantization(q)
            .is_err());
    }
}
