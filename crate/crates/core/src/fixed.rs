//! Fixed-point formats, bit-exact integer inference and the DSP/LUT
//! multiplier estimate.
//!
//! A format `⟨W, I⟩` is a two's-complement word of `W` bits with `I` integer
//! bits, the sign excluded, and `F = W − 1 − I` fractional bits. Rounding is
//! half-to-even and overflow saturates.

use serde::{Deserialize, Serialize};

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::mlp::{Activation, MlpModel, QuantSpec};
use crate::pulse::PulseParams;

/// Widest supported word; keeps products and sums inside an `i128`.
pub const MAX_WORD_BITS: u32 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "FormatRepr", try_from = "FormatRepr")]
pub struct FxFormat {
    pub int_bits: u32,
    pub frac_bits: u32,
}

impl FxFormat {
    pub fn new(int_bits: u32, frac_bits: u32) -> Result<Self> {
        let f = FxFormat {
            int_bits,
            frac_bits,
        };
        f.validate()?;
        Ok(f)
    }

    /// Format with `word` total bits of which `int_bits` are integer bits.
    pub fn with_word(word: u32, int_bits: u32) -> Result<Self> {
        if word < int_bits + 1 {
            return Err(invalid(format!(
                "word of {word} bits cannot hold sign + {int_bits} integer bits"
            )));
        }
        FxFormat::new(int_bits, word - 1 - int_bits)
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.word_bits();
        if !(2..=MAX_WORD_BITS).contains(&w) {
            return Err(invalid(format!(
                "word width must be in [2, {MAX_WORD_BITS}], got {w}"
            )));
        }
        Ok(())
    }

    pub fn word_bits(&self) -> u32 {
        1 + self.int_bits + self.frac_bits
    }

    pub fn min_code(&self) -> i64 {
        -(1i64 << (self.int_bits + self.frac_bits))
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << (self.int_bits + self.frac_bits)) - 1
    }

    pub fn resolution(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn min_value(&self) -> f64 {
        self.decode(self.min_code())
    }

    pub fn max_value(&self) -> f64 {
        self.decode(self.max_code())
    }

    pub fn in_range(&self, x: f64) -> bool {
        x >= self.min_value() && x <= self.max_value()
    }

    pub fn decode(&self, code: i64) -> f64 {
        code as f64 * self.resolution()
    }

    /// Round-half-even, then saturate.
    pub fn quantize(&self, x: f64) -> i64 {
        let scaled = (x * (self.frac_bits as f64).exp2()).round_ties_even();
        if scaled.is_nan() {
            return 0;
        }
        if scaled <= self.min_code() as f64 {
            self.min_code()
        } else if scaled >= self.max_code() as f64 {
            self.max_code()
        } else {
            scaled as i64
        }
    }

    /// `decode(quantize(x))`.
    pub fn fake_quantize(&self, x: f64) -> f64 {
        self.decode(self.quantize(x))
    }
}

/// On-disk form: total word width and integer bits.
#[derive(Serialize, Deserialize)]
struct FormatRepr {
    word_bits: u32,
    int_bits: u32,
}

impl From<FxFormat> for FormatRepr {
    fn from(f: FxFormat) -> Self {
        FormatRepr {
            word_bits: f.word_bits(),
            int_bits: f.int_bits,
        }
    }
}

impl TryFrom<FormatRepr> for FxFormat {
    type Error = String;

    fn try_from(r: FormatRepr) -> std::result::Result<Self, String> {
        FxFormat::with_word(r.word_bits, r.int_bits).map_err(|e| e.to_string())
    }
}

impl std::fmt::Display for FxFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "<{},{}>", self.word_bits(), self.int_bits)
    }
}

pub fn quantize_real(x: f64, f: FxFormat) -> i64 {
    f.quantize(x)
}

/// Weight and activation formats of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFormats {
    pub weight: FxFormat,
    pub activation: FxFormat,
}

/// Built-in board configurations.
pub const PRESETS: &[&str] = &["genesys16", "ultra96", "arty-mixed"];

/// Per-layer formats of a named preset for a network with `layers` dense layers.
///
/// * `genesys16`: every word 16 bits with 6 integer bits.
/// * `ultra96`: 2 integer bits; 11-bit words on the first and last layers,
///   10-bit words elsewhere.
/// * `arty-mixed`: 14, 12, 12 bits on the first three layers, 16 on the
///   output layer and 10 on the rest; 2 integer bits except the output
///   layer, which has none.
///
/// The input is quantized to the first layer's format.
pub fn preset_formats(name: &str, layers: usize) -> Result<QuantSpec> {
    if layers == 0 {
        return Err(invalid("network has no layers"));
    }
    let uniform = |f: FxFormat| LayerFormats {
        weight: f,
        activation: f,
    };
    let formats: Vec<LayerFormats> = match name {
        "genesys16" => vec![uniform(FxFormat::with_word(16, 6)?); layers],
        "ultra96" => (0..layers)
            .map(|l| {
                let w = if l == 0 || l + 1 == layers { 11 } else { 10 };
                FxFormat::with_word(w, 2).map(uniform)
            })
            .collect::<Result<_>>()?,
        "arty-mixed" => {
            if layers < 4 {
                return Err(invalid(format!(
                    "arty-mixed needs at least 4 layers, network has {layers}"
                )));
            }
            (0..layers)
                .map(|l| {
                    let (w, i) = match l {
                        0 => (14, 2),
                        1 | 2 => (12, 2),
                        _ if l + 1 == layers => (16, 0),
                        _ => (10, 2),
                    };
                    FxFormat::with_word(w, i).map(uniform)
                })
                .collect::<Result<_>>()?
        }
        other => {
            return Err(invalid(format!(
                "unknown quantization preset {other:?} (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(QuantSpec {
        input: formats[0].activation,
        layers: formats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_format: FxFormat,
    pub activation_format: FxFormat,
    pub activation: Activation,
    /// `fan_out × fan_in` codes, row-major, in `weight_format`.
    pub weights: Vec<i64>,
    /// Codes in `weight_format`.
    pub bias: Vec<i64>,
}

/// Integer-only network ready for bit-exact inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub name: String,
    pub input_format: FxFormat,
    pub layers: Vec<QuantizedLayer>,
    pub alpha_scale: f64,
    pub beta_scale: f64,
    /// SHA-256 of the files this model was built from, keyed by role.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

impl QuantizedModel {
    pub fn output_format(&self) -> FxFormat {
        self.layers.last().expect("nonempty").activation_format
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(invalid("quantized model has no layers"));
        }
        let mut width = 1;
        for (i, l) in self.layers.iter().enumerate() {
            l.weight_format.validate()?;
            l.activation_format.validate()?;
            if l.fan_in != width
                || l.weights.len() != l.fan_in * l.fan_out
                || l.bias.len() != l.fan_out
            {
                return Err(invalid(format!("layer {i} has inconsistent shape")));
            }
            let f = l.weight_format;
            if l.weights
                .iter()
                .chain(&l.bias)
                .any(|c| *c < f.min_code() || *c > f.max_code())
            {
                return Err(invalid(format!("layer {i} has a code outside {f}")));
            }
            width = l.fan_out;
        }
        if width != 20 {
            return Err(invalid(format!("model emits {width} values, expected 20")));
        }
        if !(self.alpha_scale.is_finite() && self.alpha_scale > 0.0 && self.beta_scale > 0.0) {
            return Err(invalid("normalization constants must be positive"));
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, text).map_err(|e| crate::error::Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        use crate::error::Error;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: QuantizedModel = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        m.validate().map_err(|e| Error::parse(path, e))?;
        Ok(m)
    }
}

/// Quantizes weights and biases of `m` to `formats`.
pub fn quantize_model_with(
    m: &MlpModel,
    formats: &QuantSpec,
    name: &str,
) -> Result<QuantizedModel> {
    m.validate()?;
    if formats.layers.len() != m.layers.len() {
        return Err(invalid(format!(
            "{} layer formats for a {}-layer model",
            formats.layers.len(),
            m.layers.len()
        )));
    }
    let layers = m
        .layers
        .iter()
        .zip(&formats.layers)
        .zip(&m.spec.activations)
        .map(|((l, f), act)| QuantizedLayer {
            fan_in: l.fan_in,
            fan_out: l.fan_out,
            weight_format: f.weight,
            activation_format: f.activation,
            activation: *act,
            weights: l.weights.iter().map(|w| f.weight.quantize(*w)).collect(),
            bias: l.bias.iter().map(|b| f.weight.quantize(*b)).collect(),
        })
        .collect();
    Ok(QuantizedModel {
        name: name.to_string(),
        input_format: formats.input,
        layers,
        alpha_scale: m.alpha_scale,
        beta_scale: m.spec.beta_scale,
        inputs: m.inputs.clone(),
    })
}

/// Quantizes with a named preset, or with the model's own QAT formats when
/// `preset` is `"model"`.
pub fn quantize_model(m: &MlpModel, preset: &str) -> Result<QuantizedModel> {
    let formats = if preset == "model" {
        m.spec
            .quantization
            .clone()
            .ok_or_else(|| invalid("model carries no quantization formats"))?
    } else {
        preset_formats(preset, m.layers.len())?
    };
    quantize_model_with(m, &formats, preset)
}

/// `round_half_even(acc / 2^shift)` for `shift > 0`.
fn shift_round_half_even(acc: i128, shift: u32) -> i128 {
    let q = acc >> shift;
    let rem = acc - (q << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Moves `acc` from `from_frac` to `to_frac` fractional bits, then saturates.
fn requantize(acc: i128, from_frac: u32, to: FxFormat) -> i64 {
    let v = if from_frac > to.frac_bits {
        shift_round_half_even(acc, from_frac - to.frac_bits)
    } else {
        acc << (to.frac_bits - from_frac)
    };
    v.clamp(to.min_code() as i128, to.max_code() as i128) as i64
}

/// Output codes (in the output layer's activation format) for angle `beta`.
pub fn quantized_infer_codes(qm: &QuantizedModel, beta: f64) -> Result<Vec<i64>> {
    if !(-PI..=PI).contains(&beta) {
        return Err(invalid(format!("beta = {beta} outside [-pi, pi]")));
    }
    let mut codes = vec![qm.input_format.quantize(beta / qm.beta_scale)];
    let mut frac = qm.input_format.frac_bits;
    for l in &qm.layers {
        let wf = l.weight_format.frac_bits;
        let acc_frac = wf + frac;
        codes = (0..l.fan_out)
            .map(|o| {
                let row = &l.weights[o * l.fan_in..(o + 1) * l.fan_in];
                let mut acc: i128 = row
                    .iter()
                    .zip(&codes)
                    .map(|(w, a)| *w as i128 * *a as i128)
                    .sum();
                acc += (l.bias[o] as i128) << frac;
                if l.activation == Activation::Relu {
                    acc = acc.max(0);
                }
                requantize(acc, acc_frac, l.activation_format)
            })
            .collect();
        frac = l.activation_format.frac_bits;
    }
    Ok(codes)
}

/// Pulse coefficients from the integer datapath, rescaled by `alpha_scale`.
pub fn quantized_infer(qm: &QuantizedModel, beta: f64) -> Result<PulseParams> {
    let out = qm.output_format();
    let codes = quantized_infer_codes(qm, beta)?;
    PulseParams::from_slice(
        &codes
            .iter()
            .map(|c| out.decode(*c) * qm.alpha_scale)
            .collect::<Vec<_>>(),
    )
}

/// Widest operand at which a multiplier still maps to LUT fabric.
pub const LUT_MULTIPLIER_MAX_BITS: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiplierKind {
    Dsp,
    Lut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerResources {
    pub fan_in: usize,
    pub fan_out: usize,
    pub multipliers: usize,
    pub weight_bits: u32,
    /// Width of the incoming activation operand.
    pub input_bits: u32,
    pub kind: MultiplierKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub layers: Vec<LayerResources>,
    pub total_multipliers: usize,
    pub dsp_multipliers: usize,
    pub lut_multipliers: usize,
    pub total_parameters: usize,
    pub reuse_factor: usize,
}

/// Fully parallel multiplier count per layer, split into DSP- and
/// LUT-mapped by operand width.
pub fn resource_report(qm: &QuantizedModel) -> ResourceReport {
    let mut input_bits = qm.input_format.word_bits();
    let mut layers = Vec::with_capacity(qm.layers.len());
    for l in &qm.layers {
        let weight_bits = l.weight_format.word_bits();
        let kind = if weight_bits.max(input_bits) <= LUT_MULTIPLIER_MAX_BITS {
            MultiplierKind::Lut
        } else {
            MultiplierKind::Dsp
        };
        layers.push(LayerResources {
            fan_in: l.fan_in,
            fan_out: l.fan_out,
            multipliers: l.fan_in * l.fan_out,
            weight_bits,
            input_bits,
            kind,
        });
        input_bits = l.activation_format.word_bits();
    }
    let count = |k: MultiplierKind| -> usize {
        layers
            .iter()
            .filter(|l| l.kind == k)
            .map(|l| l.multipliers)
            .sum()
    };
    ResourceReport {
        total_multipliers: layers.iter().map(|l| l.multipliers).sum(),
        dsp_multipliers: count(MultiplierKind::Dsp),
        lut_multipliers: count(MultiplierKind::Lut),
        total_parameters: qm
            .layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum(),
        reuse_factor: 1,
        layers,
    }
}

impl std::fmt::Display for ResourceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "layer  fan_in  fan_out  mults  w_bits  in_bits  maps_to")?;
        for (i, l) in self.layers.iter().enumerate() {
            writeln!(
                f,
                "{:>5}  {:>6}  {:>7}  {:>5}  {:>6}  {:>7}  {}",
                i,
                l.fan_in,
                l.fan_out,
                l.multipliers,
                l.weight_bits,
                l.input_bits,
                match l.kind {
                    MultiplierKind::Dsp => "DSP",
                    MultiplierKind::Lut => "LUT",
                }
            )?;
        }
        writeln!(
            f,
            "total multipliers {} (DSP {}, LUT {}), parameters {}, reuse factor {}",
            self.total_multipliers,
            self.dsp_multipliers,
            self.lut_multipliers,
            self.total_parameters,
            self.reuse_factor
        )
    }
}
