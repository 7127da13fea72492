//! Run configuration file.
//!
//! A JSON object; every field is optional and falls back to the default
//! shown by `pulsenn config`. Command-line flags override file values.
//!
//! ```json
//! {
//!   "seed": 0,
//!   "grid_size": 101,
//!   "split": [0.6, 0.2, 0.2],
//!   "pulse": {"duration": 100.0, "spline_count": 10, "carrier_count": 1, "time_steps": 1000},
//!   "optimizer": {"max_iterations": 5000, "target_fidelity": 0.999, "learning_rate": 0.0002},
//!   "model": "forward",
//!   "train": {"max_epochs": 5000, "patience": 250, "learning_rate": 0.001},
//!   "preset": null,
//!   "qat_learning_rate": 0.0001,
//!   "lut_entries": 11,
//!   "eval_grid_size": 100,
//!   "bloch_samples": 201,
//!   "drop_smallest": 0,
//!   "jobs": 0,
//!   "paths": {"dataset": "out/dataset.csv", "model": "out/model.json",
//!             "quantized": "out/model.q.json", "reports": "out/reports"},
//!   "thresholds": {"min_predicted_golden": 0.99, "min_optimized_golden": 0.999}
//! }
//! ```
//!
//! `model` is a preset name (`forward`, `compact`, `wide`) or an inline
//! `{"hidden": [..]}` list of hidden-layer widths. `seed` replaces the seeds
//! inside `optimizer` and `train` and also seeds the split.

use std::path::{Path, PathBuf};

use pulsenn::eval::Thresholds;
use pulsenn::mlp::{MlpSpec, TrainConfig};
use pulsenn::optimizer::OptimizerConfig;
use pulsenn::pulse::PulseConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Preset(String),
    Inline { hidden: Vec<usize> },
}

impl ModelChoice {
    pub fn spec(&self) -> pulsenn::error::Result<MlpSpec> {
        match self {
            ModelChoice::Preset(name) => MlpSpec::preset(name),
            ModelChoice::Inline { hidden } => MlpSpec::new("custom", hidden, 20),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub quantized: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "out/dataset.csv".into(),
            model: "out/model.json".into(),
            quantized: "out/model.q.json".into(),
            reports: "out/reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grid_size: usize,
    pub split: [f64; 3],
    pub pulse: PulseConfig,
    pub optimizer: OptimizerConfig,
    pub model: ModelChoice,
    pub train: TrainConfig,
    /// Quantization preset; with `train` the float model is fine-tuned
    /// with these formats in the loop.
    pub preset: Option<String>,
    pub qat_learning_rate: f64,
    pub lut_entries: usize,
    pub eval_grid_size: usize,
    pub bloch_samples: usize,
    /// Rows with the smallest β left out of fidelity reports.
    pub drop_smallest: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub paths: Paths,
    pub thresholds: Thresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            grid_size: 101,
            split: [0.6, 0.2, 0.2],
            pulse: PulseConfig::default(),
            optimizer: OptimizerConfig::default(),
            model: ModelChoice::Preset("forward".into()),
            train: TrainConfig::default(),
            preset: None,
            qat_learning_rate: 1e-4,
            lut_entries: 11,
            eval_grid_size: 100,
            bloch_samples: 201,
            drop_smallest: 0,
            jobs: 0,
            paths: Paths::default(),
            thresholds: Thresholds {
                min_predicted_golden: Some(0.99),
                min_optimized_golden: Some(0.999),
                max_test_mse: None,
            },
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Copies the global seed into the per-stage configurations.
    pub fn seeded(mut self) -> Self {
        self.optimizer.seed = self.seed;
        self.train.seed = self.seed;
        self
    }
}
