//! Optimized-pulse datasets: generation over a β grid, splitting, and the
//! CSV + JSON-metadata file format.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optimizer::{optimize_with, random_pulse, row_seed, OptimizerConfig, PulseSolution};
use crate::pulse::{Propagator, PulseConfig, PulseParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub beta: f64,
    pub alpha: PulseParams,
    pub fidelity: f64,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub grid_size: usize,
    pub seed: u64,
    pub pulse: PulseConfig,
    pub optimizer: OptimizerConfig,
    /// max |α| over the train split (0 before splitting).
    pub alpha_scale: f64,
    pub split_seed: Option<u64>,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<DatasetRow>,
    pub meta: DatasetMeta,
}

/// Uniform grid over `[−π, π]` inclusive; endpoints are exact.
pub fn beta_grid(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| match i {
            0 => -PI,
            _ if i + 1 == n => PI,
            _ => -PI + 2.0 * PI * i as f64 / (n - 1) as f64,
        })
        .collect()
}

pub fn generate_dataset(
    grid_size: usize,
    cfg: &OptimizerConfig,
    pcfg: &PulseConfig,
) -> Result<Dataset> {
    generate_dataset_with_jobs(grid_size, cfg, pcfg, 0)
}

/// Optimizes a pulse for every grid angle, then drops the β = −π row.
///
/// `jobs` bounds the worker count when `warm_start` is off (0 = all cores);
/// warm-started runs are sequential.
pub fn generate_dataset_with_jobs(
    grid_size: usize,
    cfg: &OptimizerConfig,
    pcfg: &PulseConfig,
    jobs: usize,
) -> Result<Dataset> {
    if grid_size < 2 {
        return Err(invalid(format!("grid size must be >= 2, got {grid_size}")));
    }
    cfg.validate()?;
    let prop = Propagator::new(pcfg)?;
    let betas = beta_grid(grid_size);

    let solutions: Vec<Result<(PulseSolution, bool)>> = if cfg.warm_start {
        let mut out = Vec::with_capacity(grid_size);
        let mut init = random_pulse(row_seed(cfg.seed, 0), cfg.init_scale, pcfg);
        for &beta in &betas {
            let res = optimize_with(&prop, beta, &init, cfg).map(|o| {
                let ok = o.is_converged();
                (o.into_solution(), ok)
            });
            if let Ok((s, _)) = &res {
                init = s.alpha.clone();
            }
            out.push(res);
        }
        out
    } else {
        let solve = |i: usize| {
            let init = random_pulse(row_seed(cfg.seed, i), cfg.init_scale, pcfg);
            optimize_with(&prop, betas[i], &init, cfg).map(|o| {
                let ok = o.is_converged();
                (o.into_solution(), ok)
            })
        };
        run_indexed(grid_size, jobs, solve)
    };

    let mut rows = Vec::with_capacity(grid_size);
    let mut failed = Vec::new();
    for (beta, res) in betas.iter().zip(solutions) {
        let (sol, ok) = res?;
        if !ok {
            failed.push(*beta);
        }
        rows.push(DatasetRow {
            beta: *beta,
            alpha: sol.alpha,
            fidelity: sol.fidelity,
            split: None,
        });
    }
    if !failed.is_empty() {
        return Err(Error::Unconverged { betas: failed });
    }
    // −π and π give the same gate; the −π pulse rotates the wrong way round
    rows.retain(|r| r.beta != -PI);

    Ok(Dataset {
        rows,
        meta: DatasetMeta {
            grid_size,
            seed: cfg.seed,
            pulse: pcfg.clone(),
            optimizer: cfg.clone(),
            alpha_scale: 0.0,
            split_seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}

#[cfg(feature = "parallel")]
pub(crate) fn run_indexed<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    use rayon::prelude::*;
    if jobs == 0 {
        return (0..n).into_par_iter().map(&f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn run_indexed<T>(n: usize, _jobs: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Shuffles row indices with `seed` and assigns contiguous train/val/test
/// blocks of sizes `n − ⌊n·f_val⌋ − ⌊n·f_test⌋`, `⌊n·f_val⌋`, `⌊n·f_test⌋`.
pub fn split_dataset(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Dataset> {
    let (ft, fv, fs) = fractions;
    if ds.rows.is_empty() {
        return Err(invalid("cannot split an empty dataset"));
    }
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(invalid(format!(
            "split fractions must be in [0, 1] and sum to 1, got {fractions:?}"
        )));
    }
    let n = ds.rows.len();
    let count = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
    let (n_val, n_test) = (count(fv), count(fs));
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = ds.clone();
    for (pos, &i) in order.iter().enumerate() {
        out.rows[i].split = Some(if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    out.meta.split_seed = Some(seed);
    out.meta.alpha_scale = out.alpha_scale(Split::Train);
    Ok(out)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn split_rows(&self, split: Split) -> impl Iterator<Item = &DatasetRow> {
        self.rows.iter().filter(move |r| r.split == Some(split))
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.split_rows(split).count()
    }

    /// max |α| over the rows of `split`.
    pub fn alpha_scale(&self, split: Split) -> f64 {
        self.split_rows(split)
            .flat_map(|r| r.alpha.p.iter().chain(&r.alpha.q))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Row whose β equals `beta` exactly, if any.
    pub fn row_at(&self, beta: f64) -> Option<&DatasetRow> {
        self.rows.iter().find(|r| r.beta == beta)
    }

    /// `Σ‖α_{i+1} − α_i‖₂` along increasing β.
    pub fn total_variation(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0].alpha.to_vec(), w[1].alpha.to_vec());
                a.iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let width = self.rows.first().map_or(0, |r| r.alpha.len());
        let mut s = String::from("beta");
        for j in 0..width {
            let _ = write!(s, ",alpha_{j}");
        }
        s.push_str(",fidelity,split\n");
        for r in &self.rows {
            let _ = write!(s, "{}", fmt17(r.beta));
            for v in r.alpha.p.iter().chain(&r.alpha.q) {
                let _ = write!(s, ",{}", fmt17(*v));
            }
            let _ = writeln!(
                s,
                ",{},{}",
                fmt17(r.fidelity),
                r.split.map_or("", Split::as_str)
            );
        }
        s
    }

    pub fn parse_csv(text: &str, meta: DatasetMeta) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or("empty file")?.split(',').collect();
        if header.len() < 5
            || header[0] != "beta"
            || header[header.len() - 2] != "fidelity"
            || header[header.len() - 1] != "split"
        {
            return Err("unexpected header".into());
        }
        let width = header.len() - 3;
        for (j, h) in header[1..=width].iter().enumerate() {
            if *h != format!("alpha_{j}") {
                return Err(format!("unexpected column {h}"));
            }
        }
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(format!("line {}: expected {} fields", ln + 2, header.len()));
            }
            let num = |c: &str| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("line {}: {c:?}: {e}", ln + 2))
            };
            let alpha: Vec<f64> = cells[1..=width]
                .iter()
                .map(|c| num(c))
                .collect::<Result<_, _>>()?;
            let split = match cells[width + 2].trim() {
                "" => None,
                s => Some(
                    Split::parse(s).ok_or_else(|| format!("line {}: bad split {s:?}", ln + 2))?,
                ),
            };
            rows.push(DatasetRow {
                beta: num(cells[0])?,
                alpha: PulseParams::from_slice(&alpha).map_err(|e| e.to_string())?,
                fidelity: num(cells[width + 1])?,
                split,
            });
        }
        if rows.windows(2).any(|w| w[1].beta <= w[0].beta) {
            return Err("betas must be strictly increasing".into());
        }
        Ok(Dataset { rows, meta })
    }

    /// Writes `path` (CSV) and its `.meta.json` companion. Both are rendered
    /// before either is written.
    pub fn save(&self, path: &Path) -> Result<()> {
        let csv = self.to_csv();
        let meta = serde_json::to_string_pretty(&self.meta).expect("metadata serializes");
        let meta_path = meta_path(path);
        std::fs::write(path, csv).map_err(|e| Error::io(path, e))?;
        if let Err(e) = std::fs::write(&meta_path, meta) {
            let _ = std::fs::remove_file(path);
            return Err(Error::io(meta_path, e));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = meta_path(path);
        let meta_text =
            std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta =
            serde_json::from_str(&meta_text).map_err(|e| Error::parse(&meta_path, e))?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::parse_csv(&text, meta).map_err(|e| Error::parse(path, e))
    }
}

/// `data.csv` → `data.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// 17 significant digits, scientific notation.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let rows = (0..n)
            .map(|i| DatasetRow {
                beta: i as f64 * 0.1,
                alpha: PulseParams::from_slice(&[i as f64 * 0.01; 20]).unwrap(),
                fidelity: 0.9995,
                split: None,
            })
            .collect();
        Dataset {
            rows,
            meta: DatasetMeta {
                grid_size: n,
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
    fn grid_endpoints_exact() {
        let g = beta_grid(101);
        assert_eq!(g[0], -PI);
        assert_eq!(g[100], PI);
        assert_eq!(g[50], 0.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(beta_grid(3), vec![-PI, 0.0, PI]);
    }

    #[test]
    fn split_counts() {
        for (n, expect) in [
            (100, (60, 20, 20)),
            (5, (3, 1, 1)),
            (1, (1, 0, 0)),
            (7, (5, 1, 1)),
        ] {
            let s = split_dataset(&toy(n), (0.6, 0.2, 0.2), 3).unwrap();
            let got = (
                s.split_count(Split::Train),
                s.split_count(Split::Val),
                s.split_count(Split::Test),
            );
            assert_eq!(got, expect, "n = {n}");
        }
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_dataset(&toy(30), (0.6, 0.2, 0.2), 9).unwrap();
        let b = split_dataset(&toy(30), (0.6, 0.2, 0.2), 9).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&toy(30), (0.6, 0.2, 0.2), 10).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn split_errors() {
        assert!(split_dataset(&toy(0), (0.6, 0.2, 0.2), 0).is_err());
        assert!(split_dataset(&toy(4), (0.6, 0.2, 0.3), 0).is_err());
    }

    #[test]
    fn split_records_train_scale() {
        let s = split_dataset(&toy(10), (0.6, 0.2, 0.2), 1).unwrap();
        let expect = s
            .split_rows(Split::Train)
            .map(|r| r.alpha.p[0].abs())
            .fold(0.0, f64::max);
        assert_eq!(s.meta.alpha_scale, expect);
    }

    #[test]
    fn csv_header_layout() {
        let csv = toy(2).to_csv();
        let header = csv.lines().next().unwrap();
        assert!(header.starts_with("beta,alpha_0,alpha_1,"));
        assert!(header.ends_with(",alpha_19,fidelity,split"));
        assert_eq!(header.split(',').count(), 23);
        assert_eq!(fmt17(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn csv_rejects_garbage() {
        let meta = toy(0).meta;
        assert!(Dataset::parse_csv("", meta.clone()).is_err());
        assert!(Dataset::parse_csv("a,b\n", meta.clone()).is_err());
        let mut csv = toy(2).to_csv();
        csv.push_str("1,2\n");
        assert!(Dataset::parse_csv(&csv, meta).is_err());
    }

    #[test]
    fn tiny_grid_drops_minus_pi() {
        let pcfg = PulseConfig {
            time_steps: 100,
            ..Default::default()
        };
        let ds = generate_dataset(3, &OptimizerConfig::default(), &pcfg).unwrap();
        let betas: Vec<f64> = ds.rows.iter().map(|r| r.beta).collect();
        assert_eq!(betas, vec![0.0, PI]);
        assert!(ds.rows.iter().all(|r| r.fidelity >= 0.999));
    }

    #[test]
    fn unconverged_grid_is_an_error() {
        let cfg = OptimizerConfig {
            max_iterations: 1,
            warm_start: false,
            ..Default::default()
        };
        let pcfg = PulseConfig {
            time_steps: 50,
            ..Default::default()
        };
        match generate_dataset(3, &cfg, &pcfg) {
            Err(Error::Unconverged { betas }) => assert!(!betas.is_empty()),
            other => panic!("expected unconverged error, got {other:?}"),
        }
    }
}
