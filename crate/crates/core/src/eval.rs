//! Fidelity curves, lookup-table baselines, Bloch-sphere tracks and report
//! files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{fmt17, run_indexed, Dataset, Split};
use crate::error::{invalid, Error, Result};
use crate::pulse::{Propagator, PulseConfig, PulseParams};
use crate::quantum::{bloch_coords, fidelity_unchecked, rx_gate, QubitState};

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    std::fs::read(path)
        .map(|b| sha256_hex(&b))
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Float,
    Quantized,
    Lut,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Float => "float",
            Engine::Quantized => "quantized",
            Engine::Lut => "lut",
        }
    }
}

/// Where a report's numbers came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_sha256: Option<String>,
    pub dataset_sha256: Option<String>,
    pub engine: Option<Engine>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub min: f64,
    pub mean: f64,
    pub count: usize,
}

impl CurveSummary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let (mut min, mut sum, mut count) = (f64::INFINITY, 0.0, 0usize);
        for v in values {
            min = min.min(v);
            sum += v;
            count += 1;
        }
        (count > 0).then(|| CurveSummary {
            min,
            mean: sum / count as f64,
            count,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub beta: f64,
    pub predicted_golden: f64,
    /// Present only when β is a dataset row.
    pub predicted_optimized: Option<f64>,
    pub optimized_golden: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelitySummary {
    pub predicted_golden: CurveSummary,
    pub predicted_optimized: Option<CurveSummary>,
    pub optimized_golden: Option<CurveSummary>,
}

/// Surrogate MSE on normalized α per split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub name: String,
    pub rows: Vec<FidelityRow>,
    pub summary: FidelitySummary,
    pub mse: Option<MseSummary>,
    pub provenance: Provenance,
}

const FIDELITY_CSV_HEADER: &str = "beta,predicted_golden,predicted_optimized,optimized_golden";

fn opt17(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_default()
}

fn parse_cell(c: &str, line: usize) -> std::result::Result<f64, String> {
    c.trim()
        .parse::<f64>()
        .map_err(|e| format!("line {line}: {c:?}: {e}"))
}

fn parse_opt_cell(c: &str, line: usize) -> std::result::Result<Option<f64>, String> {
    if c.trim().is_empty() {
        Ok(None)
    } else {
        parse_cell(c, line).map(Some)
    }
}

/// Splits a CSV body after checking its header; yields (line number, cells).
fn csv_records<'a>(
    text: &'a str,
    header: &str,
) -> std::result::Result<Vec<(usize, Vec<&'a str>)>, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(header) {
        return Err(format!("expected header {header:?}"));
    }
    let width = header.split(',').count();
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() == width {
                Ok((i + 2, cells))
            } else {
                Err(format!("line {}: expected {width} fields", i + 2))
            }
        })
        .collect()
}

impl FidelityReport {
    fn from_rows(name: &str, rows: Vec<FidelityRow>, provenance: Provenance) -> Result<Self> {
        let summary = FidelitySummary {
            predicted_golden: CurveSummary::of(rows.iter().map(|r| r.predicted_golden))
                .ok_or_else(|| invalid("fidelity report needs at least one row"))?,
            predicted_optimized: CurveSummary::of(
                rows.iter().filter_map(|r| r.predicted_optimized),
            ),
            optimized_golden: CurveSummary::of(rows.iter().filter_map(|r| r.optimized_golden)),
        };
        Ok(FidelityReport {
            name: name.to_string(),
            rows,
            summary,
            mse: None,
            provenance,
        })
    }

    /// Copy without the `k` smallest β rows; summaries are recomputed.
    pub fn without_smallest(&self, k: usize) -> Result<Self> {
        let rows = self.rows.iter().skip(k).copied().collect();
        let mut out = FidelityReport::from_rows(&self.name, rows, self.provenance.clone())?;
        out.mse = self.mse;
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{FIDELITY_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                fmt17(r.beta),
                fmt17(r.predicted_golden),
                opt17(r.predicted_optimized),
                opt17(r.optimized_golden)
            );
        }
        s
    }

    pub fn rows_from_csv(text: &str) -> std::result::Result<Vec<FidelityRow>, String> {
        csv_records(text, FIDELITY_CSV_HEADER)?
            .into_iter()
            .map(|(ln, c)| {
                Ok(FidelityRow {
                    beta: parse_cell(c[0], ln)?,
                    predicted_golden: parse_cell(c[1], ln)?,
                    predicted_optimized: parse_opt_cell(c[2], ln)?,
                    optimized_golden: parse_opt_cell(c[3], ln)?,
                })
            })
            .collect()
    }
}

/// MSE of `predict` against the `split` rows of `ds`, with both sides
/// divided by `alpha_scale`.
pub fn split_mse<P>(predict: P, ds: &Dataset, split: Split, alpha_scale: f64) -> Result<f64>
where
    P: Fn(f64) -> Result<PulseParams>,
{
    if !(alpha_scale.is_finite() && alpha_scale > 0.0) {
        return Err(invalid("alpha_scale must be positive"));
    }
    let (mut total, mut count) = (0.0, 0usize);
    for r in ds.split_rows(split) {
        let y = predict(r.beta)?.to_vec();
        for (p, t) in y.iter().zip(r.alpha.to_vec()) {
            total += ((p - t) / alpha_scale).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(invalid(format!("{} split is empty", split.as_str())));
    }
    Ok(total / count as f64)
}

fn check_grid(grid: &[f64], bounded: bool) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("evaluation grid is empty"));
    }
    for b in grid {
        let ok = if bounded {
            (-std::f64::consts::PI..=std::f64::consts::PI).contains(b)
        } else {
            b.is_finite()
        };
        if !ok {
            return Err(invalid(format!("grid angle {b} outside [-pi, pi]")));
        }
    }
    Ok(())
}

fn sorted(grid: &[f64]) -> Vec<f64> {
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g
}

/// Predicted, optimized and golden gates compared pairwise at every β of
/// `grid`. Optimized gates exist only where β is a row of `ds`.
pub fn fidelity_curve<P>(
    name: &str,
    predict: P,
    ds: Option<&Dataset>,
    grid: &[f64],
    pcfg: &PulseConfig,
) -> Result<FidelityReport>
where
    P: Fn(f64) -> Result<PulseParams> + Sync,
{
    check_grid(grid, true)?;
    let prop = Propagator::new(pcfg)?;
    let betas = sorted(grid);
    let rows = run_indexed(betas.len(), 0, |i| -> Result<FidelityRow> {
        let beta = betas[i];
        let golden = rx_gate(beta)?;
        let predicted = prop.propagate(&predict(beta)?)?;
        let optimized = match ds.and_then(|d| d.row_at(beta)) {
            Some(row) => Some(prop.propagate(&row.alpha)?),
            None => None,
        };
        Ok(FidelityRow {
            beta,
            predicted_golden: fidelity_unchecked(&predicted, &golden),
            predicted_optimized: optimized.map(|o| fidelity_unchecked(&predicted, &o)),
            optimized_golden: optimized.map(|o| fidelity_unchecked(&o, &golden)),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    FidelityReport::from_rows(name, rows, Provenance::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LutMode {
    Nearest,
    Linear,
}

/// Pulse table indexed by β, queried by rounding or interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutBaseline {
    betas: Vec<f64>,
    alphas: Vec<PulseParams>,
    pub mode: LutMode,
}

impl LutBaseline {
    pub fn new(rows: Vec<(f64, PulseParams)>, mode: LutMode) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("lookup table is empty"));
        }
        if rows.iter().any(|(b, _)| !b.is_finite()) {
            return Err(invalid("lookup table angles must be finite"));
        }
        if rows.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(invalid("lookup table angles must be strictly increasing"));
        }
        let width = rows[0].1.len();
        if rows.iter().any(|(_, a)| a.len() != width) {
            return Err(invalid("lookup table rows differ in length"));
        }
        let (betas, alphas) = rows.into_iter().unzip();
        Ok(LutBaseline {
            betas,
            alphas,
            mode,
        })
    }

    /// `entries` dataset rows spread evenly over the dataset's β range.
    pub fn from_dataset(ds: &Dataset, entries: usize, mode: LutMode) -> Result<Self> {
        if entries == 0 || entries > ds.len() {
            return Err(invalid(format!(
                "table needs between 1 and {} entries, got {entries}",
                ds.len()
            )));
        }
        let mut rows: Vec<_> = ds.rows.iter().collect();
        rows.sort_by(|a, b| a.beta.total_cmp(&b.beta));
        let (lo, hi) = (rows[0].beta, rows[rows.len() - 1].beta);
        let mut picked: Vec<usize> = Vec::with_capacity(entries);
        for k in 0..entries {
            let target = if entries == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * k as f64 / (entries - 1) as f64
            };
            let best = (0..rows.len())
                .filter(|i| !picked.contains(i))
                .min_by(|&i, &j| {
                    (rows[i].beta - target)
                        .abs()
                        .total_cmp(&(rows[j].beta - target).abs())
                })
                .expect("entries <= rows");
            picked.push(best);
        }
        picked.sort_unstable();
        LutBaseline::new(
            picked
                .into_iter()
                .map(|i| (rows[i].beta, rows[i].alpha.clone()))
                .collect(),
            mode,
        )
    }

    pub fn with_mode(&self, mode: LutMode) -> Self {
        LutBaseline {
            mode,
            ..self.clone()
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }
}

/// Table lookup at `beta`.
///
/// `Nearest` returns the row closest in β, preferring the smaller β on a
/// tie. `Linear` interpolates componentwise between the bracketing rows and
/// holds the end rows outside the table.
pub fn lut_predict(lb: &LutBaseline, beta: f64) -> Result<PulseParams> {
    if !beta.is_finite() {
        return Err(invalid(format!("beta must be finite, got {beta}")));
    }
    let b = &lb.betas;
    // first index with b[i] >= beta
    let hi = b.partition_point(|x| *x < beta);
    if hi < b.len() && b[hi] == beta {
        return Ok(lb.alphas[hi].clone());
    }
    if hi == 0 {
        return Ok(lb.alphas[0].clone());
    }
    if hi == b.len() {
        return Ok(lb.alphas[b.len() - 1].clone());
    }
    let lo = hi - 1;
    match lb.mode {
        LutMode::Nearest => {
            let pick = if beta - b[lo] <= b[hi] - beta { lo } else { hi };
            Ok(lb.alphas[pick].clone())
        }
        LutMode::Linear => {
            let t = (beta - b[lo]) / (b[hi] - b[lo]);
            let (a0, a1) = (lb.alphas[lo].to_vec(), lb.alphas[hi].to_vec());
            PulseParams::from_slice(
                &a0.iter()
                    .zip(&a1)
                    .map(|(x, y)| x + t * (y - x))
                    .collect::<Vec<_>>(),
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub beta: f64,
    pub on_table: bool,
    pub nn: f64,
    pub nearest: f64,
    pub linear: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub nn: CurveSummary,
    pub nearest: CurveSummary,
    pub linear: CurveSummary,
}

/// Surrogate against nearest-entry and interpolated lookup tables, each
/// scored by F(method, golden).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutComparison {
    pub name: String,
    pub table_betas: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
    /// Over rows whose β is not a table entry; all rows if every β is.
    pub summary: ComparisonSummary,
    pub provenance: Provenance,
}

const COMPARISON_CSV_HEADER: &str = "beta,on_table,nn,lut_nearest,lut_linear";

impl LutComparison {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{COMPARISON_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                fmt17(r.beta),
                u8::from(r.on_table),
                fmt17(r.nn),
                fmt17(r.nearest),
                fmt17(r.linear)
            );
        }
        s
    }

    pub fn rows_from_csv(text: &str) -> std::result::Result<Vec<ComparisonRow>, String> {
        csv_records(text, COMPARISON_CSV_HEADER)?
            .into_iter()
            .map(|(ln, c)| {
                Ok(ComparisonRow {
                    beta: parse_cell(c[0], ln)?,
                    on_table: match c[1].trim() {
                        "0" => false,
                        "1" => true,
                        other => return Err(format!("line {ln}: bad flag {other:?}")),
                    },
                    nn: parse_cell(c[2], ln)?,
                    nearest: parse_cell(c[3], ln)?,
                    linear: parse_cell(c[4], ln)?,
                })
            })
            .collect()
    }
}

pub fn compare_nn_vs_lut<P>(
    predict: P,
    table: &LutBaseline,
    grid: &[f64],
    pcfg: &PulseConfig,
) -> Result<LutComparison>
where
    P: Fn(f64) -> Result<PulseParams> + Sync,
{
    check_grid(grid, true)?;
    let prop = Propagator::new(pcfg)?;
    let nearest = table.with_mode(LutMode::Nearest);
    let linear = table.with_mode(LutMode::Linear);
    let betas = sorted(grid);
    let rows = run_indexed(betas.len(), 0, |i| -> Result<ComparisonRow> {
        let beta = betas[i];
        let golden = rx_gate(beta)?;
        let score = |a: PulseParams| -> Result<f64> {
            Ok(fidelity_unchecked(&prop.propagate(&a)?, &golden))
        };
        Ok(ComparisonRow {
            beta,
            on_table: table.betas.contains(&beta),
            nn: score(predict(beta)?)?,
            nearest: score(lut_predict(&nearest, beta)?)?,
            linear: score(lut_predict(&linear, beta)?)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let off: Vec<&ComparisonRow> = if rows.iter().all(|r| r.on_table) {
        rows.iter().collect()
    } else {
        rows.iter().filter(|r| !r.on_table).collect()
    };
    let summary = |f: fn(&ComparisonRow) -> f64| {
        CurveSummary::of(off.iter().map(|r| f(r))).expect("grid is nonempty")
    };
    Ok(LutComparison {
        name: "lut-comparison".into(),
        table_betas: table.betas.clone(),
        summary: ComparisonSummary {
            nn: summary(|r| r.nn),
            nearest: summary(|r| r.nearest),
            linear: summary(|r| r.linear),
        },
        rows,
        provenance: Provenance::default(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochPoint {
    pub t: f64,
    pub pulse: [f64; 3],
    /// Same instant on the ideal path `Rx(β·t/T)|0⟩`.
    pub golden: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochTrack {
    pub name: String,
    pub beta: f64,
    pub points: Vec<BlochPoint>,
    /// `|⟨ψ_target|ψ(T)⟩|²` starting from |0⟩.
    pub final_overlap: f64,
    pub provenance: Provenance,
}

const BLOCH_CSV_HEADER: &str = "t,x,y,z,golden_x,golden_y,golden_z";

impl BlochTrack {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{BLOCH_CSV_HEADER}\n");
        for p in &self.points {
            let _ = write!(s, "{}", fmt17(p.t));
            for v in p.pulse.iter().chain(&p.golden) {
                let _ = write!(s, ",{}", fmt17(*v));
            }
            s.push('\n');
        }
        s
    }

    pub fn points_from_csv(text: &str) -> std::result::Result<Vec<BlochPoint>, String> {
        csv_records(text, BLOCH_CSV_HEADER)?
            .into_iter()
            .map(|(ln, c)| {
                let v = c
                    .iter()
                    .map(|x| parse_cell(x, ln))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Ok(BlochPoint {
                    t: v[0],
                    pulse: [v[1], v[2], v[3]],
                    golden: [v[4], v[5], v[6]],
                })
            })
            .collect()
    }
}

/// Bloch-sphere path of |0⟩ under `alpha`, alongside the great circle traced
/// by the ideal rotation.
pub fn bloch_export(
    alpha: &PulseParams,
    beta: f64,
    pcfg: &PulseConfig,
    samples: usize,
) -> Result<BlochTrack> {
    let prop = Propagator::new(pcfg)?;
    let traj = prop.trajectory(alpha, &QubitState::GROUND, samples)?;
    let target = rx_gate(beta)?.apply(&QubitState::GROUND);
    let points = traj
        .iter()
        .map(|(t, s)| {
            let ideal = rx_gate(beta * t / pcfg.duration)?.apply(&QubitState::GROUND);
            Ok(BlochPoint {
                t: *t,
                pulse: bloch_coords(s)?,
                golden: bloch_coords(&ideal)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let last = traj.last().expect("samples >= 2").1;
    Ok(BlochTrack {
        name: "bloch".into(),
        beta,
        points,
        final_overlap: target.overlap(&last),
        provenance: Provenance::default(),
    })
}

/// Pass/fail limits checked when reports are written.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Lower bound on every F(predicted, golden).
    pub min_predicted_golden: Option<f64>,
    /// Lower bound on every F(optimized, golden).
    pub min_optimized_golden: Option<f64>,
    /// Upper bound on test-split MSE in normalized units.
    pub max_test_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub report: String,
    pub metric: String,
    pub threshold: f64,
    pub observed: f64,
    /// β of the worst offending row, when the metric is per-angle.
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Fidelity(FidelityReport),
    Comparison(LutComparison),
    Bloch(BlochTrack),
}

impl Report {
    pub fn name(&self) -> &str {
        match self {
            Report::Fidelity(r) => &r.name,
            Report::Comparison(r) => &r.name,
            Report::Bloch(r) => &r.name,
        }
    }

    pub fn violations(&self, th: &Thresholds) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut worst =
            |metric: &str, limit: Option<f64>, vals: &mut dyn Iterator<Item = (f64, f64)>| {
                let Some(limit) = limit else { return };
                let min = vals.min_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((beta, v)) = min.filter(|(_, v)| *v < limit) {
                    out.push(Violation {
                        report: self.name().to_string(),
                        metric: metric.into(),
                        threshold: limit,
                        observed: v,
                        beta: Some(beta),
                    });
                }
            };
        match self {
            Report::Fidelity(r) => {
                worst(
                    "predicted_golden",
                    th.min_predicted_golden,
                    &mut r.rows.iter().map(|x| (x.beta, x.predicted_golden)),
                );
                worst(
                    "optimized_golden",
                    th.min_optimized_golden,
                    &mut r
                        .rows
                        .iter()
                        .filter_map(|x| x.optimized_golden.map(|v| (x.beta, v))),
                );
                if let (Some(limit), Some(m)) = (th.max_test_mse, r.mse) {
                    // NaN counts as a violation
                    #[allow(clippy::neg_cmp_op_on_partial_ord)]
                    if !(m.test <= limit) {
                        out.push(Violation {
                            report: r.name.clone(),
                            metric: "test_mse".into(),
                            threshold: limit,
                            observed: m.test,
                            beta: None,
                        });
                    }
                }
            }
            Report::Comparison(r) => worst(
                "nn_golden",
                th.min_predicted_golden,
                &mut r.rows.iter().map(|x| (x.beta, x.nn)),
            ),
            Report::Bloch(_) => {}
        }
        out
    }
}

/// Files written by [`emit_report`] and any threshold violations found.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmitOutcome {
    pub files: Vec<PathBuf>,
    pub violations: Vec<Violation>,
}

impl EmitOutcome {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Serialize)]
struct JsonEnvelope<'a, T: Serialize> {
    run_id: &'a str,
    #[serde(flatten)]
    report: &'a T,
    violations: &'a [Violation],
}

fn write_file(path: &Path, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    files.push(path.to_path_buf());
    Ok(())
}

/// Writes `<run_id>-<name>.csv` and `.json` for each report, plus an `.svg`
/// chart for fidelity curves and lookup-table comparisons.
pub fn emit_report(
    dir: &Path,
    run_id: &str,
    reports: &[Report],
    thresholds: &Thresholds,
) -> Result<EmitOutcome> {
    let mut outcome = EmitOutcome::default();
    if reports.is_empty() {
        return Ok(outcome);
    }
    if run_id.is_empty() || run_id.contains(['/', '\\']) {
        return Err(invalid(format!(
            "run id {run_id:?} is not a valid file stem"
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for report in reports {
        let stem = format!("{run_id}-{}", report.name());
        let violations = report.violations(thresholds);
        let with = |ext: &str| dir.join(format!("{stem}.{ext}"));
        let files = &mut outcome.files;
        let json = |value: &dyn erased::Json| value.to_json(run_id, &violations);
        match report {
            Report::Fidelity(r) => {
                write_file(&with("csv"), &r.to_csv(), files)?;
                write_file(&with("json"), &json(r), files)?;
                let mut series = vec![(
                    "F(predicted, golden)",
                    r.rows
                        .iter()
                        .map(|x| (x.beta, x.predicted_golden))
                        .collect(),
                )];
                if r.summary.optimized_golden.is_some() {
                    series.push((
                        "F(predicted, optimized)",
                        r.rows
                            .iter()
                            .filter_map(|x| x.predicted_optimized.map(|v| (x.beta, v)))
                            .collect(),
                    ));
                    series.push((
                        "F(optimized, golden)",
                        r.rows
                            .iter()
                            .filter_map(|x| x.optimized_golden.map(|v| (x.beta, v)))
                            .collect(),
                    ));
                }
                write_file(&with("svg"), &svg_chart(&r.name, &series), files)?;
            }
            Report::Comparison(r) => {
                write_file(&with("csv"), &r.to_csv(), files)?;
                write_file(&with("json"), &json(r), files)?;
                let series: Vec<(&str, Vec<(f64, f64)>)> = vec![
                    ("NN", r.rows.iter().map(|x| (x.beta, x.nn)).collect()),
                    (
                        "LUT nearest",
                        r.rows.iter().map(|x| (x.beta, x.nearest)).collect(),
                    ),
                    (
                        "LUT linear",
                        r.rows.iter().map(|x| (x.beta, x.linear)).collect(),
                    ),
                ];
                write_file(&with("svg"), &svg_chart(&r.name, &series), files)?;
            }
            Report::Bloch(r) => {
                write_file(&with("csv"), &r.to_csv(), files)?;
                write_file(&with("json"), &json(r), files)?;
            }
        }
        outcome.violations.extend(violations);
    }
    Ok(outcome)
}

mod erased {
    use super::{JsonEnvelope, Violation};

    /// Object-safe JSON rendering with the run id and violations attached.
    pub trait Json {
        fn to_json(&self, run_id: &str, violations: &[Violation]) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self, run_id: &str, violations: &[Violation]) -> String {
            serde_json::to_string_pretty(&JsonEnvelope {
                run_id,
                report: self,
                violations,
            })
            .expect("report serializes")
        }
    }
}

const SVG_COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Standalone line chart, x = β in radians, y = fidelity.
pub fn svg_chart(title: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let pts = || series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1) = (-std::f64::consts::PI, std::f64::consts::PI);
    for (x, _) in pts() {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
    }
    let ymin = pts().map(|p| p.1).fold(1.0f64, f64::min);
    let y1 = 1.0;
    let y0 = if ymin >= 1.0 {
        0.99
    } else {
        ymin - 0.05 * (1.0 - ymin)
    };
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let sy = |y: f64| T + (y1 - y) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        W - L - R,
        H - T - B
    );
    for k in 0..=4 {
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        let py = sy(y);
        let _ = writeln!(
            s,
            r##"<line x1="{L}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{y:.5}</text>"##,
            W - R,
            L - 6.0,
            py + 4.0
        );
    }
    for k in -2..=2 {
        let x = k as f64 * std::f64::consts::FRAC_PI_2;
        if x < x0 || x > x1 {
            continue;
        }
        let label = ["-π", "-π/2", "0", "π/2", "π"][(k + 2) as usize];
        let px = sx(x);
        let _ = writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{T}" x2="{px:.2}" y2="{:.2}" stroke="#ddd"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{label}</text>"##,
            H - B,
            H - B + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">β (rad)</text>"#,
        L + (W - L - R) / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">gate fidelity</text>"#,
        T + (H - T - B) / 2.0,
        T + (H - T - B) / 2.0
    );
    for (i, (label, points)) in series.iter().enumerate() {
        let color = SVG_COLORS[i % SVG_COLORS.len()];
        let path = points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            s,
            r#"<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
        );
        let ly = T + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            L + 12.0,
            L + 36.0,
            L + 42.0,
            ly + 4.0,
            xml_escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
