mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pulsenn::dataset::{beta_grid, generate_dataset_with_jobs, split_dataset, Dataset, Split};
use pulsenn::error::Error;
use pulsenn::eval::{
    bloch_export, compare_nn_vs_lut, emit_report, fidelity_curve, file_sha256, split_mse, Engine,
    LutBaseline, LutMode, MseSummary, Provenance, Report,
};
use pulsenn::fixed::{self, quantize_model, quantized_infer, resource_report, QuantizedModel};
use pulsenn::mlp::{fine_tune_qat, mlp_forward, train, MlpModel, TrainConfig};
use pulsenn::pulse::PulseParams;

use config::{ModelChoice, RunConfig};

#[derive(Parser)]
#[command(
    name = "pulsenn",
    version,
    about = "Optimal X-rotation pulses and their neural surrogates"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed for optimization, splitting and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Optimize pulses over a β grid and write the split dataset.
    Gen(GenArgs),
    /// Train the surrogate network (quantization-aware with --preset).
    Train(TrainArgs),
    /// Convert a trained model to fixed point and estimate multipliers.
    Quantize(QuantizeArgs),
    /// Fidelity curves and MSE of a float or quantized model.
    Eval(EvalArgs),
    /// Compare the model against nearest-entry and interpolated lookup tables.
    CompareLut(CompareArgs),
    /// Export the Bloch-sphere path of |0> under a pulse.
    Bloch(BlochArgs),
    /// Print the effective configuration as JSON.
    Config,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_name = "CSV")]
    dataset: Option<PathBuf>,
    /// Architecture preset (forward, compact, wide).
    #[arg(long)]
    arch: Option<String>,
    /// Quantization preset; enables quantization-aware training.
    #[arg(long)]
    preset: Option<String>,
    /// Epoch cap; also lowers the early-stopping patience below it.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long, value_name = "JSON")]
    model: Option<PathBuf>,
    /// genesys16, ultra96, arty-mixed, or `model` for the formats the model
    /// was trained with.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Float,
    Quantized,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args)]
struct ModelInputs {
    #[arg(long, value_enum, default_value = "float")]
    engine: EngineArg,
    #[arg(long, value_name = "CSV")]
    dataset: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    model: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    quantized: Option<PathBuf>,
}

#[derive(Args)]
struct ReportOutput {
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Prefix for report file names.
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    inputs: ModelInputs,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Leave the k smallest angles out of the report.
    #[arg(long, value_name = "K")]
    drop_smallest: Option<usize>,
    #[command(flatten)]
    output: ReportOutput,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    inputs: ModelInputs,
    /// Lookup-table size, drawn evenly from the dataset.
    #[arg(long)]
    entries: Option<usize>,
    /// Points of the uniform evaluation grid over [-π, π].
    #[arg(long)]
    grid_size: Option<usize>,
    #[command(flatten)]
    output: ReportOutput,
}

#[derive(Clone, Copy, ValueEnum)]
enum PulseSource {
    /// Surrogate prediction (see --engine).
    Model,
    /// Dataset row with the closest angle.
    Dataset,
}

#[derive(Args)]
struct BlochArgs {
    #[arg(long, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, value_enum, default_value = "model")]
    source: PulseSource,
    #[command(flatten)]
    inputs: ModelInputs,
    #[arg(long)]
    samples: Option<usize>,
    #[command(flatten)]
    output: ReportOutput,
}

enum Failure {
    Usage(String),
    Threshold(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Threshold(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Threshold(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidArgument(_) => Failure::Usage(msg),
            Error::Unconverged { .. } | Error::Diverged { .. } => Failure::Threshold(msg),
            Error::Io { .. } | Error::Parse { .. } => Failure::Io(msg),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| {
            if p.exists() {
                Failure::Usage(e)
            } else {
                Failure::Io(e)
            }
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    let cfg = cfg.seeded();
    if cfg.jobs > 0 {
        // ignore the error raised when a pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global();
    }
    match cli.cmd {
        Cmd::Gen(a) => cmd_gen(cfg, a),
        Cmd::Train(a) => cmd_train(cfg, a),
        Cmd::Quantize(a) => cmd_quantize(cfg, a),
        Cmd::Eval(a) => cmd_eval(cfg, a),
        Cmd::CompareLut(a) => cmd_compare_lut(cfg, a),
        Cmd::Bloch(a) => cmd_bloch(cfg, a),
        Cmd::Config => {
            println!(
                "{}",
                serde_json::to_string_pretty(&cfg).expect("config serializes")
            );
            Ok(())
        }
    }
}

fn require(path: &Path, hint: &str) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Io(format!(
            "missing input file {} ({hint})",
            path.display()
        )))
    }
}

fn ensure_parent(path: &Path) -> Outcome {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))
        }
        _ => Ok(()),
    }
}

fn hash(path: &Path) -> Result<String, Failure> {
    file_sha256(path).map_err(Failure::from)
}

fn load_dataset(path: &Path) -> Result<(Dataset, String), Failure> {
    require(path, "run `pulsenn gen` first")?;
    let ds = Dataset::load(path)?;
    Ok((ds, hash(path)?))
}

fn cmd_gen(mut cfg: RunConfig, a: GenArgs) -> Outcome {
    if let Some(n) = a.grid_size {
        cfg.grid_size = n;
    }
    let out = a.out.unwrap_or(cfg.paths.dataset.clone());
    let raw = generate_dataset_with_jobs(cfg.grid_size, &cfg.optimizer, &cfg.pulse, cfg.jobs)?;
    let [ft, fv, fs] = cfg.split;
    let ds = split_dataset(&raw, (ft, fv, fs), cfg.seed)?;
    ensure_parent(&out)?;
    ds.save(&out)?;
    let worst = ds.rows.iter().map(|r| r.fidelity).fold(1.0, f64::min);
    println!(
        "wrote {} rows to {} (train {}, val {}, test {}); min fidelity {worst:.6}; alpha_scale {:.6e}",
        ds.len(),
        out.display(),
        ds.split_count(Split::Train),
        ds.split_count(Split::Val),
        ds.split_count(Split::Test),
        ds.meta.alpha_scale
    );
    Ok(())
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> Outcome {
    if let Some(arch) = a.arch {
        cfg.model = ModelChoice::Preset(arch);
    }
    if a.preset.is_some() {
        cfg.preset = a.preset;
    }
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
        cfg.train.patience = cfg.train.patience.min(e.saturating_sub(1));
    }
    let ds_path = a.dataset.unwrap_or(cfg.paths.dataset.clone());
    let out = a.out.unwrap_or(cfg.paths.model.clone());
    let (ds, ds_hash) = load_dataset(&ds_path)?;
    let spec = cfg.model.spec()?;
    let float = train(&spec, &ds, &cfg.train)?;
    let mut model = match &cfg.preset {
        Some(p) => {
            let formats = fixed::preset_formats(p, spec.layer_count())?;
            let qat = TrainConfig {
                learning_rate: cfg.qat_learning_rate,
                ..cfg.train.clone()
            };
            println!(
                "float model: {} epochs, test mse {}; fine-tuning with {p} formats",
                float.report.epochs,
                float
                    .report
                    .test_mse
                    .map_or("n/a".into(), |v| format!("{v:.3e}"))
            );
            fine_tune_qat(&float, formats, &ds, &qat)?
        }
        None => float,
    };
    model.inputs.insert("dataset".into(), ds_hash);
    ensure_parent(&out)?;
    model.save(&out)?;
    let r = &model.report;
    println!(
        "trained {} ({} parameters{}) in {} epochs, best {}; mse train {:.3e} val {:.3e} test {}",
        model.spec.name,
        model.param_count(),
        cfg.preset
            .as_deref()
            .map(|p| format!(", QAT {p}"))
            .unwrap_or_default(),
        r.epochs,
        r.best_epoch,
        r.train_mse,
        r.val_mse,
        r.test_mse.map_or("n/a".into(), |v| format!("{v:.3e}"))
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_quantize(cfg: RunConfig, a: QuantizeArgs) -> Outcome {
    let model_path = a.model.unwrap_or(cfg.paths.model.clone());
    let out = a.out.unwrap_or(cfg.paths.quantized.clone());
    require(&model_path, "run `pulsenn train` first")?;
    let model = MlpModel::load(&model_path)?;
    let preset = a.preset.or(cfg.preset).unwrap_or_else(|| {
        if model.spec.quantization.is_some() {
            "model"
        } else {
            "arty-mixed"
        }
        .into()
    });
    let mut qm = quantize_model(&model, &preset)?;
    qm.inputs.insert("model".into(), hash(&model_path)?);
    let resources = resource_report(&qm);
    let res_path = out.with_extension("resources.json");
    ensure_parent(&out)?;
    qm.save(&out)?;
    let text = serde_json::to_string_pretty(&resources).expect("report serializes");
    std::fs::write(&res_path, text)
        .map_err(|e| Failure::Io(format!("{}: {e}", res_path.display())))?;
    print!("{resources}");
    println!("wrote {} and {}", out.display(), res_path.display());
    Ok(())
}

/// Predictor over β plus provenance for the chosen engine.
struct Predictor {
    float: Option<MlpModel>,
    quantized: Option<QuantizedModel>,
    provenance: Provenance,
}

impl Predictor {
    fn load(cfg: &RunConfig, inputs: &ModelInputs, ds_hash: Option<&str>) -> Result<Self, Failure> {
        let mut p = Predictor {
            float: None,
            quantized: None,
            provenance: Provenance {
                dataset_sha256: ds_hash.map(str::to_string),
                seed: Some(cfg.seed),
                ..Provenance::default()
            },
        };
        let recorded = match inputs.engine {
            EngineArg::Float => {
                let path = inputs.model.clone().unwrap_or(cfg.paths.model.clone());
                require(&path, "run `pulsenn train` first")?;
                let m = MlpModel::load(&path)?;
                p.provenance.model_sha256 = Some(hash(&path)?);
                p.provenance.engine = Some(Engine::Float);
                let rec = m.inputs.get("dataset").cloned();
                p.float = Some(m);
                rec
            }
            EngineArg::Quantized => {
                let path = inputs
                    .quantized
                    .clone()
                    .unwrap_or(cfg.paths.quantized.clone());
                require(&path, "run `pulsenn quantize` first")?;
                let m = QuantizedModel::load(&path)?;
                p.provenance.model_sha256 = Some(hash(&path)?);
                p.provenance.engine = Some(Engine::Quantized);
                let rec = m.inputs.get("dataset").cloned();
                p.quantized = Some(m);
                rec
            }
        };
        if let (Some(rec), Some(now)) = (recorded, ds_hash) {
            if rec != now {
                let w = format!(
                    "dataset hash {now} differs from the one the model was trained on ({rec})"
                );
                eprintln!("warning: {w}");
                p.provenance.warnings.push(w);
            }
        }
        Ok(p)
    }

    fn predict(&self, beta: f64) -> pulsenn::error::Result<PulseParams> {
        match (&self.float, &self.quantized) {
            (Some(m), _) => mlp_forward(m, beta),
            (_, Some(q)) => quantized_infer(q, beta),
            _ => unreachable!("predictor holds one model"),
        }
    }

    fn alpha_scale(&self) -> f64 {
        match (&self.float, &self.quantized) {
            (Some(m), _) => m.alpha_scale,
            (_, Some(q)) => q.alpha_scale,
            _ => unreachable!("predictor holds one model"),
        }
    }

    fn engine(&self) -> &'static str {
        self.provenance.engine.map_or("float", Engine::as_str)
    }
}

fn emit(cfg: &RunConfig, output: ReportOutput, default_id: String, report: Report) -> Outcome {
    let dir = output.out_dir.unwrap_or(cfg.paths.reports.clone());
    let run_id = output.run_id.unwrap_or(default_id);
    let out = emit_report(&dir, &run_id, &[report], &cfg.thresholds)?;
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    if out.passed() {
        return Ok(());
    }
    let lines: Vec<String> = out
        .violations
        .iter()
        .map(|v| {
            format!(
                "{} {} = {:.6} violates threshold {}{}",
                v.report,
                v.metric,
                v.observed,
                v.threshold,
                v.beta
                    .map(|b| format!(" at beta = {b:.6}"))
                    .unwrap_or_default()
            )
        })
        .collect();
    Err(Failure::Threshold(lines.join("; ")))
}

fn cmd_eval(mut cfg: RunConfig, a: EvalArgs) -> Outcome {
    if let Some(k) = a.drop_smallest {
        cfg.drop_smallest = k;
    }
    let ds_path = a
        .inputs
        .dataset
        .clone()
        .unwrap_or(cfg.paths.dataset.clone());
    let (ds, ds_hash) = load_dataset(&ds_path)?;
    let pred = Predictor::load(&cfg, &a.inputs, Some(&ds_hash))?;
    let (split_name, grid): (&str, Vec<f64>) = match a.split {
        SplitArg::All => ("all", ds.rows.iter().map(|r| r.beta).collect()),
        SplitArg::Train => (
            "train",
            ds.split_rows(Split::Train).map(|r| r.beta).collect(),
        ),
        SplitArg::Val => ("val", ds.split_rows(Split::Val).map(|r| r.beta).collect()),
        SplitArg::Test => ("test", ds.split_rows(Split::Test).map(|r| r.beta).collect()),
    };
    let name = format!("fidelity-{}-{split_name}", pred.engine());
    let mut report = fidelity_curve(&name, |b| pred.predict(b), Some(&ds), &grid, &cfg.pulse)?;
    if cfg.drop_smallest > 0 {
        report = report.without_smallest(cfg.drop_smallest)?;
    }
    let scale = pred.alpha_scale();
    let mse = |s| split_mse(|b| pred.predict(b), &ds, s, scale);
    report.mse = Some(MseSummary {
        train: mse(Split::Train)?,
        val: mse(Split::Val)?,
        test: mse(Split::Test)?,
    });
    report.provenance = pred.provenance.clone();
    let s = &report.summary;
    println!(
        "{name}: {} angles; F(pred, golden) min {:.6} mean {:.6}",
        report.rows.len(),
        s.predicted_golden.min,
        s.predicted_golden.mean
    );
    if let (Some(po), Some(og)) = (s.predicted_optimized, s.optimized_golden) {
        println!(
            "  F(pred, opt) min {:.6} mean {:.6}; F(opt, golden) min {:.6} mean {:.6}",
            po.min, po.mean, og.min, og.mean
        );
    }
    let m = report.mse.expect("set above");
    println!(
        "  mse train {:.3e} val {:.3e} test {:.3e}",
        m.train, m.val, m.test
    );
    let id = format!("eval-s{}", cfg.seed);
    emit(&cfg, a.output, id, Report::Fidelity(report))
}

fn cmd_compare_lut(mut cfg: RunConfig, a: CompareArgs) -> Outcome {
    if let Some(n) = a.entries {
        cfg.lut_entries = n;
    }
    if let Some(n) = a.grid_size {
        cfg.eval_grid_size = n;
    }
    let ds_path = a
        .inputs
        .dataset
        .clone()
        .unwrap_or(cfg.paths.dataset.clone());
    let (ds, ds_hash) = load_dataset(&ds_path)?;
    let pred = Predictor::load(&cfg, &a.inputs, Some(&ds_hash))?;
    let table = LutBaseline::from_dataset(&ds, cfg.lut_entries, LutMode::Nearest)?;
    let mut cmp = compare_nn_vs_lut(
        |b| pred.predict(b),
        &table,
        &beta_grid(cfg.eval_grid_size),
        &cfg.pulse,
    )?;
    cmp.provenance = pred.provenance.clone();
    let s = &cmp.summary;
    println!(
        "{}-entry table, {} angles: min/mean F(., golden)  NN {:.6}/{:.6}  nearest {:.6}/{:.6}  linear {:.6}/{:.6}",
        table.len(),
        cmp.rows.len(),
        s.nn.min,
        s.nn.mean,
        s.nearest.min,
        s.nearest.mean,
        s.linear.min,
        s.linear.mean
    );
    let id = format!("compare-lut-{}-s{}", pred.engine(), cfg.seed);
    emit(&cfg, a.output, id, Report::Comparison(cmp))
}

fn cmd_bloch(mut cfg: RunConfig, a: BlochArgs) -> Outcome {
    if let Some(n) = a.samples {
        cfg.bloch_samples = n;
    }
    let (alpha, provenance, label) = match a.source {
        PulseSource::Model => {
            let pred = Predictor::load(&cfg, &a.inputs, None)?;
            (
                pred.predict(a.beta)?,
                pred.provenance.clone(),
                pred.engine(),
            )
        }
        PulseSource::Dataset => {
            let ds_path = a
                .inputs
                .dataset
                .clone()
                .unwrap_or(cfg.paths.dataset.clone());
            let (ds, ds_hash) = load_dataset(&ds_path)?;
            let row = ds
                .rows
                .iter()
                .min_by(|x, y| (x.beta - a.beta).abs().total_cmp(&(y.beta - a.beta).abs()))
                .ok_or_else(|| Failure::Usage("dataset is empty".into()))?;
            if row.beta != a.beta {
                eprintln!("using dataset row at beta = {}", row.beta);
            }
            let prov = Provenance {
                dataset_sha256: Some(ds_hash),
                seed: Some(cfg.seed),
                ..Provenance::default()
            };
            (row.alpha.clone(), prov, "dataset")
        }
    };
    let mut track = bloch_export(&alpha, a.beta, &cfg.pulse, cfg.bloch_samples)?;
    track.provenance = provenance;
    track.name = format!("bloch-{label}");
    let end = track.points.last().expect("at least two samples");
    println!(
        "final state ({:.6}, {:.6}, {:.6}); overlap with Rx(beta)|0> {:.9}",
        end.pulse[0], end.pulse[1], end.pulse[2], track.final_overlap
    );
    emit(
        &cfg,
        a.output,
        format!("bloch-{:.4}", a.beta),
        Report::Bloch(track),
    )
}
