//! Command-line front end: training, evaluation, embedding export,
//! complex inspection, grid search, and ablations.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use high_ts::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use high_ts::config::{ConfigError, TrainConfig};
use high_ts::data::{load_pair, split_train_val, synthetic_sine_vs_noise, znormalize, DataError, Dataset};
use high_ts::eval::{
    davies_bouldin, evaluate_accuracy, export_embeddings, write_atomic, EvalError, MetricsReport,
};
use high_ts::model::{Model, ModelError};
use high_ts::simplicial::build_complex;
use high_ts::train::{ablate, fit, grid_search, FitResult, GridSpec, TrainError};

/// The built-in dataset name; everything else is loaded from --data-dir.
const SYNTHETIC: &str = "synthetic";
/// The generator seed is fixed so train/eval/embed all see the same data
/// regardless of the training seed.
const SYNTHETIC_DATA_SEED: u64 = 9;
const SYNTHETIC_TRAIN: usize = 200;
const SYNTHETIC_TEST: usize = 100;
const SYNTHETIC_LEN: usize = 128;

#[derive(Parser)]
#[command(
    name = "high-ts",
    about = "Train and evaluate the fused temporal/simplicial time-series classifier",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Directory holding <name>/<name>_TRAIN.tsv and <name>/<name>_TEST.tsv
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Dataset name, or "synthetic" for the built-in generator
    #[arg(long, default_value = SYNTHETIC)]
    dataset: String,
    /// Flat key=value settings file; command-line flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated segment lengths, e.g. 1,2,3
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    #[arg(long)]
    vertices: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    contrast_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    mp_layers: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    cutoff_frac: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit on the training split and report test accuracy over seeds
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// How many consecutive seeds to run, starting at the configured one
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Where to write the JSON metrics report
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to save the best-validation model
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a saved model on a dataset's test split
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export fused test-set representations as CSV
    Embed {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Report each training sample's complex size and similarity cutoff
    InspectComplex {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit every vertex-count/latent-dimension cell and rank them
    Gridsearch {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the full model and its seven reduced variants
    Ablate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum AppError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl AppError {
    fn code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Usage(e.to_string())
    }
}

impl From<DataError> for AppError {
    fn from(e: DataError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<ModelError> for AppError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(c) => c.into(),
            // Bad knob/data combinations (scale or patch count vs length).
            ModelError::Temporal(_) | ModelError::Spatial(_) | ModelError::Complex(_) => {
                AppError::Usage(e.to_string())
            }
            ModelError::NoSpatialBranch => AppError::Usage(e.to_string()),
            ModelError::TooFewClasses(_)
            | ModelError::EmptyBatch
            | ModelError::LengthMismatch { .. }
            | ModelError::TensorShapeMismatch { .. }
            | ModelError::MissingTensor(_)
            | ModelError::UnexpectedTensor(_) => AppError::Data(e.to_string()),
            ModelError::Objective(_)
            | ModelError::Tensor(_)
            | ModelError::NonFiniteOutput { .. } => AppError::Numeric(e.to_string()),
        }
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::EmptyTestSet | EvalError::TooFewClasses(_) | EvalError::Io { .. } => {
                AppError::Data(e.to_string())
            }
            EvalError::CountMismatch { .. } | EvalError::RaggedEmbeddings => {
                AppError::Numeric(e.to_string())
            }
        }
    }
}

impl From<TrainError> for AppError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Eval(ev) => ev.into(),
            TrainError::EmptyTrainSet | TrainError::EmptyValidationSet => {
                AppError::Data(e.to_string())
            }
            TrainError::EmptyGrid => AppError::Usage(e.to_string()),
            TrainError::Tensor(_)
            | TrainError::NonFiniteGrad(_)
            | TrainError::NonFiniteLoss { .. }
            | TrainError::GradCountMismatch { .. }
            | TrainError::AllCellsFailed(_) => AppError::Numeric(e.to_string()),
        }
    }
}

impl From<CheckpointError> for AppError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Model(m) => m.into(),
            other => AppError::Data(other.to_string()),
        }
    }
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let kind = err.kind();
            if kind == ErrorKind::DisplayHelp || kind == ErrorKind::DisplayVersion {
                print!("{err}");
                return 0;
            }
            eprint!("{err}");
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), AppError> {
    match command {
        Command::Train {
            common,
            seeds,
            out,
            checkpoint,
        } => cmd_train(&common, seeds, out.as_deref(), checkpoint.as_deref()),
        Command::Eval {
            common,
            checkpoint,
            out,
        } => cmd_eval(&common, &checkpoint, out.as_deref()),
        Command::Embed {
            common,
            checkpoint,
            out,
        } => cmd_embed(&common, &checkpoint, &out),
        Command::InspectComplex { common, out } => cmd_inspect(&common, out.as_deref()),
        Command::Gridsearch { common, out } => cmd_gridsearch(&common, out.as_deref()),
        Command::Ablate { common, out } => cmd_ablate(&common, out.as_deref()),
    }
}

/// Defaults, then the config file, then command-line flags.
fn resolve_config(common: &CommonOpts) -> Result<TrainConfig, AppError> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| {
            AppError::Usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        cfg.apply_file(&text)?;
    }
    if let Some(v) = &common.scales {
        cfg.scales = v.clone();
    }
    if let Some(v) = common.vertices {
        cfg.vertices = v;
    }
    if let Some(v) = common.latent_dim {
        cfg.latent_dim = v;
    }
    if let Some(v) = common.contrast_dim {
        cfg.contrast_dim = v;
    }
    if let Some(v) = common.heads {
        cfg.heads = v;
    }
    if let Some(v) = common.mp_layers {
        cfg.mp_layers = v;
    }
    if let Some(v) = common.tau {
        cfg.tau = v;
    }
    if let Some(v) = common.lr {
        cfg.lr = v;
    }
    if let Some(v) = common.batch {
        cfg.batch = v;
    }
    if let Some(v) = common.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = common.patience {
        cfg.patience = v;
    }
    if let Some(v) = common.cutoff_frac {
        cfg.cutoff_frac = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// (train, test) pair, z-normalized when the config asks for it.
fn load_dataset(common: &CommonOpts, cfg: &TrainConfig) -> Result<(Dataset, Dataset), AppError> {
    let (train, test) = if common.dataset == SYNTHETIC {
        synthetic_sine_vs_noise(
            SYNTHETIC_TRAIN,
            SYNTHETIC_TEST,
            SYNTHETIC_LEN,
            SYNTHETIC_DATA_SEED,
        )
    } else {
        let dir = common.data_dir.join(&common.dataset);
        let train_path = dir.join(format!("{}_TRAIN.tsv", common.dataset));
        let test_path = dir.join(format!("{}_TEST.tsv", common.dataset));
        load_pair(&train_path, &test_path)?
    };
    if cfg.znormalize {
        Ok((znormalize(&train), znormalize(&test)))
    } else {
        Ok((train, test))
    }
}

fn dbi_of_model(model: &Model, test: &Dataset) -> Result<f64, AppError> {
    let refs: Vec<&[f64]> = test.samples.iter().map(|s| s.values.as_slice()).collect();
    let embeddings = model.embed(&refs)?;
    let labels: Vec<usize> = test.samples.iter().map(|s| s.label).collect();
    match davies_bouldin(&embeddings, &labels) {
        Ok(v) => Ok(v),
        // A single-class test set has no separation to measure.
        Err(EvalError::TooFewClasses(_)) => Ok(f64::NAN),
        Err(e) => Err(e.into()),
    }
}

fn emit(report_json: String, summary: String, out: Option<&std::path::Path>) -> Result<(), AppError> {
    if let Some(path) = out {
        write_atomic(path, report_json.as_bytes())?;
    }
    print!("{summary}");
    Ok(())
}

fn cmd_train(
    common: &CommonOpts,
    seeds: usize,
    out: Option<&std::path::Path>,
    checkpoint: Option<&std::path::Path>,
) -> Result<(), AppError> {
    if seeds == 0 {
        return Err(AppError::Usage("--seeds must be at least 1".to_string()));
    }
    let start = Instant::now();
    let cfg = resolve_config(common)?;
    let (train_all, test) = load_dataset(common, &cfg)?;
    let mut seed_list = Vec::with_capacity(seeds);
    let mut accuracies = Vec::with_capacity(seeds);
    let mut best: Option<FitResult> = None;
    for i in 0..seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed + i as u64;
        let split = split_train_val(&train_all, run_cfg.val_frac, run_cfg.seed)?;
        let result = fit(&split.train, &split.val, &run_cfg)?;
        let accuracy = evaluate_accuracy(&result.model, &test)?;
        seed_list.push(run_cfg.seed);
        accuracies.push(accuracy);
        // Earlier seeds win validation ties, so reruns pick the same model.
        if best
            .as_ref()
            .is_none_or(|b| result.best_val_accuracy > b.best_val_accuracy)
        {
            best = Some(result);
        }
    }
    let best = best.expect("at least one seed ran");
    let dbi = dbi_of_model(&best.model, &test)?;
    let report = MetricsReport::new(
        &common.dataset,
        seed_list,
        accuracies,
        dbi,
        cfg,
        start.elapsed().as_secs_f64(),
    );
    if let Some(path) = checkpoint {
        let ckpt = Checkpoint::from_model(&best.model, best.best_val_accuracy);
        save_checkpoint(path, &ckpt)?;
    }
    emit(report.to_json(), report.summary(), out)
}

fn cmd_eval(
    common: &CommonOpts,
    checkpoint: &std::path::Path,
    out: Option<&std::path::Path>,
) -> Result<(), AppError> {
    let start = Instant::now();
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.to_model()?;
    let cfg = ckpt.meta.config.clone();
    let (_, test) = load_dataset(common, &cfg)?;
    let accuracy = evaluate_accuracy(&model, &test)?;
    let dbi = dbi_of_model(&model, &test)?;
    let report = MetricsReport::new(
        &common.dataset,
        vec![ckpt.meta.seed],
        vec![accuracy],
        dbi,
        cfg,
        start.elapsed().as_secs_f64(),
    );
    emit(report.to_json(), report.summary(), out)
}

fn cmd_embed(
    common: &CommonOpts,
    checkpoint: &std::path::Path,
    out: &std::path::Path,
) -> Result<(), AppError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.to_model()?;
    let (_, test) = load_dataset(common, &ckpt.meta.config)?;
    export_embeddings(&model, &test, out)?;
    println!(
        "wrote {} embeddings of width {} to {}",
        test.len(),
        model.fused_dim(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ComplexRecord {
    index: usize,
    label: usize,
    vertices: usize,
    edges: usize,
    triangles: usize,
    cutoff: f64,
}

#[derive(Serialize)]
struct ComplexReport {
    dataset: String,
    vertices: usize,
    cutoff_frac: f64,
    records: Vec<ComplexRecord>,
}

fn cmd_inspect(common: &CommonOpts, out: Option<&std::path::Path>) -> Result<(), AppError> {
    let cfg = resolve_config(common)?;
    let (train, _) = load_dataset(common, &cfg)?;
    let mut records = Vec::with_capacity(train.len());
    for (index, sample) in train.samples.iter().enumerate() {
        let complex = build_complex(&sample.values, cfg.vertices, cfg.cutoff_frac, 2)
            .map_err(|e| AppError::Usage(e.to_string()))?;
        records.push(ComplexRecord {
            index,
            label: sample.label,
            vertices: complex.vertex_count,
            edges: complex.edges.len(),
            triangles: complex.triangles.len(),
            cutoff: complex.cutoff,
        });
    }
    let mut summary = format!(
        "complexes for {} training samples ({} vertices, top {:.0}% pairs)\n",
        records.len(),
        cfg.vertices,
        cfg.cutoff_frac * 100.0
    );
    for r in &records {
        summary.push_str(&format!(
            "  sample {:>4} label {}: m0={} m1={:>3} m2={:>3} cutoff={:.6}\n",
            r.index, r.label, r.vertices, r.edges, r.triangles, r.cutoff
        ));
    }
    let report = ComplexReport {
        dataset: common.dataset.clone(),
        vertices: cfg.vertices,
        cutoff_frac: cfg.cutoff_frac,
        records,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    emit(json, summary, out)
}

#[derive(Serialize)]
struct GridReport {
    dataset: String,
    cells: Vec<high_ts::train::GridCell>,
    best_vertices: usize,
    best_latent_dim: usize,
    best_val_accuracy: f64,
    config: TrainConfig,
}

fn cmd_gridsearch(common: &CommonOpts, out: Option<&std::path::Path>) -> Result<(), AppError> {
    let cfg = resolve_config(common)?;
    let (train_all, _) = load_dataset(common, &cfg)?;
    let split = split_train_val(&train_all, cfg.val_frac, cfg.seed)?;
    let outcome = grid_search(&split.train, &split.val, &cfg, &GridSpec::default())?;
    let mut summary = String::new();
    for cell in &outcome.cells {
        match (cell.val_accuracy, &cell.error) {
            (Some(acc), _) => summary.push_str(&format!(
                "  vertices {:>2} latent {:>2}: val accuracy {:.4} (best epoch {})\n",
                cell.vertices, cell.latent_dim, acc, cell.best_epoch
            )),
            (None, Some(err)) => summary.push_str(&format!(
                "  vertices {:>2} latent {:>2}: failed: {err}\n",
                cell.vertices, cell.latent_dim
            )),
            (None, None) => unreachable!("cell has neither accuracy nor error"),
        }
    }
    summary.push_str(&format!(
        "best cell: vertices {} latent {} (val accuracy {:.4})\n",
        outcome.best_vertices, outcome.best_latent_dim, outcome.best_val_accuracy
    ));
    let report = GridReport {
        dataset: common.dataset.clone(),
        cells: outcome.cells,
        best_vertices: outcome.best_vertices,
        best_latent_dim: outcome.best_latent_dim,
        best_val_accuracy: outcome.best_val_accuracy,
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    emit(json, summary, out)
}

#[derive(Serialize)]
struct AblationReport {
    dataset: String,
    rows: Vec<high_ts::train::AblationRow>,
    config: TrainConfig,
}

fn cmd_ablate(common: &CommonOpts, out: Option<&std::path::Path>) -> Result<(), AppError> {
    let cfg = resolve_config(common)?;
    let (train_all, test) = load_dataset(common, &cfg)?;
    let split = split_train_val(&train_all, cfg.val_frac, cfg.seed)?;
    let rows = ablate(&split.train, &split.val, &test, &cfg)?;
    let mut summary = String::new();
    for row in &rows {
        summary.push_str(&format!(
            "  {:<16} val accuracy {:.4}  test accuracy {:.4}\n",
            row.variant, row.val_accuracy, row.test_accuracy
        ));
    }
    let report = AblationReport {
        dataset: common.dataset.clone(),
        rows,
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    emit(json, summary, out)
}
