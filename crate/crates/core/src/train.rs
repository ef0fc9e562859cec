//! Optimization loop: Adam, epoch driver, early-stopped fitting, the
//! vertex/latent-dimension grid search, and the ablation runner.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TrainConfig;
use crate::data::{batches, DataError, Dataset};
use crate::eval::{evaluate_accuracy, EvalError};
use crate::model::{argmax, Model, ModelError};
use crate::tensor::{Param, Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("gradient for parameter {0:?} is not finite")]
    NonFiniteGrad(String),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("got {grads} gradients for {params} parameters")]
    GradCountMismatch { params: usize, grads: usize },
    #[error("grid must contain at least one cell")]
    EmptyGrid,
    #[error("every grid cell failed; first error: {0}")]
    AllCellsFailed(String),
}

/// First/second moment estimates for every parameter, in `params()` order.
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[&Param]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. `grads[i]` belongs to `params[i]`;
/// a non-finite gradient aborts, naming the offending parameter.
pub fn adam_step(
    params: &mut [&mut Param],
    grads: &[&[f64]],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(TrainError::GradCountMismatch {
            params: params.len(),
            grads: grads.len(),
        });
    }
    for (param, grad) in params.iter().zip(grads) {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGrad(param.name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let m_corr = 1.0 - state.beta1.powi(t);
    let v_corr = 1.0 - state.beta2.powi(t);
    for ((param, &grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..param.data.len() {
            let g = grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let m_hat = m[i] / m_corr;
            let v_hat = v[i] / v_corr;
            param.data[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// Mean total loss over the epoch's batches.
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// Batches whose contrastive term was skipped for being singletons.
    pub contrastive_skipped_batches: usize,
}

// Distinct odd multiplier so per-epoch shuffles never collide with other
// seeded streams derived from the same base seed.
fn epoch_shuffle_seed(base: u64, epoch: usize) -> u64 {
    base ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs one pass over `train` in shuffled batches, updating `model`.
pub fn train_epoch(
    model: &mut Model,
    train: &Dataset,
    state: &mut AdamState,
    epoch: usize,
) -> Result<EpochMetrics, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let cfg = model.config.clone();
    let groups = batches(
        train.len(),
        cfg.batch,
        epoch_shuffle_seed(cfg.seed, epoch),
        true,
    )?;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut skipped = 0usize;
    for group in &groups {
        let xs: Vec<&[f64]> = group
            .iter()
            .map(|&i| train.samples[i].values.as_slice())
            .collect();
        let labels: Vec<usize> = group.iter().map(|&i| train.samples[i].label).collect();
        let mut tape = Tape::new();
        let ids = model.register(&mut tape);
        let out = model.forward_loss(&mut tape, &ids, &xs, &labels)?;
        let loss_value = tape.value(out.loss)[0];
        if !loss_value.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        loss_sum += loss_value;
        if out.contrastive_skipped {
            skipped += 1;
        }
        let probs = tape.value(out.probs);
        let classes = model.class_count;
        for (row, &label) in labels.iter().enumerate() {
            if argmax(&probs[row * classes..(row + 1) * classes]) == label {
                correct += 1;
            }
        }
        tape.backward(out.loss)?;
        let flat_ids = ids.flatten();
        let grads: Vec<&[f64]> = flat_ids
            .iter()
            .map(|&id| tape.grad(id).expect("leaf gradient present after backward"))
            .collect();
        let mut params = model.params_mut();
        adam_step(&mut params, &grads, state, cfg.lr)?;
    }
    Ok(EpochMetrics {
        train_loss: loss_sum / groups.len() as f64,
        train_accuracy: correct as f64 / train.len() as f64,
        contrastive_skipped_batches: skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub contrastive_skipped_batches: usize,
}

pub struct FitResult {
    /// The model restored to its best-validation parameters.
    pub model: Model,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Trains up to `cfg.epochs`, tracking validation accuracy after each
/// epoch; stops once `cfg.patience` consecutive epochs fail to improve on
/// the best, and returns the best-epoch parameters.
pub fn fit(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<FitResult, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if val.is_empty() {
        return Err(TrainError::EmptyValidationSet);
    }
    let class_count = train.class_count().max(val.class_count());
    let mut model = Model::new(cfg, train.series_len, class_count)?;
    let mut state = AdamState::new(&model.params());
    let mut history = Vec::new();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_params = model.to_named_tensors();
    let mut since_improvement = 0usize;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let metrics = train_epoch(&mut model, train, &mut state, epoch)?;
        let val_accuracy = evaluate_accuracy(&model, val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: metrics.train_loss,
            train_accuracy: metrics.train_accuracy,
            val_accuracy,
            contrastive_skipped_batches: metrics.contrastive_skipped_batches,
        });
        if val_accuracy > best_val {
            best_val = val_accuracy;
            best_epoch = epoch;
            best_params = model.to_named_tensors();
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement > cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    model.load_named_tensors(&best_params)?;
    Ok(FitResult {
        model,
        best_val_accuracy: best_val,
        best_epoch,
        history,
        stopped_early,
    })
}

/// The hyperparameter grid: every (vertices, latent_dim) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub vertices: Vec<usize>,
    pub latent_dims: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            vertices: vec![15, 20, 25, 30],
            latent_dims: vec![8, 16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCell {
    pub vertices: usize,
    pub latent_dim: usize,
    pub seed: u64,
    pub val_accuracy: Option<f64>,
    pub best_epoch: usize,
    pub error: Option<String>,
}

pub struct GridOutcome {
    /// One record per cell, in evaluation order.
    pub cells: Vec<GridCell>,
    pub best_vertices: usize,
    pub best_latent_dim: usize,
    pub best_val_accuracy: f64,
}

/// Fits every grid cell and picks the best validation accuracy. Ties go to
/// the smaller latent dimension, then the smaller vertex count. A failing
/// cell is recorded with its error and skipped in the ranking.
pub fn grid_search(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    grid: &GridSpec,
) -> Result<GridOutcome, TrainError> {
    if grid.vertices.is_empty() || grid.latent_dims.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let mut cells = Vec::with_capacity(grid.vertices.len() * grid.latent_dims.len());
    // Cell order (vertices outer, dims inner) fixes each cell's seed.
    for (index, (&vertices, &latent_dim)) in grid
        .vertices
        .iter()
        .flat_map(|v| grid.latent_dims.iter().map(move |d| (v, d)))
        .enumerate()
    {
        let mut cell_cfg = cfg.clone();
        cell_cfg.vertices = vertices;
        cell_cfg.latent_dim = latent_dim;
        // The contrast width tracks the latent width across the grid.
        cell_cfg.contrast_dim = latent_dim;
        cell_cfg.seed = cfg.seed + index as u64;
        match fit(train, val, &cell_cfg) {
            Ok(result) => cells.push(GridCell {
                vertices,
                latent_dim,
                seed: cell_cfg.seed,
                val_accuracy: Some(result.best_val_accuracy),
                best_epoch: result.best_epoch,
                error: None,
            }),
            Err(err) => cells.push(GridCell {
                vertices,
                latent_dim,
                seed: cell_cfg.seed,
                val_accuracy: None,
                best_epoch: 0,
                error: Some(err.to_string()),
            }),
        }
    }
    let best = cells
        .iter()
        .filter_map(|c| c.val_accuracy.map(|a| (a, c.latent_dim, c.vertices)))
        .min_by(|a, b| {
            // Highest accuracy first, then smaller d, then smaller n.
            b.0.partial_cmp(&a.0)
                .expect("accuracies are finite")
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
    let (best_val_accuracy, best_latent_dim, best_vertices) = best.ok_or_else(|| {
        let first = cells
            .iter()
            .find_map(|c| c.error.clone())
            .unwrap_or_default();
        TrainError::AllCellsFailed(first)
    })?;
    Ok(GridOutcome {
        cells,
        best_vertices,
        best_latent_dim,
        best_val_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

/// A named configuration mutation: the variant label and what it switches off.
pub type AblationVariant = (&'static str, fn(&mut TrainConfig));

/// The seven single-change variants, by what each removes.
pub fn ablation_variants() -> Vec<AblationVariant> {
    vec![
        ("full", (|_| {}) as fn(&mut TrainConfig)),
        ("no_contrastive", |c| c.use_cl = false),
        ("no_2simplex", |c| c.use_2simplex = false),
        ("no_1simplex", |c| c.use_1simplex = false),
        ("no_scale3", |c| c.use_scale3 = false),
        ("no_scale23", |c| c.use_scale2 = false),
        ("temporal_only", |c| c.temporal_only = true),
        ("spatial_only", |c| c.spatial_only = true),
    ]
}

/// Fits the full model and all seven ablation variants, reporting
/// validation and test accuracy for each. Variant i trains with seed
/// `cfg.seed + i` so rows are independent but reproducible.
pub fn ablate(
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::new();
    for (index, (name, mutate)) in ablation_variants().into_iter().enumerate() {
        let mut variant_cfg = cfg.clone();
        mutate(&mut variant_cfg);
        variant_cfg.seed = cfg.seed + index as u64;
        let result = fit(train, val, &variant_cfg)?;
        let test_accuracy = evaluate_accuracy(&result.model, test)?;
        rows.push(AblationRow {
            variant: name.to_string(),
            val_accuracy: result.best_val_accuracy,
            test_accuracy,
        });
    }
    Ok(rows)
}
