//! Training objectives: the cross-structural contrastive loss, branch
//! fusion, the softmax classifier, and cross-entropy.
//!
//! The contrastive loss treats the temporal and spatial embeddings of the
//! same sample as a positive pair and contrasts them against cross-sample
//! pairs in both directions. By default the denominator excludes the
//! positive pair, so the loss can be negative; the conventional
//! include-positive form is available behind a flag.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{fill_xavier, Param, Tape, TensorError, TensorId};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("contrastive loss needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("temperature {0} must be positive")]
    BadTemperature(f64),
    #[error("embedding batches differ in shape: {left:?} vs {right:?}")]
    EmbeddingMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("got {labels} labels for a batch of {batch}")]
    LabelCountMismatch { labels: usize, batch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Cross-structural contrastive loss over a batch.
///
/// `zm` and `zt` are B x d_c projected embeddings of the same samples in the
/// same order. Per sample the positive similarity is contrasted against the
/// other batch entries in both directions; the total is half the sum of the
/// per-sample terms. With `include_positive` the denominator also contains
/// the positive pair (the conventional normalized-softmax form).
pub fn contrastive_loss(
    tape: &mut Tape,
    zm: TensorId,
    zt: TensorId,
    tau: f64,
    include_positive: bool,
) -> Result<TensorId, ObjectiveError> {
    if tape.shape(zm) != tape.shape(zt) {
        return Err(ObjectiveError::EmbeddingMismatch {
            left: tape.shape(zm).to_vec(),
            right: tape.shape(zt).to_vec(),
        });
    }
    if tau <= 0.0 {
        return Err(ObjectiveError::BadTemperature(tau));
    }
    let shape = tape.shape(zm).to_vec();
    if shape.len() != 2 {
        return Err(ObjectiveError::Tensor(TensorError::RankMismatch {
            op: "contrastive_loss",
            expected: 2,
            got: shape,
        }));
    }
    let batch = shape[0];
    if batch < 2 {
        return Err(ObjectiveError::BatchTooSmall(batch));
    }

    let um = tape.normalize_rows(zm)?;
    let ut = tape.normalize_rows(zt)?;
    let ut_t = tape.transpose(ut)?;
    let sims = tape.matmul(um, ut_t)?; // sims[i][j] = cos(zm_i, zt_j)
    let scaled = tape.scale(sims, 1.0 / tau);
    let exps = tape.exp(scaled);

    let diagonal: Vec<usize> = (0..batch).collect();
    let positives = tape.pick_per_row(exps, &diagonal)?;

    let denominator_source = if include_positive {
        exps
    } else {
        // Zero the diagonal so each denominator sums over j != i only.
        let mut mask = vec![1.0; batch * batch];
        for i in 0..batch {
            mask[i * batch + i] = 0.0;
        }
        let mask = tape.constant(mask, vec![batch, batch])?;
        tape.mul(exps, mask)?
    };
    let den_forward = tape.sum_axis(denominator_source, 1)?; // vs other spatial embeddings
    let den_backward = tape.sum_axis(denominator_source, 0)?; // vs other temporal embeddings

    // log(pos/den) composed as a ratio first: for a batch of identical
    // embeddings the ratio is exactly 1 and the loss exactly 0.
    let ratio_f = tape.div(positives, den_forward)?;
    let ratio_b = tape.div(positives, den_backward)?;
    let log_f = tape.log(ratio_f);
    let log_b = tape.log(ratio_b);
    let per_sample = tape.add(log_f, log_b)?;
    let total = tape.sum_all(per_sample);
    Ok(tape.scale(total, -0.5))
}

/// Concatenates the temporal and spatial representations of one sample;
/// the temporal block comes first.
pub fn fuse(tape: &mut Tape, f_m: TensorId, f_t: TensorId) -> Result<TensorId, TensorError> {
    tape.concat_vecs(&[f_m, f_t])
}

/// Affine map into the shared contrast space (no activation).
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub w: Param,
    pub b: Param,
}

impl ProjectionHead {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let shape = vec![in_dim, out_dim];
        let mut data = vec![0.0; in_dim * out_dim];
        fill_xavier(&mut data, &shape, rng);
        ProjectionHead {
            w: Param {
                name: format!("{prefix}.w"),
                shape,
                data,
            },
            b: Param {
                name: format!("{prefix}.b"),
                shape: vec![out_dim],
                data: vec![0.0; out_dim],
            },
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn register(&self, tape: &mut Tape) -> AffineIds {
        AffineIds {
            w: tape.leaf_param(&self.w),
            b: tape.leaf_param(&self.b),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AffineIds {
    pub w: TensorId,
    pub b: TensorId,
}

impl AffineIds {
    /// Ids in the weight-then-bias order used by `params()`.
    pub fn flatten(&self) -> Vec<TensorId> {
        vec![self.w, self.b]
    }
}

/// Applies an affine map to a batch (rows are samples).
pub fn project(tape: &mut Tape, ids: AffineIds, x: TensorId) -> Result<TensorId, TensorError> {
    let lin = tape.matmul(x, ids.w)?;
    tape.add_row(lin, ids.b)
}

/// Softmax classification head over fused representations.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub w: Param,
    pub b: Param,
}

impl Classifier {
    pub fn new(in_dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let shape = vec![in_dim, classes];
        let mut data = vec![0.0; in_dim * classes];
        fill_xavier(&mut data, &shape, rng);
        Classifier {
            w: Param {
                name: "classifier.w".to_string(),
                shape,
                data,
            },
            b: Param {
                name: "classifier.b".to_string(),
                shape: vec![classes],
                data: vec![0.0; classes],
            },
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn register(&self, tape: &mut Tape) -> AffineIds {
        AffineIds {
            w: tape.leaf_param(&self.w),
            b: tape.leaf_param(&self.b),
        }
    }
}

/// Class probabilities for a batch of fused representations (B x in_dim).
pub fn classify(tape: &mut Tape, ids: AffineIds, r: TensorId) -> Result<TensorId, TensorError> {
    let logits = tape.matmul(r, ids.w)?;
    let logits = tape.add_row(logits, ids.b)?;
    tape.softmax_rows(logits)
}

/// Mean negative log-likelihood of the true classes, with probabilities
/// clamped to [PROB_FLOOR, 1] before the log.
pub fn cross_entropy(
    tape: &mut Tape,
    probs: TensorId,
    labels: &[usize],
) -> Result<TensorId, ObjectiveError> {
    let shape = tape.shape(probs).to_vec();
    if shape.len() != 2 {
        return Err(ObjectiveError::Tensor(TensorError::RankMismatch {
            op: "cross_entropy",
            expected: 2,
            got: shape,
        }));
    }
    let (batch, classes) = (shape[0], shape[1]);
    if labels.len() != batch {
        return Err(ObjectiveError::LabelCountMismatch {
            labels: labels.len(),
            batch,
        });
    }
    for &y in labels {
        if y >= classes {
            return Err(ObjectiveError::LabelOutOfRange { label: y, classes });
        }
    }
    let clamped = tape.clamp(probs, PROB_FLOOR, 1.0);
    let picked = tape.pick_per_row(clamped, labels)?;
    let logs = tape.log(picked);
    let total = tape.sum_all(logs);
    Ok(tape.scale(total, -1.0 / batch as f64))
}

/// L = L_CE + L_CL; pass `None` when the contrastive term is disabled.
pub fn total_loss(
    tape: &mut Tape,
    ce: TensorId,
    cl: Option<TensorId>,
) -> Result<TensorId, TensorError> {
    match cl {
        Some(cl) => tape.add(ce, cl),
        None => Ok(ce),
    }
}
