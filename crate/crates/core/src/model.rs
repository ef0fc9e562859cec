//! The full classifier: temporal and spatial encoders, contrastive
//! projection heads, and a softmax read-out, assembled per configuration.
//!
//! Ablation variants simply omit components, so disabled branches have no
//! parameters at all. Component construction order is fixed (temporal,
//! spatial, projections, classifier) to keep weight initialization
//! reproducible for a given seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, TrainConfig};
use crate::objectives::{
    classify, contrastive_loss, cross_entropy, project, total_loss, AffineIds, Classifier,
    ObjectiveError, ProjectionHead,
};
use crate::simplicial::{ComplexError, SimplicialComplex};
use crate::spatial::{SpatialEncoder, SpatialError, SpatialIds};
use crate::temporal::{ScaleEncoderIds, TemporalEncoder, TemporalError};
use crate::tensor::{Param, Tape, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Complex(#[from] ComplexError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("batch must not be empty")]
    EmptyBatch,
    #[error("sample has length {got}, the model expects {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("stored tensor {name} has shape {got:?}, expected {expected:?}")]
    TensorShapeMismatch {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("stored parameters are missing tensor {0:?}")]
    MissingTensor(String),
    #[error("stored parameters contain unexpected tensor {0:?}")]
    UnexpectedTensor(String),
    #[error("this model variant has no spatial branch")]
    NoSpatialBranch,
    #[error("{what} contain non-finite values; the model state is numerically unusable")]
    NonFiniteOutput { what: &'static str },
}

pub struct Model {
    pub config: TrainConfig,
    pub series_len: usize,
    pub class_count: usize,
    pub temporal: Option<TemporalEncoder>,
    pub spatial: Option<SpatialEncoder>,
    pub proj_temporal: Option<ProjectionHead>,
    pub proj_spatial: Option<ProjectionHead>,
    pub classifier: Classifier,
}

/// Tape leaf ids for every parameter, produced by [`Model::register`].
pub struct ModelIds {
    pub temporal: Option<Vec<ScaleEncoderIds>>,
    pub spatial: Option<SpatialIds>,
    pub proj_temporal: Option<AffineIds>,
    pub proj_spatial: Option<AffineIds>,
    pub classifier: AffineIds,
}

impl ModelIds {
    /// Ids in the same order as [`Model::params`].
    pub fn flatten(&self) -> Vec<TensorId> {
        let mut out = Vec::new();
        if let Some(scales) = &self.temporal {
            for enc in scales {
                out.extend(enc.flatten());
            }
        }
        if let Some(s) = &self.spatial {
            out.extend(s.flatten());
        }
        if let Some(p) = &self.proj_temporal {
            out.extend(p.flatten());
        }
        if let Some(p) = &self.proj_spatial {
            out.extend(p.flatten());
        }
        out.extend(self.classifier.flatten());
        out
    }
}

/// Everything one forward pass over a batch produces.
pub struct BatchLoss {
    pub loss: TensorId,
    pub cross_entropy: TensorId,
    pub contrastive: Option<TensorId>,
    pub probs: TensorId,
    /// True when the contrastive term was enabled but the batch was too
    /// small to form any negative pair.
    pub contrastive_skipped: bool,
}

impl Model {
    pub fn new(
        config: &TrainConfig,
        series_len: usize,
        class_count: usize,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if class_count < 2 {
            return Err(ModelError::TooFewClasses(class_count));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scales = config.active_scales();
        let temporal = if config.use_temporal() {
            Some(TemporalEncoder::new(
                &scales,
                series_len,
                config.latent_dim,
                config.heads,
                &mut rng,
            )?)
        } else {
            None
        };
        let spatial = if config.use_spatial() {
            Some(SpatialEncoder::new(
                series_len,
                config.vertices,
                config.latent_dim,
                config.mp_layers,
                config.active_levels(),
                config.cutoff_rule(),
                &mut rng,
            )?)
        } else {
            None
        };
        let (proj_temporal, proj_spatial) = if config.contrastive_active() {
            let t = temporal.as_ref().expect("contrastive requires temporal");
            let s = spatial.as_ref().expect("contrastive requires spatial");
            (
                Some(ProjectionHead::new(
                    "proj_temporal",
                    t.output_dim(),
                    config.contrast_dim,
                    &mut rng,
                )),
                Some(ProjectionHead::new(
                    "proj_spatial",
                    s.output_dim(),
                    config.contrast_dim,
                    &mut rng,
                )),
            )
        } else {
            (None, None)
        };
        let fused = temporal.as_ref().map_or(0, |t| t.output_dim())
            + spatial.as_ref().map_or(0, |s| s.output_dim());
        let classifier = Classifier::new(fused, class_count, &mut rng);
        Ok(Model {
            config: config.clone(),
            series_len,
            class_count,
            temporal,
            spatial,
            proj_temporal,
            proj_spatial,
            classifier,
        })
    }

    /// Width of the fused representation the classifier reads.
    pub fn fused_dim(&self) -> usize {
        self.temporal.as_ref().map_or(0, |t| t.output_dim())
            + self.spatial.as_ref().map_or(0, |s| s.output_dim())
    }

    /// All parameters in a fixed order shared with [`Model::register`].
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        if let Some(t) = &self.temporal {
            out.extend(t.params());
        }
        if let Some(s) = &self.spatial {
            out.extend(s.params());
        }
        if let Some(p) = &self.proj_temporal {
            out.extend(p.params());
        }
        if let Some(p) = &self.proj_spatial {
            out.extend(p.params());
        }
        out.extend(self.classifier.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        if let Some(t) = &mut self.temporal {
            out.extend(t.params_mut());
        }
        if let Some(s) = &mut self.spatial {
            out.extend(s.params_mut());
        }
        if let Some(p) = &mut self.proj_temporal {
            out.extend(p.params_mut());
        }
        if let Some(p) = &mut self.proj_spatial {
            out.extend(p.params_mut());
        }
        out.extend(self.classifier.params_mut());
        out
    }

    /// Registers every parameter as a tape leaf, in [`Model::params`] order.
    pub fn register(&self, tape: &mut Tape) -> ModelIds {
        ModelIds {
            temporal: self.temporal.as_ref().map(|t| t.register(tape)),
            spatial: self.spatial.as_ref().map(|s| s.register(tape)),
            proj_temporal: self.proj_temporal.as_ref().map(|p| p.register(tape)),
            proj_spatial: self.proj_spatial.as_ref().map(|p| p.register(tape)),
            classifier: self.classifier.register(tape),
        }
    }

    fn check_sample(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.series_len {
            return Err(ModelError::LengthMismatch {
                got: x.len(),
                expected: self.series_len,
            });
        }
        Ok(())
    }

    /// Per-branch representations of each sample, then the stacked batch
    /// matrices: (temporal B x S*d, spatial B x levels*d, fused B x fused).
    fn branch_matrices(
        &self,
        tape: &mut Tape,
        ids: &ModelIds,
        xs: &[&[f64]],
    ) -> Result<(Option<TensorId>, Option<TensorId>, TensorId), ModelError> {
        if xs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut temporal_rows = Vec::with_capacity(xs.len());
        let mut spatial_rows = Vec::with_capacity(xs.len());
        let mut fused_rows = Vec::with_capacity(xs.len());
        for &x in xs {
            self.check_sample(x)?;
            let mut parts = Vec::with_capacity(2);
            if let (Some(t), Some(t_ids)) = (&self.temporal, &ids.temporal) {
                let row = t.forward(tape, t_ids, x)?;
                temporal_rows.push(row);
                parts.push(row);
            }
            if let (Some(s), Some(s_ids)) = (&self.spatial, &ids.spatial) {
                let row = s.forward(tape, s_ids, x)?;
                spatial_rows.push(row);
                parts.push(row);
            }
            fused_rows.push(tape.concat_vecs(&parts)?);
        }
        let temporal_mat = if temporal_rows.is_empty() {
            None
        } else {
            Some(tape.stack_rows(&temporal_rows)?)
        };
        let spatial_mat = if spatial_rows.is_empty() {
            None
        } else {
            Some(tape.stack_rows(&spatial_rows)?)
        };
        let fused = tape.stack_rows(&fused_rows)?;
        Ok((temporal_mat, spatial_mat, fused))
    }

    /// Forward pass plus the training objective for one batch.
    pub fn forward_loss(
        &self,
        tape: &mut Tape,
        ids: &ModelIds,
        xs: &[&[f64]],
        labels: &[usize],
    ) -> Result<BatchLoss, ModelError> {
        let (temporal_mat, spatial_mat, fused) = self.branch_matrices(tape, ids, xs)?;
        let probs = classify(tape, ids.classifier, fused)?;
        let ce = cross_entropy(tape, probs, labels)?;
        let mut contrastive = None;
        let mut skipped = false;
        if self.config.contrastive_active() {
            if xs.len() >= 2 {
                let zt = project(
                    tape,
                    ids.proj_temporal.expect("projection head registered"),
                    temporal_mat.expect("temporal branch present"),
                )?;
                let zs = project(
                    tape,
                    ids.proj_spatial.expect("projection head registered"),
                    spatial_mat.expect("spatial branch present"),
                )?;
                contrastive = Some(contrastive_loss(
                    tape,
                    zt,
                    zs,
                    self.config.tau,
                    self.config.include_positive_pair,
                )?);
            } else {
                skipped = true;
            }
        }
        let loss = total_loss(tape, ce, contrastive)?;
        Ok(BatchLoss {
            loss,
            cross_entropy: ce,
            contrastive,
            probs,
            contrastive_skipped: skipped,
        })
    }

    /// Class probabilities for a batch; rows follow `xs`.
    pub fn predict_probs(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut out = Vec::with_capacity(xs.len());
        // Fresh record per chunk keeps memory flat on large test sets.
        for chunk in xs.chunks(self.config.batch.max(1)) {
            let mut tape = Tape::new();
            let ids = self.register(&mut tape);
            let (_, _, fused) = self.branch_matrices(&mut tape, &ids, chunk)?;
            let probs = classify(&mut tape, ids.classifier, fused)?;
            let data = tape.value(probs);
            if !data.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFiniteOutput {
                    what: "predicted probabilities",
                });
            }
            for row in 0..chunk.len() {
                out.push(data[row * self.class_count..(row + 1) * self.class_count].to_vec());
            }
        }
        Ok(out)
    }

    /// Argmax class per sample; ties resolve to the lowest class index.
    pub fn predict(&self, xs: &[&[f64]]) -> Result<Vec<usize>, ModelError> {
        Ok(self
            .predict_probs(xs)?
            .iter()
            .map(|row| argmax(row))
            .collect())
    }

    /// Fused representations (one row per sample), for export/clustering.
    pub fn embed(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut out = Vec::with_capacity(xs.len());
        let width = self.fused_dim();
        for chunk in xs.chunks(self.config.batch.max(1)) {
            let mut tape = Tape::new();
            let ids = self.register(&mut tape);
            let (_, _, fused) = self.branch_matrices(&mut tape, &ids, chunk)?;
            let data = tape.value(fused);
            if !data.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFiniteOutput { what: "embeddings" });
            }
            for row in 0..chunk.len() {
                out.push(data[row * width..(row + 1) * width].to_vec());
            }
        }
        Ok(out)
    }

    /// The complex the spatial branch builds for `x`.
    pub fn complex_for(&self, x: &[f64]) -> Result<SimplicialComplex, ModelError> {
        self.check_sample(x)?;
        let spatial = self.spatial.as_ref().ok_or(ModelError::NoSpatialBranch)?;
        Ok(spatial.complex_for(x)?)
    }

    /// Snapshot of all parameters for persistence, in `params()` order.
    pub fn to_named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.params()
            .into_iter()
            .map(|p| (p.name.clone(), p.shape.clone(), p.data.clone()))
            .collect()
    }

    /// Replaces parameter values from a snapshot. The snapshot must contain
    /// exactly this variant's tensors with matching shapes.
    pub fn load_named_tensors(
        &mut self,
        tensors: &[(String, Vec<usize>, Vec<f64>)],
    ) -> Result<(), ModelError> {
        let mut params = self.params_mut();
        for p in params.iter() {
            if !tensors.iter().any(|(name, _, _)| *name == p.name) {
                return Err(ModelError::MissingTensor(p.name.clone()));
            }
        }
        for (name, shape, data) in tensors {
            let param = params
                .iter_mut()
                .find(|p| p.name == *name)
                .ok_or_else(|| ModelError::UnexpectedTensor(name.clone()))?;
            if param.shape != *shape || param.data.len() != data.len() {
                return Err(ModelError::TensorShapeMismatch {
                    name: name.clone(),
                    got: shape.clone(),
                    expected: param.shape.clone(),
                });
            }
            param.data.clone_from(data);
        }
        Ok(())
    }
}

/// Index of the largest value; first occurrence wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
