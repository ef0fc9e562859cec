//! Run configuration: hyperparameters, ablation switches, and the flat
//! key=value config-file format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial::CutoffRule;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("scales must not be empty")]
    EmptyScales,
    #[error("scale 0 is not a valid segment length")]
    ZeroScale,
    #[error("scale {0} appears more than once")]
    DuplicateScale(usize),
    #[error("vertices must be at least 2, got {0}")]
    TooFewVertices(usize),
    #[error("latent_dim must be positive")]
    ZeroLatentDim,
    #[error("contrast_dim must be positive")]
    ZeroContrastDim,
    #[error("heads {heads} must divide latent_dim {latent_dim}")]
    HeadsDontDivide { latent_dim: usize, heads: usize },
    #[error("mp_layers must lie in 1..=3, got {0}")]
    BadMpLayers(usize),
    #[error("tau must be positive, got {0}")]
    BadTau(f64),
    #[error("lr must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("batch must be positive")]
    ZeroBatch,
    #[error("epochs must be positive")]
    ZeroEpochs,
    #[error("cutoff_frac {0} must lie strictly between 0 and 1")]
    BadCutoffFrac(f64),
    #[error("val_frac {0} must lie strictly between 0 and 1")]
    BadValFrac(f64),
    #[error("temporal_only and spatial_only are mutually exclusive")]
    BothBranchesDisabled,
    #[error("line {line}: expected key=value, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: cannot parse {value:?} for key {key}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
}

/// Everything a training run depends on besides the data itself. Field
/// order is load-bearing: serialization (reports, checkpoints) follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Segment lengths of the temporal branch, one encoder per entry.
    pub scales: Vec<usize>,
    /// Patch count n; each patch becomes one vertex of the complex.
    pub vertices: usize,
    /// Width d of every latent representation.
    pub latent_dim: usize,
    /// Width of the shared space the contrastive heads project into.
    pub contrast_dim: usize,
    /// Attention heads per encoder layer; must divide latent_dim.
    pub heads: usize,
    /// Message passing layers per simplex level (1..=3).
    pub mp_layers: usize,
    /// Contrastive temperature.
    pub tau: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Fraction of most-similar patch pairs kept as edges.
    pub cutoff_frac: f64,
    /// Fraction of the training set held out for validation.
    pub val_frac: f64,
    /// Z-normalize each series before training/evaluation.
    pub znormalize: bool,
    /// Count the positive pair in the contrastive denominator.
    pub include_positive_pair: bool,
    pub use_cl: bool,
    pub use_2simplex: bool,
    pub use_1simplex: bool,
    pub use_scale3: bool,
    pub use_scale2: bool,
    /// Drop the spatial branch entirely.
    pub temporal_only: bool,
    /// Drop the temporal branch entirely.
    pub spatial_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scales: vec![1, 2, 3],
            vertices: 20,
            latent_dim: 32,
            contrast_dim: 32,
            heads: 4,
            mp_layers: 2,
            tau: 0.2,
            lr: 2e-4,
            batch: 64,
            epochs: 300,
            patience: 50,
            seed: 0,
            cutoff_frac: 0.10,
            val_frac: 0.25,
            znormalize: true,
            include_positive_pair: false,
            use_cl: true,
            use_2simplex: true,
            use_1simplex: true,
            use_scale3: true,
            use_scale2: true,
            temporal_only: false,
            spatial_only: false,
        }
    }
}

impl TrainConfig {
    // The negated float comparisons are deliberate: NaN must fail validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scales.is_empty() {
            return Err(ConfigError::EmptyScales);
        }
        for (i, &s) in self.scales.iter().enumerate() {
            if s == 0 {
                return Err(ConfigError::ZeroScale);
            }
            if self.scales[..i].contains(&s) {
                return Err(ConfigError::DuplicateScale(s));
            }
        }
        if self.vertices < 2 {
            return Err(ConfigError::TooFewVertices(self.vertices));
        }
        if self.latent_dim == 0 {
            return Err(ConfigError::ZeroLatentDim);
        }
        if self.contrast_dim == 0 {
            return Err(ConfigError::ZeroContrastDim);
        }
        if self.heads == 0 || !self.latent_dim.is_multiple_of(self.heads) {
            return Err(ConfigError::HeadsDontDivide {
                latent_dim: self.latent_dim,
                heads: self.heads,
            });
        }
        if !(1..=3).contains(&self.mp_layers) {
            return Err(ConfigError::BadMpLayers(self.mp_layers));
        }
        if !(self.tau > 0.0) {
            return Err(ConfigError::BadTau(self.tau));
        }
        if !(self.lr > 0.0) {
            return Err(ConfigError::BadLearningRate(self.lr));
        }
        if self.batch == 0 {
            return Err(ConfigError::ZeroBatch);
        }
        if self.epochs == 0 {
            return Err(ConfigError::ZeroEpochs);
        }
        if !(self.cutoff_frac > 0.0 && self.cutoff_frac < 1.0) {
            return Err(ConfigError::BadCutoffFrac(self.cutoff_frac));
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return Err(ConfigError::BadValFrac(self.val_frac));
        }
        if self.temporal_only && self.spatial_only {
            return Err(ConfigError::BothBranchesDisabled);
        }
        Ok(())
    }

    /// Scales actually used once the scale ablation flags are applied.
    /// Disabling "scale 2" also drops everything above it.
    pub fn active_scales(&self) -> Vec<usize> {
        let cap = if !self.use_scale2 {
            1
        } else if !self.use_scale3 {
            2
        } else {
            self.scales.len()
        };
        self.scales[..cap.min(self.scales.len())].to_vec()
    }

    /// Simplex levels used by the spatial branch: 1 = vertices only,
    /// 2 = +edges, 3 = +triangles. Disabling 1-simplexes drops 2-simplexes.
    pub fn active_levels(&self) -> usize {
        if !self.use_1simplex {
            1
        } else if !self.use_2simplex {
            2
        } else {
            3
        }
    }

    pub fn use_temporal(&self) -> bool {
        !self.spatial_only
    }

    pub fn use_spatial(&self) -> bool {
        !self.temporal_only
    }

    /// The contrastive term needs both branches to compare.
    pub fn contrastive_active(&self) -> bool {
        self.use_cl && self.use_temporal() && self.use_spatial()
    }

    pub fn cutoff_rule(&self) -> CutoffRule {
        CutoffRule::TopFraction(self.cutoff_frac)
    }

    /// Applies one key=value pair; `line` only feeds error messages.
    pub fn apply_kv(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        let bad = |key: &str, value: &str| ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        };
        macro_rules! parse {
            ($field:ident) => {
                self.$field = value.trim().parse().map_err(|_| bad(key, value))?
            };
        }
        match key {
            "scales" => {
                let parsed: Result<Vec<usize>, _> = value
                    .split(',')
                    .map(|part| part.trim().parse::<usize>())
                    .collect();
                self.scales = parsed.map_err(|_| bad(key, value))?;
            }
            "vertices" => parse!(vertices),
            "latent_dim" => parse!(latent_dim),
            "contrast_dim" => parse!(contrast_dim),
            "heads" => parse!(heads),
            "mp_layers" => parse!(mp_layers),
            "tau" => parse!(tau),
            "lr" => parse!(lr),
            "batch" => parse!(batch),
            "epochs" => parse!(epochs),
            "patience" => parse!(patience),
            "seed" => parse!(seed),
            "cutoff_frac" => parse!(cutoff_frac),
            "val_frac" => parse!(val_frac),
            "znormalize" => parse!(znormalize),
            "include_positive_pair" => parse!(include_positive_pair),
            "use_cl" => parse!(use_cl),
            "use_2simplex" => parse!(use_2simplex),
            "use_1simplex" => parse!(use_1simplex),
            "use_scale3" => parse!(use_scale3),
            "use_scale2" => parse!(use_scale2),
            "temporal_only" => parse!(temporal_only),
            "spatial_only" => parse!(spatial_only),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Applies a flat key=value config file ('#' starts a comment, blank
    /// lines ignored). Later lines override earlier ones.
    pub fn apply_file(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let trimmed = stripped.trim();
            if trimmed.is_empty() {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::BadLine {
                line,
                text: trimmed.to_string(),
            })?;
            self.apply_kv(key.trim(), value, line)?;
        }
        Ok(())
    }
}
