//! Evaluation: accuracy, cluster separation (Davies-Bouldin), embedding
//! export, and the JSON metrics report.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::model::{Model, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("cluster metrics need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("{embeddings} embeddings for {labels} labels")]
    CountMismatch { embeddings: usize, labels: usize },
    #[error("embeddings must all share one width")]
    RaggedEmbeddings,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Fraction of test samples whose predicted class matches the label.
pub fn evaluate_accuracy(model: &Model, test: &Dataset) -> Result<f64, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let refs: Vec<&[f64]> = test.samples.iter().map(|s| s.values.as_slice()).collect();
    let predictions = model.predict(&refs)?;
    let correct = predictions
        .iter()
        .zip(&test.samples)
        .filter(|(p, s)| **p == s.label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Davies-Bouldin index over labeled points: the mean, across classes, of
/// the worst (scatter_i + scatter_j) / centroid distance ratio. Lower is
/// better separated. Coincident centroids make the ratio +inf, which
/// propagates to the result.
pub fn davies_bouldin(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<f64, EvalError> {
    if embeddings.len() != labels.len() {
        return Err(EvalError::CountMismatch {
            embeddings: embeddings.len(),
            labels: labels.len(),
        });
    }
    let width = embeddings.first().map_or(0, |e| e.len());
    if embeddings.iter().any(|e| e.len() != width) {
        return Err(EvalError::RaggedEmbeddings);
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(EvalError::TooFewClasses(classes.len()));
    }
    let mut centroids = Vec::with_capacity(classes.len());
    let mut scatters = Vec::with_capacity(classes.len());
    for &class in &classes {
        let members: Vec<&Vec<f64>> = labels
            .iter()
            .zip(embeddings)
            .filter(|(&l, _)| l == class)
            .map(|(_, e)| e)
            .collect();
        let mut centroid = vec![0.0; width];
        for member in &members {
            for (c, &v) in centroid.iter_mut().zip(member.iter()) {
                *c += v;
            }
        }
        for c in centroid.iter_mut() {
            *c /= members.len() as f64;
        }
        let scatter = members
            .iter()
            .map(|m| euclidean(m, &centroid))
            .sum::<f64>()
            / members.len() as f64;
        centroids.push(centroid);
        scatters.push(scatter);
    }
    let k = classes.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i == j {
                continue;
            }
            let gap = euclidean(&centroids[i], &centroids[j]);
            let ratio = if gap == 0.0 {
                f64::INFINITY
            } else {
                (scatters[i] + scatters[j]) / gap
            };
            worst = worst.max(ratio);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Writes `bytes` to a sibling temp file, then renames over `path`, so
/// readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    let io_err = |p: &Path| {
        let path = p.display().to_string();
        move |source| EvalError::Io {
            path: path.clone(),
            source,
        }
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    if name.is_empty() {
        return Err(EvalError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a file path"),
        });
    }
    let tmp = path.with_file_name(format!("{name}.tmp"));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

/// Exports one CSV row per sample: the class index, then every coordinate
/// of the fused representation with 9 significant digits.
pub fn export_embeddings(model: &Model, data: &Dataset, path: &Path) -> Result<(), EvalError> {
    if data.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let refs: Vec<&[f64]> = data.samples.iter().map(|s| s.values.as_slice()).collect();
    let rows = model.embed(&refs)?;
    let width = model.fused_dim();
    let mut out = String::from("label");
    for i in 0..width {
        out.push_str(&format!(",r_{i}"));
    }
    out.push('\n');
    for (sample, row) in data.samples.iter().zip(&rows) {
        out.push_str(&sample.label.to_string());
        for value in row {
            out.push_str(&format!(",{value:.8e}"));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Mean and population standard deviation; a single value has std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Reference mean/std test accuracies for UCR datasets; reports print them
/// next to measured results for comparison.
pub const REFERENCE_ACCURACY: &[(&str, f64, f64)] = &[
    ("DPOAG", 0.804, 0.032),
    ("DPOC", 0.807, 0.025),
    ("ECG5000", 0.942, 0.002),
    ("FRT", 0.998, 0.000),
    ("Ham", 0.798, 0.049),
    ("MPOC", 0.847, 0.014),
    ("PPOAG", 0.878, 0.006),
    ("RD", 0.624, 0.031),
    ("Strawberry", 0.984, 0.004),
    ("Wine", 0.974, 0.017),
];

pub fn reference_accuracy(dataset: &str) -> Option<(f64, f64)> {
    REFERENCE_ACCURACY
        .iter()
        .find(|(name, _, _)| *name == dataset)
        .map(|&(_, mean, std)| (mean, std))
}

/// Everything one evaluation run reports. Wall-clock time is kept out of
/// the serialized form so identical runs produce byte-identical reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub per_seed_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// None when the index is not finite (coincident class centroids).
    pub dbi: Option<f64>,
    /// The space the index was computed in; always the raw fused space.
    pub dbi_space: String,
    /// Bundled reference (mean, std) for this dataset, when known.
    pub reference_accuracy: Option<(f64, f64)>,
    pub config: TrainConfig,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl MetricsReport {
    pub fn new(
        dataset: &str,
        seeds: Vec<u64>,
        per_seed_accuracy: Vec<f64>,
        dbi: f64,
        config: TrainConfig,
        wall_clock_seconds: f64,
    ) -> Self {
        let (mean_accuracy, std_accuracy) = mean_std(&per_seed_accuracy);
        MetricsReport {
            dataset: dataset.to_string(),
            seeds,
            per_seed_accuracy,
            mean_accuracy,
            std_accuracy,
            dbi: dbi.is_finite().then_some(dbi),
            dbi_space: "raw".to_string(),
            reference_accuracy: reference_accuracy(dataset),
            config,
            wall_clock_seconds,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Multi-line human summary for standard output.
    pub fn summary(&self) -> String {
        let mut out = format!("dataset: {}\n", self.dataset);
        for (seed, acc) in self.seeds.iter().zip(&self.per_seed_accuracy) {
            out.push_str(&format!("  seed {seed}: accuracy {acc:.4}\n"));
        }
        out.push_str(&format!(
            "accuracy: {:.4} +/- {:.4} over {} seed(s)\n",
            self.mean_accuracy,
            self.std_accuracy,
            self.seeds.len()
        ));
        match self.dbi {
            Some(dbi) => out.push_str(&format!("dbi (raw embedding space): {dbi:.4}\n")),
            None => out.push_str("dbi (raw embedding space): not finite\n"),
        }
        if let Some((mean, std)) = self.reference_accuracy {
            out.push_str(&format!(
                "reference accuracy for {}: {mean:.3} +/- {std:.3}\n",
                self.dataset
            ));
        }
        out.push_str(&format!(
            "wall clock: {:.1}s\n",
            self.wall_clock_seconds
        ));
        out
    }
}
