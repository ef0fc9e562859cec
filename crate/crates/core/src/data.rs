//! Labeled time-series datasets: TSV I/O, normalization, splits, batching,
//! and a built-in synthetic benchmark.
//!
//! File format: one sample per line, label in the first field, readings in
//! the remaining fields, tab- or comma-separated. Labels may be arbitrary
//! numbers; they are remapped to contiguous indices in ascending order.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: no samples found")]
    Empty { path: PathBuf },
    #[error("{path}:{line}: expected {expected} fields, got {got}")]
    RaggedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}:{line}: field {field} is not a number: {token:?}")]
    NonNumeric {
        path: PathBuf,
        line: usize,
        field: usize,
        token: String,
    },
    #[error("label {label} not present in the training label set")]
    UnknownLabel { label: f64 },
    #[error("validation fraction {0} must lie in [0, 1)")]
    BadFraction(f64),
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("dataset is empty")]
    NoSamples,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSample {
    pub values: Vec<f64>,
    pub label: usize,
}

/// A labeled dataset with uniform series length and contiguous class indices.
/// `label_values[i]` is the raw label that was mapped to class index `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TimeSeriesSample>,
    pub series_len: usize,
    pub label_values: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.label_values.len()
    }

    /// Number of samples in each class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

struct RawRows {
    labels: Vec<f64>,
    rows: Vec<Vec<f64>>,
    series_len: usize,
}

fn parse_rows(path: &Path) -> Result<RawRows, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    let mut width: Option<usize> = None;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let delim = if line.contains('\t') { '\t' } else { ',' };
        let fields: Vec<&str> = line.split(delim).collect();
        let expected = *width.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(DataError::RaggedRow {
                path: path.to_path_buf(),
                line: line_no + 1,
                expected,
                got: fields.len(),
            });
        }
        if fields.len() < 2 {
            return Err(DataError::RaggedRow {
                path: path.to_path_buf(),
                line: line_no + 1,
                expected: 2,
                got: fields.len(),
            });
        }
        let mut parsed = Vec::with_capacity(fields.len());
        for (field_no, token) in fields.iter().enumerate() {
            let v: f64 = token.trim().parse().map_err(|_| DataError::NonNumeric {
                path: path.to_path_buf(),
                line: line_no + 1,
                field: field_no + 1,
                token: (*token).to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonNumeric {
                    path: path.to_path_buf(),
                    line: line_no + 1,
                    field: field_no + 1,
                    token: (*token).to_string(),
                });
            }
            parsed.push(v);
        }
        labels.push(parsed[0]);
        rows.push(parsed[1..].to_vec());
    }
    if rows.is_empty() {
        return Err(DataError::Empty {
            path: path.to_path_buf(),
        });
    }
    let series_len = rows[0].len();
    Ok(RawRows {
        labels,
        rows,
        series_len,
    })
}

fn sorted_unique(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(|a, b| a.partial_cmp(b).expect("labels are finite"));
    values.dedup();
    values
}

fn assemble(raw: RawRows, label_values: &[f64]) -> Result<Dataset, DataError> {
    let mut samples = Vec::with_capacity(raw.rows.len());
    for (label, values) in raw.labels.into_iter().zip(raw.rows) {
        let index = label_values
            .iter()
            .position(|&v| v == label)
            .ok_or(DataError::UnknownLabel { label })?;
        samples.push(TimeSeriesSample {
            values,
            label: index,
        });
    }
    Ok(Dataset {
        samples,
        series_len: raw.series_len,
        label_values: label_values.to_vec(),
    })
}

/// Loads one TSV/CSV file, deriving the class mapping from its own labels.
pub fn load_tsv(path: &Path) -> Result<Dataset, DataError> {
    let raw = parse_rows(path)?;
    let label_values = sorted_unique(raw.labels.clone());
    assemble(raw, &label_values)
}

/// Loads a train/test pair with a class mapping shared across both files.
pub fn load_pair(train: &Path, test: &Path) -> Result<(Dataset, Dataset), DataError> {
    let raw_train = parse_rows(train)?;
    let raw_test = parse_rows(test)?;
    let mut all = raw_train.labels.clone();
    all.extend_from_slice(&raw_test.labels);
    let label_values = sorted_unique(all);
    let train_ds = assemble(raw_train, &label_values)?;
    let test_ds = assemble(raw_test, &label_values)?;
    Ok((train_ds, test_ds))
}

/// Writes a dataset back out as tab-separated rows (label first).
pub fn write_tsv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    for s in &dataset.samples {
        out.push_str(&format!("{}", dataset.label_values[s.label]));
        for v in &s.values {
            out.push('\t');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(out.as_bytes()).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-series z-normalization with the population standard deviation.
/// Constant series become all zeros.
pub fn znormalize(dataset: &Dataset) -> Dataset {
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            let n = s.values.len() as f64;
            let mean = s.values.iter().sum::<f64>() / n;
            let var = s.values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            let values = if std > 0.0 {
                s.values.iter().map(|&v| (v - mean) / std).collect()
            } else {
                vec![0.0; s.values.len()]
            };
            TimeSeriesSample {
                values,
                label: s.label,
            }
        })
        .collect();
    Dataset {
        samples,
        series_len: dataset.series_len,
        label_values: dataset.label_values.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: Dataset,
    pub val: Dataset,
    /// False when some class had fewer than two samples and the split fell
    /// back to plain random sampling.
    pub stratified: bool,
}

/// Stratified train/validation split. The validation set gets
/// round(frac * n) samples, allocated per class by largest remainder so the
/// class mix tracks the source distribution.
pub fn split_train_val(
    dataset: &Dataset,
    frac: f64,
    seed: u64,
) -> Result<SplitOutcome, DataError> {
    if !(0.0..1.0).contains(&frac) {
        return Err(DataError::BadFraction(frac));
    }
    if dataset.is_empty() {
        return Err(DataError::NoSamples);
    }
    let n = dataset.len();
    let val_total = ((frac * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let histogram = dataset.class_histogram();
    let stratified = histogram.iter().all(|&c| c >= 2);

    let mut val_indices: Vec<usize> = Vec::with_capacity(val_total);
    if stratified && val_total > 0 {
        // Largest-remainder allocation of the validation budget per class,
        // capped so every class keeps at least one training sample.
        let exact: Vec<f64> = histogram
            .iter()
            .map(|&c| val_total as f64 * c as f64 / n as f64)
            .collect();
        let mut take: Vec<usize> = exact
            .iter()
            .zip(&histogram)
            .map(|(&e, &c)| (e.floor() as usize).min(c - 1))
            .collect();
        let mut assigned: usize = take.iter().sum();
        let mut order: Vec<usize> = (0..histogram.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - take[a] as f64;
            let rb = exact[b] - take[b] as f64;
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        'fill: while assigned < val_total {
            let mut progressed = false;
            for &c in &order {
                if assigned == val_total {
                    break 'fill;
                }
                if take[c] < histogram[c] - 1 {
                    take[c] += 1;
                    assigned += 1;
                    progressed = true;
                }
            }
            if !progressed {
                break; // every class saturated; accept a smaller validation set
            }
        }
        for (class, &count) in take.iter().enumerate() {
            let mut members: Vec<usize> = (0..n)
                .filter(|&i| dataset.samples[i].label == class)
                .collect();
            members.shuffle(&mut rng);
            val_indices.extend(members.into_iter().take(count));
        }
    } else if val_total > 0 {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        val_indices.extend(all.into_iter().take(val_total));
    }
    val_indices.sort_unstable();

    let mut in_val = vec![false; n];
    for &i in &val_indices {
        in_val[i] = true;
    }
    let pick = |flag: bool| Dataset {
        samples: (0..n)
            .filter(|&i| in_val[i] == flag)
            .map(|i| dataset.samples[i].clone())
            .collect(),
        series_len: dataset.series_len,
        label_values: dataset.label_values.clone(),
    };
    Ok(SplitOutcome {
        train: pick(false),
        val: pick(true),
        stratified,
    })
}

/// Partitions `0..n` into batches of `batch_size` (last one may be short).
/// With `shuffle`, the order is a seeded permutation; otherwise ascending.
pub fn batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size == 0 {
        return Err(DataError::ZeroBatch);
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Built-in benchmark: class 0 is a noisy sinusoid with a random frequency
/// and phase, class 1 is white noise. Both classes are balanced.
pub fn synthetic_sine_vs_noise(
    n_train: usize,
    n_test: usize,
    series_len: usize,
    seed: u64,
) -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |count: usize| {
        let mut samples = Vec::with_capacity(count);
        for i in 0..count {
            let label = i % 2;
            let values = if label == 0 {
                let freq: f64 = uniform(&mut rng, 2.0, 6.0);
                let phase: f64 = uniform(&mut rng, 0.0, std::f64::consts::TAU);
                (0..series_len)
                    .map(|t| {
                        let arg = std::f64::consts::TAU * freq * t as f64 / series_len as f64;
                        (arg + phase).sin() + 0.3 * gaussian(&mut rng)
                    })
                    .collect()
            } else {
                (0..series_len).map(|_| gaussian(&mut rng)).collect()
            };
            samples.push(TimeSeriesSample { values, label });
        }
        Dataset {
            samples,
            series_len,
            label_values: vec![0.0, 1.0],
        }
    };
    let train = make(n_train);
    let test = make(n_test);
    (train, test)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    use rand::Rng;
    rng.random_range(lo..hi)
}

/// Box-Muller standard normal draw; avoids pulling in a distributions crate.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_tab_separated_with_label_remap() {
        let f = write_temp("2\t0.5\t1.5\n1\t0.0\t1.0\n2\t2.0\t3.0\n");
        let d = load_tsv(f.path()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.series_len, 2);
        assert_eq!(d.label_values, vec![1.0, 2.0]);
        assert_eq!(d.samples[0].label, 1);
        assert_eq!(d.samples[1].label, 0);
        assert_eq!(d.samples[1].values, vec![0.0, 1.0]);
    }

    #[test]
    fn loads_comma_separated_and_negative_labels() {
        let f = write_temp("-1,0.5,1.5\n1,2.5,3.5\n");
        let d = load_tsv(f.path()).unwrap();
        assert_eq!(d.label_values, vec![-1.0, 1.0]);
        assert_eq!(d.samples[0].label, 0);
        assert_eq!(d.samples[1].label, 1);
    }

    #[test]
    fn ragged_row_reports_line_number() {
        let f = write_temp("1\t0.5\t1.5\n2\t0.1\n");
        let err = load_tsv(f.path()).unwrap_err();
        match err {
            DataError::RaggedRow { line, expected, got, .. } => {
                assert_eq!(line, 2);
                assert_eq!(expected, 3);
                assert_eq!(got, 2);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn non_numeric_field_reports_position() {
        let f = write_temp("1\t0.5\t1.5\n2\t0.1\tabc\n");
        let err = load_tsv(f.path()).unwrap_err();
        match err {
            DataError::NonNumeric { line, field, token, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, 3);
                assert_eq!(token, "abc");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_temp("");
        assert!(matches!(load_tsv(f.path()), Err(DataError::Empty { .. })));
    }

    #[test]
    fn scientific_notation_parses() {
        let f = write_temp("1.0000000e+00\t5.0e-01\t-1.5e+00\n2e0\t1\t2\n");
        let d = load_tsv(f.path()).unwrap();
        assert_eq!(d.samples[0].values, vec![0.5, -1.5]);
        assert_eq!(d.label_values, vec![1.0, 2.0]);
    }

    #[test]
    fn pair_shares_label_map() {
        let train = write_temp("1\t0.0\t0.0\n2\t1.0\t1.0\n");
        let test = write_temp("3\t2.0\t2.0\n1\t0.0\t0.0\n");
        let (tr, te) = load_pair(train.path(), test.path()).unwrap();
        assert_eq!(tr.label_values, vec![1.0, 2.0, 3.0]);
        assert_eq!(te.label_values, vec![1.0, 2.0, 3.0]);
        assert_eq!(te.samples[0].label, 2);
    }

    #[test]
    fn tsv_round_trip_preserves_values() {
        let (train, _) = synthetic_sine_vs_noise(6, 2, 16, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.tsv");
        write_tsv(&train, &path).unwrap();
        let back = load_tsv(&path).unwrap();
        assert_eq!(back.len(), train.len());
        for (a, b) in back.samples.iter().zip(&train.samples) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn znormalize_matches_reference_values() {
        let d = Dataset {
            samples: vec![TimeSeriesSample {
                values: vec![1.0, 2.0, 3.0],
                label: 0,
            }],
            series_len: 3,
            label_values: vec![0.0],
        };
        let z = znormalize(&d);
        let got = &z.samples[0].values;
        let want = 1.224744871391589;
        assert!((got[0] + want).abs() < 1e-12);
        assert!(got[1].abs() < 1e-12);
        assert!((got[2] - want).abs() < 1e-12);
    }

    #[test]
    fn znormalize_constant_series_becomes_zeros() {
        let d = Dataset {
            samples: vec![TimeSeriesSample {
                values: vec![5.0; 4],
                label: 0,
            }],
            series_len: 4,
            label_values: vec![0.0],
        };
        let z = znormalize(&d);
        assert_eq!(z.samples[0].values, vec![0.0; 4]);
    }

    #[test]
    fn split_sizes_are_exact_and_partitioned() {
        let (train, _) = synthetic_sine_vs_noise(400, 0, 8, 3);
        let split = split_train_val(&train, 0.25, 11).unwrap();
        assert_eq!(split.val.len(), 100);
        assert_eq!(split.train.len(), 300);
        assert!(split.stratified);
        // Class mix preserved exactly for a balanced source.
        assert_eq!(split.val.class_histogram(), vec![50, 50]);
        assert_eq!(split.train.class_histogram(), vec![150, 150]);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let (train, _) = synthetic_sine_vs_noise(40, 0, 8, 3);
        let a = split_train_val(&train, 0.25, 7).unwrap();
        let b = split_train_val(&train, 0.25, 7).unwrap();
        let c = split_train_val(&train, 0.25, 8).unwrap();
        assert_eq!(a.val.samples, b.val.samples);
        assert_ne!(a.val.samples, c.val.samples);
    }

    #[test]
    fn split_falls_back_when_a_class_is_tiny() {
        let mut samples = vec![
            TimeSeriesSample {
                values: vec![0.0; 4],
                label: 1,
            };
            9
        ];
        samples.push(TimeSeriesSample {
            values: vec![1.0; 4],
            label: 0,
        });
        let d = Dataset {
            samples,
            series_len: 4,
            label_values: vec![0.0, 1.0],
        };
        let split = split_train_val(&d, 0.3, 5).unwrap();
        assert!(!split.stratified);
        assert_eq!(split.val.len(), 3);
        assert_eq!(split.train.len(), 7);
    }

    #[test]
    fn batch_partition_sizes() {
        let b = batches(130, 64, 5, true).unwrap();
        let sizes: Vec<usize> = b.iter().map(|x| x.len()).collect();
        assert_eq!(sizes, vec![64, 64, 2]);
        let mut seen: Vec<usize> = b.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..130).collect::<Vec<_>>());

        let unshuffled = batches(5, 2, 0, false).unwrap();
        assert_eq!(unshuffled, vec![vec![0, 1], vec![2, 3], vec![4]]);
    }

    #[test]
    fn synthetic_is_balanced_and_deterministic() {
        let (train, test) = synthetic_sine_vs_noise(200, 100, 128, 42);
        assert_eq!(train.len(), 200);
        assert_eq!(test.len(), 100);
        assert_eq!(train.series_len, 128);
        assert_eq!(train.class_histogram(), vec![100, 100]);
        let (again, _) = synthetic_sine_vs_noise(200, 100, 128, 42);
        assert_eq!(train.samples, again.samples);
        let (other, _) = synthetic_sine_vs_noise(200, 100, 128, 43);
        assert_ne!(train.samples, other.samples);
    }
}
