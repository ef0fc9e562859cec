//! Model persistence.
//!
//! Binary layout: magic "HITS", format version (u32 LE), tensor count
//! (u32 LE); per tensor: name length (u32 LE), UTF-8 name, rank (u32 LE),
//! extents (u64 LE each), values (f64 LE, row-major); then a JSON metadata
//! block preceded by its byte length (u64 LE). Encoding is canonical, so
//! save -> load -> save reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TrainConfig;
use crate::model::{Model, ModelError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HITS";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot {action} {path}: {source}")]
    Io {
        action: &'static str,
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint file (magic bytes mismatch)")]
    BadMagic,
    #[error("unsupported checkpoint version {got}, this build reads {expected}")]
    VersionMismatch { got: u32, expected: u32 },
    #[error("checkpoint is truncated: {context}")]
    Truncated { context: &'static str },
    #[error("checkpoint has {0} trailing bytes after the metadata block")]
    TrailingBytes(usize),
    #[error("tensor name is not valid UTF-8")]
    BadTensorName,
    #[error("tensor {name} declares extents {shape:?} but carries {values} values")]
    ShapeDataMismatch {
        name: String,
        shape: Vec<usize>,
        values: usize,
    },
    #[error("checkpoint metadata is not valid JSON: {0}")]
    BadMetadata(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything needed to rebuild the model besides the tensors themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub seed: u64,
    pub best_val_accuracy: f64,
    pub series_len: usize,
    pub class_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    /// (name, extents, row-major values), in the model's parameter order.
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_model(model: &Model, best_val_accuracy: f64) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            tensors: model.to_named_tensors(),
            meta: CheckpointMeta {
                config: model.config.clone(),
                seed: model.config.seed,
                best_val_accuracy,
                series_len: model.series_len,
                class_count: model.class_count,
            },
        }
    }

    /// Rebuilds the model variant this checkpoint was saved from.
    pub fn to_model(&self) -> Result<Model, CheckpointError> {
        let mut model = Model::new(&self.meta.config, self.meta.series_len, self.meta.class_count)?;
        model.load_named_tensors(&self.tensors)?;
        Ok(model)
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&ckpt.version.to_le_bytes());
    out.extend_from_slice(&(ckpt.tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in &ckpt.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &extent in shape {
            out.extend_from_slice(&(extent as u64).to_le_bytes());
        }
        for &value in data {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    let meta = serde_json::to_string(&ckpt.meta).expect("metadata serializes");
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.at + n > self.bytes.len() {
            return Err(CheckpointError::Truncated { context });
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u32(&mut self, context: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4, context)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, context: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8, context)?.try_into().expect("8 bytes"),
        ))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            got: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| CheckpointError::BadTensorName)?
            .to_string();
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("tensor extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8, "tensor values")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if data.len() != numel {
            return Err(CheckpointError::ShapeDataMismatch {
                name,
                shape,
                values: data.len(),
            });
        }
        tensors.push((name, shape, data));
    }
    let meta_len = r.u64("metadata length")? as usize;
    let meta_bytes = r.take(meta_len, "metadata")?;
    let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)?;
    if r.remaining() != 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()));
    }
    Ok(Checkpoint {
        version,
        tensors,
        meta,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let bytes = encode(ckpt);
    // Sibling temp file plus rename keeps partially written checkpoints
    // from ever being visible under the final name.
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!("{name}.tmp"));
    fs::write(&tmp, &bytes).map_err(|source| CheckpointError::Io {
        action: "write",
        path: tmp.display().to_string(),
        source,
    })?;
    fs::rename(&tmp, path).map_err(|source| CheckpointError::Io {
        action: "rename to",
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        action: "read",
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            tensors: vec![
                ("a.w".to_string(), vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, 1e-12, 7.0]),
                ("a.b".to_string(), vec![3], vec![0.5, 0.25, -0.125]),
            ],
            meta: CheckpointMeta {
                config: TrainConfig::default(),
                seed: 42,
                best_val_accuracy: 0.875,
                series_len: 128,
                class_count: 2,
            },
        }
    }

    #[test]
    fn encode_decode_round_trip_is_byte_identical() {
        let ckpt = sample_checkpoint();
        let bytes = encode(&ckpt);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn header_layout_matches_the_format() {
        let bytes = encode(&sample_checkpoint());
        assert_eq!(&bytes[0..4], b"HITS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        // First tensor record: name length then the name itself.
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(&bytes[16..19], b"a.w");
    }

    #[test]
    fn corrupted_magic_is_not_a_checkpoint() {
        let mut bytes = encode(&sample_checkpoint());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn future_version_is_rejected_distinctly() {
        let mut bytes = encode(&sample_checkpoint());
        bytes[4] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(CheckpointError::VersionMismatch { got: 9, .. })
        ));
    }

    #[test]
    fn truncation_is_reported_wherever_it_happens() {
        let bytes = encode(&sample_checkpoint());
        for cut in [2, 6, 10, 14, 40, bytes.len() - 1] {
            let err = decode(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, CheckpointError::Truncated { .. })
                    || matches!(err, CheckpointError::BadMetadata(_)),
                "cut at {cut}: {err:?}"
            );
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = encode(&sample_checkpoint());
        bytes.push(0);
        assert!(matches!(
            decode(&bytes),
            Err(CheckpointError::TrailingBytes(1))
        ));
    }

    #[test]
    fn file_round_trip_preserves_bytes() {
        let ckpt = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.hits");
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let second = dir.path().join("again.hits");
        save_checkpoint(&second, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&second).unwrap());
    }

    #[test]
    fn missing_file_reports_io_error() {
        let err = load_checkpoint(Path::new("/nonexistent/never.hits")).unwrap_err();
        assert!(matches!(err, CheckpointError::Io { action: "read", .. }));
    }
}
