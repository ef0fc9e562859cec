//! A time-series classifier that fuses two views of each series: a
//! multiscale self-attention encoder over segment embeddings, and message
//! passing over a per-sample Vietoris-Rips complex built from patch
//! similarities. A contrastive objective aligns the two views; a softmax
//! head classifies their concatenation.
//!
//! Modules, bottom up:
//! - [`tensor`]: dense tensors with reverse-mode differentiation.
//! - [`data`]: TSV loading, normalization, splits, batching, synthetic data.
//! - [`simplicial`]: patching, similarity, Rips construction, operators.
//! - [`temporal`]: the multiscale self-attention branch.
//! - [`spatial`]: the simplicial message passing branch.
//! - [`objectives`]: contrastive and classification losses.
//! - [`config`]: run configuration and the key=value file format.
//! - [`model`]: the assembled classifier and its parameter registry.
//! - [`train`]: Adam, epochs, early stopping, grid search, ablations.
//! - [`checkpoint`]: binary persistence.
//! - [`eval`]: accuracy, Davies-Bouldin, embedding export, reports.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod simplicial;
pub mod spatial;
pub mod temporal;
pub mod tensor;
pub mod train;
