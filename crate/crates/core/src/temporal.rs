//! Multiscale temporal encoder.
//!
//! Each configured scale s cuts the series into floor(L/s) segments of
//! length s, embeds them, adds sinusoidal position information, runs one
//! self-attention encoder layer, and mean-pools over segments. The final
//! temporal representation concatenates the per-scale vectors.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{fill_xavier, Param, Tape, TensorError, TensorId};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum TemporalError {
    #[error("scale set must not be empty")]
    EmptyScales,
    #[error("scale 0 is not a valid segment length")]
    ZeroScale,
    #[error("scale {scale} exceeds series length {len}")]
    ScaleTooLarge { scale: usize, len: usize },
    #[error("scale {0} appears more than once")]
    DuplicateScale(usize),
    #[error("attention heads {heads} must divide the latent dimension {d}")]
    HeadsDontDivide { d: usize, heads: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Checks that the scales are distinct, positive, and fit the series.
pub fn validate_scales(scales: &[usize], series_len: usize) -> Result<(), TemporalError> {
    if scales.is_empty() {
        return Err(TemporalError::EmptyScales);
    }
    for (i, &s) in scales.iter().enumerate() {
        if s == 0 {
            return Err(TemporalError::ZeroScale);
        }
        if s > series_len {
            return Err(TemporalError::ScaleTooLarge {
                scale: s,
                len: series_len,
            });
        }
        if scales[..i].contains(&s) {
            return Err(TemporalError::DuplicateScale(s));
        }
    }
    Ok(())
}

/// Cuts `x` into floor(len / s) segments of length `s`, dropping the
/// trailing remainder.
pub fn segment(x: &[f64], s: usize) -> Result<Vec<Vec<f64>>, TemporalError> {
    if s == 0 {
        return Err(TemporalError::ZeroScale);
    }
    if s > x.len() {
        return Err(TemporalError::ScaleTooLarge {
            scale: s,
            len: x.len(),
        });
    }
    let count = x.len() / s;
    Ok((0..count).map(|i| x[i * s..(i + 1) * s].to_vec()).collect())
}

/// Sinusoidal position code for 1-based position `t`:
/// pe[2k] = sin(t * w_k), pe[2k+1] = cos(t * w_k), w_k = 10000^(-2k/d).
pub fn positional_encoding(t: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; d];
    let mut k = 0;
    while 2 * k < d {
        let omega = 10000f64.powf(-2.0 * k as f64 / d as f64);
        let arg = t as f64 * omega;
        pe[2 * k] = arg.sin();
        if 2 * k + 1 < d {
            pe[2 * k + 1] = arg.cos();
        }
        k += 1;
    }
    pe
}

fn positional_matrix(rows: usize, d: usize) -> Vec<f64> {
    let mut data = Vec::with_capacity(rows * d);
    for t in 1..=rows {
        data.extend(positional_encoding(t, d));
    }
    data
}

#[derive(Debug, Clone)]
pub struct AttentionHead {
    pub w_q: Param,
    pub w_k: Param,
    pub w_v: Param,
}

/// Parameters of one per-scale encoder: input embedding, multi-head
/// self-attention, a position-wise feed-forward block, and the affine
/// gain/bias pairs of the two layer norms.
#[derive(Debug, Clone)]
pub struct ScaleEncoder {
    pub scale: usize,
    pub dim: usize,
    pub head_dim: usize,
    pub w_input: Param,
    pub b_input: Param,
    pub heads: Vec<AttentionHead>,
    pub w_merge: Param,
    pub ln1_gain: Param,
    pub ln1_bias: Param,
    pub ff_w1: Param,
    pub ff_b1: Param,
    pub ff_w2: Param,
    pub ff_b2: Param,
    pub ln2_gain: Param,
    pub ln2_bias: Param,
}

fn new_param(name: String, shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Param {
    let mut data = vec![0.0; shape.iter().product()];
    fill_xavier(&mut data, &shape, rng);
    Param { name, shape, data }
}

fn zero_param(name: String, shape: Vec<usize>) -> Param {
    let n = shape.iter().product();
    Param {
        name,
        shape,
        data: vec![0.0; n],
    }
}

fn one_param(name: String, shape: Vec<usize>) -> Param {
    let n = shape.iter().product();
    Param {
        name,
        shape,
        data: vec![1.0; n],
    }
}

impl ScaleEncoder {
    /// `d` must be divisible by `heads`; the feed-forward width is 4d.
    pub fn new(
        scale: usize,
        d: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TemporalError> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(TemporalError::HeadsDontDivide { d, heads });
        }
        let head_dim = d / heads;
        let d_ff = 4 * d;
        let p = format!("temporal.s{scale}");
        let head_params = (0..heads)
            .map(|i| AttentionHead {
                w_q: new_param(format!("{p}.head{i}.w_q"), vec![d, head_dim], rng),
                w_k: new_param(format!("{p}.head{i}.w_k"), vec![d, head_dim], rng),
                w_v: new_param(format!("{p}.head{i}.w_v"), vec![d, head_dim], rng),
            })
            .collect();
        Ok(ScaleEncoder {
            scale,
            dim: d,
            head_dim,
            w_input: new_param(format!("{p}.w_input"), vec![scale, d], rng),
            b_input: zero_param(format!("{p}.b_input"), vec![d]),
            heads: head_params,
            w_merge: new_param(format!("{p}.w_merge"), vec![d, d], rng),
            ln1_gain: one_param(format!("{p}.ln1_gain"), vec![d]),
            ln1_bias: zero_param(format!("{p}.ln1_bias"), vec![d]),
            ff_w1: new_param(format!("{p}.ff_w1"), vec![d, d_ff], rng),
            ff_b1: zero_param(format!("{p}.ff_b1"), vec![d_ff]),
            ff_w2: new_param(format!("{p}.ff_w2"), vec![d_ff, d], rng),
            ff_b2: zero_param(format!("{p}.ff_b2"), vec![d]),
            ln2_gain: one_param(format!("{p}.ln2_gain"), vec![d]),
            ln2_bias: zero_param(format!("{p}.ln2_bias"), vec![d]),
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.w_input, &self.b_input];
        for h in &self.heads {
            out.push(&h.w_q);
            out.push(&h.w_k);
            out.push(&h.w_v);
        }
        out.extend([
            &self.w_merge,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.ff_w1,
            &self.ff_b1,
            &self.ff_w2,
            &self.ff_b2,
            &self.ln2_gain,
            &self.ln2_bias,
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = vec![&mut self.w_input, &mut self.b_input];
        for h in &mut self.heads {
            out.push(&mut h.w_q);
            out.push(&mut h.w_k);
            out.push(&mut h.w_v);
        }
        out.push(&mut self.w_merge);
        out.push(&mut self.ln1_gain);
        out.push(&mut self.ln1_bias);
        out.push(&mut self.ff_w1);
        out.push(&mut self.ff_b1);
        out.push(&mut self.ff_w2);
        out.push(&mut self.ff_b2);
        out.push(&mut self.ln2_gain);
        out.push(&mut self.ln2_bias);
        out
    }

    /// Registers every parameter as a tape leaf, in `params()` order.
    pub fn register(&self, tape: &mut Tape) -> ScaleEncoderIds {
        ScaleEncoderIds {
            w_input: tape.leaf_param(&self.w_input),
            b_input: tape.leaf_param(&self.b_input),
            heads: self
                .heads
                .iter()
                .map(|h| HeadIds {
                    w_q: tape.leaf_param(&h.w_q),
                    w_k: tape.leaf_param(&h.w_k),
                    w_v: tape.leaf_param(&h.w_v),
                })
                .collect(),
            w_merge: tape.leaf_param(&self.w_merge),
            ln1_gain: tape.leaf_param(&self.ln1_gain),
            ln1_bias: tape.leaf_param(&self.ln1_bias),
            ff_w1: tape.leaf_param(&self.ff_w1),
            ff_b1: tape.leaf_param(&self.ff_b1),
            ff_w2: tape.leaf_param(&self.ff_w2),
            ff_b2: tape.leaf_param(&self.ff_b2),
            ln2_gain: tape.leaf_param(&self.ln2_gain),
            ln2_bias: tape.leaf_param(&self.ln2_bias),
        }
    }

    /// Embeds the segments of one series and runs the encoder layer,
    /// returning the mean-pooled scale vector (rank 1, length d).
    pub fn forward(
        &self,
        tape: &mut Tape,
        ids: &ScaleEncoderIds,
        x: &[f64],
    ) -> Result<TensorId, TemporalError> {
        let segments = segment(x, self.scale)?;
        let rows = segments.len();
        let flat: Vec<f64> = segments.into_iter().flatten().collect();
        let seg = tape.constant(flat, vec![rows, self.scale])?;
        let lin = tape.matmul(seg, ids.w_input)?;
        let lin = tape.add_row(lin, ids.b_input)?;
        let emb = tape.relu(lin);
        let pos = tape.constant(positional_matrix(rows, self.dim), vec![rows, self.dim])?;
        let u = tape.add(emb, pos)?;
        let z = encoder_layer(tape, u, ids, self.head_dim)?;
        Ok(tape.mean_rows(z)?)
    }
}

#[derive(Debug, Clone)]
pub struct HeadIds {
    pub w_q: TensorId,
    pub w_k: TensorId,
    pub w_v: TensorId,
}

#[derive(Debug, Clone)]
pub struct ScaleEncoderIds {
    pub w_input: TensorId,
    pub b_input: TensorId,
    pub heads: Vec<HeadIds>,
    pub w_merge: TensorId,
    pub ln1_gain: TensorId,
    pub ln1_bias: TensorId,
    pub ff_w1: TensorId,
    pub ff_b1: TensorId,
    pub ff_w2: TensorId,
    pub ff_b2: TensorId,
    pub ln2_gain: TensorId,
    pub ln2_bias: TensorId,
}

impl ScaleEncoderIds {
    /// Ids in the same order as [`ScaleEncoder::params`].
    pub fn flatten(&self) -> Vec<TensorId> {
        let mut out = vec![self.w_input, self.b_input];
        for h in &self.heads {
            out.push(h.w_q);
            out.push(h.w_k);
            out.push(h.w_v);
        }
        out.extend([
            self.w_merge,
            self.ln1_gain,
            self.ln1_bias,
            self.ff_w1,
            self.ff_b1,
            self.ff_w2,
            self.ff_b2,
            self.ln2_gain,
            self.ln2_bias,
        ]);
        out
    }
}

/// One transformer encoder layer: scaled dot-product multi-head attention
/// and a feed-forward block, each wrapped in residual + layer norm.
pub fn encoder_layer(
    tape: &mut Tape,
    u: TensorId,
    ids: &ScaleEncoderIds,
    head_dim: usize,
) -> Result<TensorId, TemporalError> {
    let scale_factor = 1.0 / (head_dim as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(ids.heads.len());
    for head in &ids.heads {
        let q = tape.matmul(u, head.w_q)?;
        let k = tape.matmul(u, head.w_k)?;
        let v = tape.matmul(u, head.w_v)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scaled = tape.scale(scores, scale_factor);
        let weights = tape.softmax_rows(scaled)?;
        head_outputs.push(tape.matmul(weights, v)?);
    }
    let merged = tape.concat_cols(&head_outputs)?;
    let attended = tape.matmul(merged, ids.w_merge)?;
    let res1 = tape.add(u, attended)?;
    let u1 = tape.layer_norm_rows(res1, ids.ln1_gain, ids.ln1_bias, LAYER_NORM_EPS)?;

    let h1 = tape.matmul(u1, ids.ff_w1)?;
    let h1 = tape.add_row(h1, ids.ff_b1)?;
    let h1 = tape.relu(h1);
    let h2 = tape.matmul(h1, ids.ff_w2)?;
    let h2 = tape.add_row(h2, ids.ff_b2)?;
    let res2 = tape.add(u1, h2)?;
    Ok(tape.layer_norm_rows(res2, ids.ln2_gain, ids.ln2_bias, LAYER_NORM_EPS)?)
}

/// The full multiscale encoder: one [`ScaleEncoder`] per configured scale.
#[derive(Debug, Clone)]
pub struct TemporalEncoder {
    pub dim: usize,
    pub encoders: Vec<ScaleEncoder>,
}

impl TemporalEncoder {
    pub fn new(
        scales: &[usize],
        series_len: usize,
        d: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TemporalError> {
        validate_scales(scales, series_len)?;
        let encoders = scales
            .iter()
            .map(|&s| ScaleEncoder::new(s, d, heads, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TemporalEncoder { dim: d, encoders })
    }

    /// Concatenated per-scale vectors; length = scales * d.
    pub fn output_dim(&self) -> usize {
        self.encoders.len() * self.dim
    }

    pub fn params(&self) -> Vec<&Param> {
        self.encoders.iter().flat_map(|e| e.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.encoders
            .iter_mut()
            .flat_map(|e| e.params_mut())
            .collect()
    }

    pub fn register(&self, tape: &mut Tape) -> Vec<ScaleEncoderIds> {
        self.encoders.iter().map(|e| e.register(tape)).collect()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        ids: &[ScaleEncoderIds],
        x: &[f64],
    ) -> Result<TensorId, TemporalError> {
        let mut parts = Vec::with_capacity(self.encoders.len());
        for (enc, enc_ids) in self.encoders.iter().zip(ids) {
            parts.push(enc.forward(tape, enc_ids, x)?);
        }
        Ok(tape.concat_vecs(&parts)?)
    }
}
