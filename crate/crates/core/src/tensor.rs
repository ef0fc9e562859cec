//! Dense f64 tensors with a tape-based reverse-mode gradient engine.
//!
//! Every operation appends a node to a [`Tape`]; `backward` replays the tape
//! in reverse and accumulates gradients into leaves that requested them.
//! Tapes are cheap and meant to be rebuilt for every training step.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {got:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("{op}: data length {got} does not match shape {shape:?} ({expected} elements)")]
    DataLength {
        op: &'static str,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: requires at least one input")]
    EmptyInput { op: &'static str },
    #[error("{op}: reduction over an empty axis")]
    EmptyReduce { op: &'static str },
    #[error("{op}: index {index} out of bounds for extent {extent}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A dense row-major tensor. `grad` is populated by [`Tape::backward`] for
/// tensors that participate in differentiation.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                op: "tensor",
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A named persistent parameter. Parameters live outside any tape; each
/// training step registers them as leaves on a fresh tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Xavier/Glorot uniform initialization: entries drawn from
/// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)). Deterministic in `seed`.
pub fn xavier_init(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::zeros(shape.to_vec());
    fill_xavier(&mut t.data, shape, &mut rng);
    t
}

/// Fills `data` with Xavier-uniform samples drawn from `rng`.
/// For rank >= 2 the fan-in is the product of all trailing extents and the
/// fan-out is the leading extent; rank-1 tensors use their length for both.
pub fn fill_xavier(data: &mut [f64], shape: &[usize], rng: &mut ChaCha8Rng) {
    let (fan_in, fan_out) = match shape.len() {
        0 => (1usize, 1usize),
        1 => (shape[0], shape[0]),
        _ => (shape[1..].iter().product(), shape[0]),
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in data.iter_mut() {
        *v = rng.random_range(-bound..bound);
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Transpose { a: TensorId },
    Add { a: TensorId, b: TensorId },
    AddRow { a: TensorId, bias: TensorId },
    Mul { a: TensorId, b: TensorId },
    Div { a: TensorId, b: TensorId },
    Scale { a: TensorId, factor: f64 },
    Relu { a: TensorId },
    Exp { a: TensorId },
    Log { a: TensorId },
    Clamp { a: TensorId, lo: f64, hi: f64 },
    SoftmaxRows { a: TensorId },
    LayerNormRows { a: TensorId, gain: TensorId, bias: TensorId, eps: f64 },
    MeanRows { a: TensorId },
    SumAxis { a: TensorId, axis: usize },
    SumAll { a: TensorId },
    ConcatCols { parts: Vec<TensorId> },
    ConcatVecs { parts: Vec<TensorId> },
    StackRows { parts: Vec<TensorId> },
    PickPerRow { a: TensorId, indices: Vec<usize> },
    NormalizeRows { a: TensorId },
    Reshape { a: TensorId },
}

/// The computation record: tensors plus the operations that produced them.
#[derive(Debug, Default)]
pub struct Tape {
    tensors: Vec<Tensor>,
    ops: Vec<Op>,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

// acc[i][p] += sum_j g[i][j] * b[p][j]   (G . B^T without materializing B^T)
fn acc_matmul_gbt(acc: &mut [f64], g: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let a_row = &mut acc[i * k..(i + 1) * k];
        for (p, slot) in a_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut dot = 0.0;
            for (&gv, &bv) in g_row.iter().zip(b_row) {
                dot += gv * bv;
            }
            *slot += dot;
        }
    }
}

// acc[p][j] += sum_i a[i][p] * g[i][j]   (A^T . G without materializing A^T)
fn acc_matmul_atg(acc: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let acc_row = &mut acc[p * n..(p + 1) * n];
            for (slot, &gv) in acc_row.iter_mut().zip(g_row) {
                *slot += av * gv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.tensors[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.tensors[id.0].data
    }

    /// Gradient of the most recent `backward` call, if this tensor takes part
    /// in differentiation.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.tensors[id.0].grad.as_deref()
    }

    fn push(&mut self, mut tensor: Tensor, op: Op, requires_grad: bool) -> TensorId {
        // Non-finite values are allowed to propagate; callers surface them
        // as typed errors where results leave the tape (loss, probabilities,
        // embeddings) so extreme configurations fail cleanly, not fatally.
        tensor.requires_grad = requires_grad;
        self.tensors.push(tensor);
        self.ops.push(op);
        TensorId(self.tensors.len() - 1)
    }

    fn requires(&self, id: TensorId) -> bool {
        self.tensors[id.0].requires_grad
    }

    pub fn leaf(
        &mut self,
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
    ) -> Result<TensorId, TensorError> {
        let t = Tensor::new(data, shape)?;
        Ok(self.push(t, Op::Leaf, requires_grad))
    }

    /// Registers a parameter's current values as a differentiable leaf.
    pub fn leaf_param(&mut self, param: &Param) -> TensorId {
        let t = Tensor::new(param.data.clone(), param.shape.clone())
            .expect("parameter shape/data length invariant");
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId, TensorError> {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.leaf(vec![value], vec![], false)
            .expect("scalar leaf is always well formed")
    }

    fn expect_rank2(&self, op: &'static str, id: TensorId) -> Result<(usize, usize), TensorError> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(TensorError::RankMismatch {
                op,
                expected: 2,
                got: s.to_vec(),
            });
        }
        Ok((s[0], s[1]))
    }

    fn expect_rank1(&self, op: &'static str, id: TensorId) -> Result<usize, TensorError> {
        let s = self.shape(id);
        if s.len() != 1 {
            return Err(TensorError::RankMismatch {
                op,
                expected: 1,
                got: s.to_vec(),
            });
        }
        Ok(s[0])
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (m, k) = self.expect_rank2("matmul", a)?;
        let (k2, n) = self.expect_rank2("matmul", b)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = matmul_raw(self.value(a), self.value(b), m, k, n);
        let rg = self.requires(a) || self.requires(b);
        let t = Tensor::new(data, vec![m, n]).expect("matmul output shape");
        Ok(self.push(t, Op::Matmul { a, b }, rg))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let (m, n) = self.expect_rank2("transpose", a)?;
        let src = self.value(a);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.requires(a);
        let t = Tensor::new(data, vec![n, m]).expect("transpose output shape");
        Ok(self.push(t, Op::Transpose { a }, rg))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        let t = Tensor::new(data, self.shape(a).to_vec()).expect("add output shape");
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    /// Adds a length-n bias vector to every row of an m x n matrix.
    pub fn add_row(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId, TensorError> {
        let (m, n) = self.expect_rank2("add_row", a)?;
        let bn = self.expect_rank1("add_row", bias)?;
        if bn != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).to_vec();
        let mut data = self.value(a).to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += b[j];
            }
        }
        let rg = self.requires(a) || self.requires(bias);
        let t = Tensor::new(data, vec![m, n]).expect("add_row output shape");
        Ok(self.push(t, Op::AddRow { a, bias }, rg))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        let t = Tensor::new(data, self.shape(a).to_vec()).expect("mul output shape");
        Ok(self.push(t, Op::Mul { a, b }, rg))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "div",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x / y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        let t = Tensor::new(data, self.shape(a).to_vec()).expect("div output shape");
        Ok(self.push(t, Op::Div { a, b }, rg))
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> TensorId {
        let data: Vec<f64> = self.value(a).iter().map(|&x| x * factor).collect();
        let rg = self.requires(a);
        let t = Tensor::new(data, self.shape(a).to_vec()).expect("scale output shape");
        self.push(t, Op::Scale { a, factor }, rg)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let rg = self.requires(a);
        let t = Tensor::new(data, self.shape(a).to_vec()).expect("relu output shape");
        self.push(t, Op::Relu { a }, rg)
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.value(a).iter().map(|&x| x.exp()).collect();
        let rg = self.requires(a);
        let t = Tensor::new(data, self.shape(a).to_vec()).expect("exp output shape");
        self.push(t, Op::Exp { a }, rg)
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.value(a).iter().map(|&x| x.ln()).collect();
        let rg = self.requires(a);
        let t = Tensor::new(data, self.shape(a).to_vec()).expect("log output shape");
        self.push(t, Op::Log { a }, rg)
    }

    pub fn clamp(&mut self, a: TensorId, lo: f64, hi: f64) -> TensorId {
        let data: Vec<f64> = self.value(a).iter().map(|&x| x.clamp(lo, hi)).collect();
        let rg = self.requires(a);
        let t = Tensor::new(data, self.shape(a).to_vec()).expect("clamp output shape");
        self.push(t, Op::Clamp { a, lo, hi }, rg)
    }

    /// Row-wise softmax with max-subtraction for overflow safety.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let (m, n) = self.expect_rank2("softmax_rows", a)?;
        if n == 0 {
            return Err(TensorError::EmptyReduce { op: "softmax_rows" });
        }
        let mut data = self.value(a).to_vec();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let rg = self.requires(a);
        let t = Tensor::new(data, vec![m, n]).expect("softmax output shape");
        Ok(self.push(t, Op::SoftmaxRows { a }, rg))
    }

    /// Row-wise layer normalization with learnable per-column affine rescale:
    /// y = gain * (x - mean) / sqrt(var + eps) + bias, variance is the
    /// population variance. `gain` and `bias` are length-n vectors.
    pub fn layer_norm_rows(
        &mut self,
        a: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        let (m, n) = self.expect_rank2("layer_norm", a)?;
        if n == 0 {
            return Err(TensorError::EmptyReduce { op: "layer_norm" });
        }
        for affine in [gain, bias] {
            let shape = self.shape(affine);
            if shape != [n] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: vec![m, n],
                    rhs: shape.to_vec(),
                });
            }
        }
        let mut data = self.value(a).to_vec();
        let gain_data = self.value(gain).to_vec();
        let bias_data = self.value(bias).to_vec();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * gain_data[j] + bias_data[j];
            }
        }
        let rg = self.requires(a) || self.requires(gain) || self.requires(bias);
        let t = Tensor::new(data, vec![m, n]).expect("layer_norm output shape");
        Ok(self.push(t, Op::LayerNormRows { a, gain, bias, eps }, rg))
    }

    /// Mean over rows: m x n -> n. Errors on zero rows.
    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let (m, n) = self.expect_rank2("mean_rows", a)?;
        if m == 0 {
            return Err(TensorError::EmptyReduce { op: "mean_rows" });
        }
        let src = self.value(a);
        let mut data = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                data[j] += src[i * n + j];
            }
        }
        for v in data.iter_mut() {
            *v /= m as f64;
        }
        let rg = self.requires(a);
        let t = Tensor::new(data, vec![n]).expect("mean_rows output shape");
        Ok(self.push(t, Op::MeanRows { a }, rg))
    }

    /// Sums an m x n matrix along `axis` (0: down columns -> n, 1: across rows -> m).
    pub fn sum_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId, TensorError> {
        let (m, n) = self.expect_rank2("sum_axis", a)?;
        if axis > 1 {
            return Err(TensorError::IndexOutOfBounds {
                op: "sum_axis",
                index: axis,
                extent: 2,
            });
        }
        let src = self.value(a);
        let data = if axis == 0 {
            let mut out = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    out[j] += src[i * n + j];
                }
            }
            out
        } else {
            let mut out = vec![0.0; m];
            for i in 0..m {
                out[i] = src[i * n..(i + 1) * n].iter().sum();
            }
            out
        };
        let len = data.len();
        let rg = self.requires(a);
        let t = Tensor::new(data, vec![len]).expect("sum_axis output shape");
        Ok(self.push(t, Op::SumAxis { a, axis }, rg))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.value(a).iter().sum();
        let rg = self.requires(a);
        let t = Tensor::new(vec![total], vec![]).expect("sum_all output shape");
        self.push(t, Op::SumAll { a }, rg)
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat_cols" });
        }
        let (rows, _) = self.expect_rank2("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.expect_rank2("concat_cols", p)?;
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p);
            for i in 0..rows {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        let t = Tensor::new(data, vec![rows, total]).expect("concat_cols output shape");
        Ok(self.push(
            t,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenates rank-1 tensors end to end.
    pub fn concat_vecs(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat_vecs" });
        }
        let mut data = Vec::new();
        for &p in parts {
            self.expect_rank1("concat_vecs", p)?;
            data.extend_from_slice(self.value(p));
        }
        let len = data.len();
        let rg = parts.iter().any(|&p| self.requires(p));
        let t = Tensor::new(data, vec![len]).expect("concat_vecs output shape");
        Ok(self.push(
            t,
            Op::ConcatVecs {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Stacks equal-length rank-1 tensors into a matrix, one per row.
    pub fn stack_rows(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "stack_rows" });
        }
        let width = self.expect_rank1("stack_rows", parts[0])?;
        let mut data = Vec::with_capacity(parts.len() * width);
        for &p in parts {
            let w = self.expect_rank1("stack_rows", p)?;
            if w != width {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            data.extend_from_slice(self.value(p));
        }
        let rows = parts.len();
        let rg = parts.iter().any(|&p| self.requires(p));
        let t = Tensor::new(data, vec![rows, width]).expect("stack_rows output shape");
        Ok(self.push(
            t,
            Op::StackRows {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Picks one entry per row: out[i] = a[i, indices[i]].
    pub fn pick_per_row(
        &mut self,
        a: TensorId,
        indices: &[usize],
    ) -> Result<TensorId, TensorError> {
        let (m, n) = self.expect_rank2("pick_per_row", a)?;
        if indices.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "pick_per_row",
                lhs: vec![m, n],
                rhs: vec![indices.len()],
            });
        }
        for &ix in indices {
            if ix >= n {
                return Err(TensorError::IndexOutOfBounds {
                    op: "pick_per_row",
                    index: ix,
                    extent: n,
                });
            }
        }
        let src = self.value(a);
        let data: Vec<f64> = indices
            .iter()
            .enumerate()
            .map(|(i, &ix)| src[i * n + ix])
            .collect();
        let rg = self.requires(a);
        let t = Tensor::new(data, vec![m]).expect("pick_per_row output shape");
        Ok(self.push(
            t,
            Op::PickPerRow {
                a,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Scales each row to unit Euclidean norm. Zero rows stay zero and
    /// receive zero gradient.
    pub fn normalize_rows(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let (m, n) = self.expect_rank2("normalize_rows", a)?;
        let mut data = self.value(a).to_vec();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        let rg = self.requires(a);
        let t = Tensor::new(data, vec![m, n]).expect("normalize_rows output shape");
        Ok(self.push(t, Op::NormalizeRows { a }, rg))
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId, TensorError> {
        let expected: usize = shape.iter().product();
        let got = self.tensors[a.0].numel();
        if expected != got {
            return Err(TensorError::DataLength {
                op: "reshape",
                shape,
                expected,
                got,
            });
        }
        let data = self.value(a).to_vec();
        let rg = self.requires(a);
        let t = Tensor::new(data, shape).expect("reshape output shape");
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// tensor that requires gradients; leaves off the path get zeros.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.tensors[loss.0].numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let n = self.tensors.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if !self.tensors[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for i in 0..n {
            if !self.tensors[i].requires_grad {
                continue;
            }
            let g = grads[i]
                .take()
                .unwrap_or_else(|| vec![0.0; self.tensors[i].numel()]);
            self.tensors[i].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, out: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let acc = |grads: &mut [Option<Vec<f64>>], id: TensorId, f: &mut dyn FnMut(&mut [f64])| {
            if !self.tensors[id.0].requires_grad {
                return;
            }
            let buf = grads[id.0].get_or_insert_with(|| vec![0.0; self.tensors[id.0].numel()]);
            f(buf);
        };
        match &self.ops[out] {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let a_data = self.value(*a);
                let b_data = self.value(*b);
                acc(grads, *a, &mut |buf| {
                    acc_matmul_gbt(buf, g, b_data, m, k, n);
                });
                acc(grads, *b, &mut |buf| {
                    acc_matmul_atg(buf, a_data, g, m, k, n);
                });
            }
            Op::Transpose { a } => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                acc(grads, *a, &mut |buf| {
                    for i in 0..m {
                        for j in 0..n {
                            buf[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                acc(grads, *a, &mut |buf| {
                    for (s, &gv) in buf.iter_mut().zip(g) {
                        *s += gv;
                    }
                });
                acc(grads, *b, &mut |buf| {
                    for (s, &gv) in buf.iter_mut().zip(g) {
                        *s += gv;
                    }
                });
            }
            Op::AddRow { a, bias } => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                acc(grads, *a, &mut |buf| {
                    for (s, &gv) in buf.iter_mut().zip(g) {
                        *s += gv;
                    }
                });
                acc(grads, *bias, &mut |buf| {
                    for i in 0..m {
                        for j in 0..n {
                            buf[j] += g[i * n + j];
                        }
                    }
                });
            }
            Op::Mul { a, b } => {
                let a_data = self.value(*a);
                let b_data = self.value(*b);
                acc(grads, *a, &mut |buf| {
                    for ((s, &gv), &bv) in buf.iter_mut().zip(g).zip(b_data) {
                        *s += gv * bv;
                    }
                });
                acc(grads, *b, &mut |buf| {
                    for ((s, &gv), &av) in buf.iter_mut().zip(g).zip(a_data) {
                        *s += gv * av;
                    }
                });
            }
            Op::Div { a, b } => {
                let a_data = self.value(*a);
                let b_data = self.value(*b);
                acc(grads, *a, &mut |buf| {
                    for ((s, &gv), &bv) in buf.iter_mut().zip(g).zip(b_data) {
                        *s += gv / bv;
                    }
                });
                acc(grads, *b, &mut |buf| {
                    for (i, s) in buf.iter_mut().enumerate() {
                        *s -= g[i] * a_data[i] / (b_data[i] * b_data[i]);
                    }
                });
            }
            Op::Scale { a, factor } => {
                let f = *factor;
                acc(grads, *a, &mut |buf| {
                    for (s, &gv) in buf.iter_mut().zip(g) {
                        *s += gv * f;
                    }
                });
            }
            Op::Relu { a } => {
                let a_data = self.value(*a);
                acc(grads, *a, &mut |buf| {
                    for (i, s) in buf.iter_mut().enumerate() {
                        if a_data[i] > 0.0 {
                            *s += g[i];
                        }
                    }
                });
            }
            Op::Exp { a } => {
                let y = self.value(TensorId(out));
                acc(grads, *a, &mut |buf| {
                    for (i, s) in buf.iter_mut().enumerate() {
                        *s += g[i] * y[i];
                    }
                });
            }
            Op::Log { a } => {
                let a_data = self.value(*a);
                acc(grads, *a, &mut |buf| {
                    for (i, s) in buf.iter_mut().enumerate() {
                        *s += g[i] / a_data[i];
                    }
                });
            }
            Op::Clamp { a, lo, hi } => {
                let a_data = self.value(*a);
                let (lo, hi) = (*lo, *hi);
                acc(grads, *a, &mut |buf| {
                    for (i, s) in buf.iter_mut().enumerate() {
                        if a_data[i] >= lo && a_data[i] <= hi {
                            *s += g[i];
                        }
                    }
                });
            }
            Op::SoftmaxRows { a } => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let p = self.value(TensorId(out));
                acc(grads, *a, &mut |buf| {
                    for i in 0..m {
                        let p_row = &p[i * n..(i + 1) * n];
                        let g_row = &g[i * n..(i + 1) * n];
                        let dot: f64 = p_row.iter().zip(g_row).map(|(&pv, &gv)| pv * gv).sum();
                        let b_row = &mut buf[i * n..(i + 1) * n];
                        for j in 0..n {
                            b_row[j] += p_row[j] * (g_row[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNormRows { a, gain, bias, eps } => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let a_data = self.value(*a);
                let gain_data = self.value(*gain);
                let eps = *eps;
                // Recompute per-row standardized values; cheaper than caching
                // them in the record.
                let mut xhat = vec![0.0; m * n];
                let mut inv_std = vec![0.0; m];
                for i in 0..m {
                    let row = &a_data[i * n..(i + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    inv_std[i] = inv;
                    for j in 0..n {
                        xhat[i * n + j] = (row[j] - mean) * inv;
                    }
                }
                acc(grads, *bias, &mut |buf| {
                    for i in 0..m {
                        for j in 0..n {
                            buf[j] += g[i * n + j];
                        }
                    }
                });
                acc(grads, *gain, &mut |buf| {
                    for i in 0..m {
                        for j in 0..n {
                            buf[j] += g[i * n + j] * xhat[i * n + j];
                        }
                    }
                });
                acc(grads, *a, &mut |buf| {
                    let mut gh = vec![0.0; n];
                    for i in 0..m {
                        let x_row = &xhat[i * n..(i + 1) * n];
                        for j in 0..n {
                            gh[j] = g[i * n + j] * gain_data[j];
                        }
                        let g_mean = gh.iter().sum::<f64>() / n as f64;
                        let gx_mean =
                            gh.iter().zip(x_row).map(|(&gv, &xv)| gv * xv).sum::<f64>() / n as f64;
                        let b_row = &mut buf[i * n..(i + 1) * n];
                        for j in 0..n {
                            b_row[j] += inv_std[i] * (gh[j] - g_mean - x_row[j] * gx_mean);
                        }
                    }
                });
            }
            Op::MeanRows { a } => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let inv = 1.0 / m as f64;
                acc(grads, *a, &mut |buf| {
                    for i in 0..m {
                        for j in 0..n {
                            buf[i * n + j] += g[j] * inv;
                        }
                    }
                });
            }
            Op::SumAxis { a, axis } => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let axis = *axis;
                acc(grads, *a, &mut |buf| {
                    for i in 0..m {
                        for j in 0..n {
                            buf[i * n + j] += if axis == 0 { g[j] } else { g[i] };
                        }
                    }
                });
            }
            Op::SumAll { a } => {
                let gv = g[0];
                acc(grads, *a, &mut |buf| {
                    for s in buf.iter_mut() {
                        *s += gv;
                    }
                });
            }
            Op::ConcatCols { parts } => {
                let rows = self.shape(TensorId(out))[0];
                let total = self.shape(TensorId(out))[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    let off = offset;
                    acc(grads, p, &mut |buf| {
                        for i in 0..rows {
                            for j in 0..w {
                                buf[i * w + j] += g[i * total + off + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatVecs { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[0];
                    let off = offset;
                    acc(grads, p, &mut |buf| {
                        for j in 0..w {
                            buf[j] += g[off + j];
                        }
                    });
                    offset += w;
                }
            }
            Op::StackRows { parts } => {
                let width = self.shape(TensorId(out))[1];
                for (i, &p) in parts.iter().enumerate() {
                    acc(grads, p, &mut |buf| {
                        for j in 0..width {
                            buf[j] += g[i * width + j];
                        }
                    });
                }
            }
            Op::PickPerRow { a, indices } => {
                let n = self.shape(*a)[1];
                acc(grads, *a, &mut |buf| {
                    for (i, &ix) in indices.iter().enumerate() {
                        buf[i * n + ix] += g[i];
                    }
                });
            }
            Op::NormalizeRows { a } => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let a_data = self.value(*a);
                let y = self.value(TensorId(out));
                acc(grads, *a, &mut |buf| {
                    for i in 0..m {
                        let row = &a_data[i * n..(i + 1) * n];
                        let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
                        if norm == 0.0 {
                            continue;
                        }
                        let y_row = &y[i * n..(i + 1) * n];
                        let g_row = &g[i * n..(i + 1) * n];
                        let dot: f64 = g_row.iter().zip(y_row).map(|(&gv, &yv)| gv * yv).sum();
                        let b_row = &mut buf[i * n..(i + 1) * n];
                        for j in 0..n {
                            b_row[j] += (g_row[j] - y_row[j] * dot) / norm;
                        }
                    }
                });
            }
            Op::Reshape { a } => {
                acc(grads, *a, &mut |buf| {
                    for (s, &gv) in buf.iter_mut().zip(g) {
                        *s += gv;
                    }
                });
            }
        }
    }
}
