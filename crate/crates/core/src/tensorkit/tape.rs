//! Wengert tape for reverse-mode autodiff.
//!
//! Forward calls compute values eagerly and record one op per node; running
//! `backward` replays the ops in reverse and accumulates gradients into the
//! `Params` store. Every reduction uses a fixed loop order, so repeated runs
//! are bit-identical.

use super::{Params, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

enum Op {
    Leaf,
    Matmul { a: VarId, b: VarId },
    Add { a: VarId, b: VarId },
    Mul { a: VarId, b: VarId },
    AddBias { x: VarId, b: VarId },
    MulBias { x: VarId, g: VarId },
    Tanh { x: VarId },
    Gelu { x: VarId },
    LayerNorm { x: VarId, inv_std: Vec<f64> },
    Softmax { x: VarId },
    Scale { x: VarId, c: f64 },
    ScaleVar { x: VarId, s: VarId },
    ScaleRows { x: VarId, a: VarId },
    Embed { table: VarId, indices: Vec<usize> },
    SliceRows { x: VarId, start: usize },
    SliceCols { x: VarId, start: usize },
    ConcatRows { xs: Vec<VarId> },
    ConcatCols { xs: Vec<VarId> },
    Transpose { x: VarId },
    Reshape { x: VarId },
    MeanRows { x: VarId },
    MaxRows { x: VarId, argmax: Vec<usize> },
    CrossEntropy { logits: VarId, gold: usize, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
}

/// Recorded forward pass with a single-use backward.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    param_cache: std::collections::BTreeMap<String, VarId>,
}

const LAYER_NORM_EPS: f64 = 1e-12;
const GELU_COEF: f64 = 0.044715;

fn gelu_value(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    let du = c * (1.0 + 3.0 * GELU_COEF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// out[m x n] += a[m x k] · b[k x n]
fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// out[m x k] += a[m x n] · bᵀ where b is [k x n]
fn matmul_bt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (kk, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// out[k x n] += aᵀ · b where a is [m x k], b is [m x n]
fn matmul_at_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op, param: Option<String>) -> VarId {
        self.nodes.push(Node { value, op, param });
        VarId(self.nodes.len() - 1)
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Record a non-trainable input.
    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.push(t, Op::Leaf, None)
    }

    /// Record a trainable parameter leaf; `backward` accumulates its
    /// gradient into the store entry with the same name. Repeated lookups
    /// of one name on the same tape share a single leaf, so parameter
    /// values must not change while a tape is alive.
    pub fn param(&mut self, params: &Params, name: &str) -> Result<VarId, TensorError> {
        if let Some(&id) = self.param_cache.get(name) {
            return Ok(id);
        }
        let p = params.get(name)?;
        let id = self.push(p.value.clone(), Op::Leaf, Some(p.name.clone()));
        self.param_cache.insert(p.name.clone(), id);
        Ok(id)
    }

    fn require_rank2(&self, op: &'static str, id: VarId) -> Result<(usize, usize), TensorError> {
        let t = self.value(id);
        if t.rank() != 2 {
            return Err(TensorError::Rank {
                op,
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        let (m, ka) = self.require_rank2("matmul", a)?;
        let (kb, n) = self.require_rank2("matmul", b)?;
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), m, ka, n, &mut out);
        let t = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(t, Op::Matmul { a, b }, None))
    }

    fn same_shape(&self, op: &'static str, a: VarId, b: VarId) -> Result<(), TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Elementwise sum of same-shape tensors.
    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(t, Op::Add { a, b }, None))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(t, Op::Mul { a, b }, None))
    }

    /// Add a length-C vector to every row of an [R x C] tensor.
    pub fn add_bias(&mut self, x: VarId, b: VarId) -> Result<VarId, TensorError> {
        let (_, c) = self.require_rank2("add_bias", x)?;
        if self.value(b).len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let bias = self.value(b).data().to_vec();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bias[i % c])
            .collect();
        let t = Tensor::from_vec(self.value(x).shape(), data)?;
        Ok(self.push(t, Op::AddBias { x, b }, None))
    }

    /// Multiply every row of an [R x C] tensor by a length-C vector.
    pub fn mul_bias(&mut self, x: VarId, g: VarId) -> Result<VarId, TensorError> {
        let (_, c) = self.require_rank2("mul_bias", x)?;
        if self.value(g).len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "mul_bias",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(g).shape().to_vec(),
            });
        }
        let gain = self.value(g).data().to_vec();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * gain[i % c])
            .collect();
        let t = Tensor::from_vec(self.value(x).shape(), data)?;
        Ok(self.push(t, Op::MulBias { x, g }, None))
    }

    pub fn tanh(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let data = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let t = Tensor::from_vec(self.value(x).shape(), data)?;
        Ok(self.push(t, Op::Tanh { x }, None))
    }

    /// GELU via the tanh approximation.
    pub fn gelu(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let data = self.value(x).data().iter().map(|&v| gelu_value(v)).collect();
        let t = Tensor::from_vec(self.value(x).shape(), data)?;
        Ok(self.push(t, Op::Gelu { x }, None))
    }

    /// Normalize each row over the last dimension to mean 0 / variance 1.
    /// Learned gain and shift are separate `mul_bias` / `add_bias` ops.
    pub fn layer_norm(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let t = self.value(x);
        let c = t.last_dim();
        if c == 0 {
            return Err(TensorError::Invalid("layer_norm on empty last dim".into()));
        }
        let rows = t.len() / c;
        let mut data = vec![0.0; t.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &t.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for (o, &v) in data[r * c..(r + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let out = Tensor::from_vec(t.shape(), data)?;
        Ok(self.push(out, Op::LayerNorm { x, inv_std }, None))
    }

    /// Row-wise softmax over the last dimension (max-subtracted).
    pub fn softmax(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let t = self.value(x);
        let c = t.last_dim();
        if c == 0 {
            return Err(TensorError::Invalid("softmax on empty last dim".into()));
        }
        let rows = t.len() / c;
        let mut data = vec![0.0; t.len()];
        for r in 0..rows {
            let row = &t.data()[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out_row = &mut data[r * c..(r + 1) * c];
            let mut sum = 0.0;
            for (o, &v) in out_row.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in out_row.iter_mut() {
                *o /= sum;
            }
        }
        let out = Tensor::from_vec(t.shape(), data)?;
        Ok(self.push(out, Op::Softmax { x }, None))
    }

    /// Multiply by a compile-time-known scalar constant.
    pub fn scale(&mut self, x: VarId, c: f64) -> Result<VarId, TensorError> {
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        let t = Tensor::from_vec(self.value(x).shape(), data)?;
        Ok(self.push(t, Op::Scale { x, c }, None))
    }

    /// Multiply by a single-element (trainable) tensor.
    pub fn scale_var(&mut self, x: VarId, s: VarId) -> Result<VarId, TensorError> {
        if self.value(s).len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "scale_var",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(s).shape().to_vec(),
            });
        }
        let sv = self.value(s).data()[0];
        let data = self.value(x).data().iter().map(|&v| v * sv).collect();
        let t = Tensor::from_vec(self.value(x).shape(), data)?;
        Ok(self.push(t, Op::ScaleVar { x, s }, None))
    }

    /// Multiply row r of an [R x C] tensor by entry r of a length-R vector.
    pub fn scale_rows(&mut self, x: VarId, a: VarId) -> Result<VarId, TensorError> {
        let (r, c) = self.require_rank2("scale_rows", x)?;
        if self.value(a).len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(a).shape().to_vec(),
            });
        }
        let weights = self.value(a).data().to_vec();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * weights[i / c])
            .collect();
        let t = Tensor::from_vec(self.value(x).shape(), data)?;
        Ok(self.push(t, Op::ScaleRows { x, a }, None))
    }

    /// Gather rows of a [V x d] table. Gradients scatter-add back into the
    /// table, so large embedding tables never need cloning per step.
    pub fn embed(&mut self, table: VarId, indices: &[usize]) -> Result<VarId, TensorError> {
        let (v, d) = self.require_rank2("embed", table)?;
        for &i in indices {
            if i >= v {
                return Err(TensorError::Index {
                    op: "embed",
                    index: i,
                    bound: v,
                });
            }
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::from_vec(&[indices.len(), d], data)?;
        Ok(self.push(
            t,
            Op::Embed {
                table,
                indices: indices.to_vec(),
            },
            None,
        ))
    }

    /// Copy rows [start, start+len) of a rank-2 tensor.
    pub fn slice_rows(&mut self, x: VarId, start: usize, len: usize) -> Result<VarId, TensorError> {
        let (r, c) = self.require_rank2("slice_rows", x)?;
        if start + len > r || len == 0 {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: start + len,
                bound: r,
            });
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let t = Tensor::from_vec(&[len, c], data)?;
        Ok(self.push(t, Op::SliceRows { x, start }, None))
    }

    /// Copy columns [start, start+len) of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: VarId, start: usize, len: usize) -> Result<VarId, TensorError> {
        let (r, c) = self.require_rank2("slice_cols", x)?;
        if start + len > c || len == 0 {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                bound: c,
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * len);
        for row in 0..r {
            data.extend_from_slice(&src[row * c + start..row * c + start + len]);
        }
        let t = Tensor::from_vec(&[r, len], data)?;
        Ok(self.push(t, Op::SliceCols { x, start }, None))
    }

    /// Stack rank-2 tensors with equal column counts, top to bottom.
    pub fn concat_rows(&mut self, xs: &[VarId]) -> Result<VarId, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::Invalid("concat_rows of zero tensors".into()));
        }
        let (_, c) = self.require_rank2("concat_rows", xs[0])?;
        let mut rows = 0;
        for &x in xs {
            let (r, cx) = self.require_rank2("concat_rows", x)?;
            if cx != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(xs[0]).shape().to_vec(),
                    rhs: self.value(x).shape().to_vec(),
                });
            }
            rows += r;
        }
        let mut data = Vec::with_capacity(rows * c);
        for &x in xs {
            data.extend_from_slice(self.value(x).data());
        }
        let t = Tensor::from_vec(&[rows, c], data)?;
        Ok(self.push(t, Op::ConcatRows { xs: xs.to_vec() }, None))
    }

    /// Place rank-2 tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, xs: &[VarId]) -> Result<VarId, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::Invalid("concat_cols of zero tensors".into()));
        }
        let (r, _) = self.require_rank2("concat_cols", xs[0])?;
        let mut cols = 0;
        for &x in xs {
            let (rx, cx) = self.require_rank2("concat_cols", x)?;
            if rx != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(xs[0]).shape().to_vec(),
                    rhs: self.value(x).shape().to_vec(),
                });
            }
            cols += cx;
        }
        let mut data = Vec::with_capacity(r * cols);
        for row in 0..r {
            for &x in xs {
                let cx = self.value(x).shape()[1];
                data.extend_from_slice(&self.value(x).data()[row * cx..(row + 1) * cx]);
            }
        }
        let t = Tensor::from_vec(&[r, cols], data)?;
        Ok(self.push(t, Op::ConcatCols { xs: xs.to_vec() }, None))
    }

    pub fn transpose(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let (r, c) = self.require_rank2("transpose", x)?;
        let src = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::from_vec(&[c, r], data)?;
        Ok(self.push(t, Op::Transpose { x }, None))
    }

    /// Reinterpret the same row-major data under a new shape.
    pub fn reshape(&mut self, x: VarId, shape: &[usize]) -> Result<VarId, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != self.value(x).len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                got: self.value(x).len(),
            });
        }
        let t = Tensor::from_vec(shape, self.value(x).data().to_vec())?;
        Ok(self.push(t, Op::Reshape { x }, None))
    }

    /// Column-wise mean over rows: [R x C] -> [1 x C].
    pub fn mean_rows(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let (r, c) = self.require_rank2("mean_rows", x)?;
        let src = self.value(x).data();
        let mut data = vec![0.0; c];
        for row in 0..r {
            for (o, &v) in data.iter_mut().zip(&src[row * c..(row + 1) * c]) {
                *o += v;
            }
        }
        for o in data.iter_mut() {
            *o /= r as f64;
        }
        let t = Tensor::from_vec(&[1, c], data)?;
        Ok(self.push(t, Op::MeanRows { x }, None))
    }

    /// Column-wise max over rows: [R x C] -> [1 x C]. Gradient routes to the
    /// first maximal row of each column.
    pub fn max_rows(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let (r, c) = self.require_rank2("max_rows", x)?;
        let src = self.value(x).data();
        let mut data = vec![f64::NEG_INFINITY; c];
        let mut argmax = vec![0usize; c];
        for row in 0..r {
            for col in 0..c {
                let v = src[row * c + col];
                if v > data[col] {
                    data[col] = v;
                    argmax[col] = row;
                }
            }
        }
        let t = Tensor::from_vec(&[1, c], data)?;
        Ok(self.push(t, Op::MaxRows { x, argmax }, None))
    }

    /// Stable softmax cross-entropy of a logit vector against a gold class.
    pub fn cross_entropy(&mut self, logits: VarId, gold: usize) -> Result<VarId, TensorError> {
        let t = self.value(logits);
        let c = t.len();
        if c < 2 {
            return Err(TensorError::Invalid(format!(
                "cross_entropy needs at least 2 classes, got {c}"
            )));
        }
        if t.rank() == 2 && t.shape()[0] != 1 {
            return Err(TensorError::Rank {
                op: "cross_entropy",
                expected: 1,
                shape: t.shape().to_vec(),
            });
        }
        if gold >= c {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: gold,
                bound: c,
            });
        }
        let row = t.data();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let mut probs = vec![0.0; c];
        for (p, &v) in probs.iter_mut().zip(row) {
            *p = (v - max).exp();
            sum += *p;
        }
        for p in probs.iter_mut() {
            *p /= sum;
        }
        let loss = max + sum.ln() - row[gold];
        let t = Tensor::scalar(loss);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                gold,
                probs,
            },
            None,
        ))
    }

    /// Run reverse-mode accumulation from a scalar loss node, adding each
    /// reachable parameter's gradient into `params`. Parameters that do not
    /// influence the loss are left untouched. A tape can only be walked once.
    pub fn backward(&mut self, loss: VarId, params: &mut Params) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        self.consumed = true;
        if self.value(loss).len() != 1 {
            return Err(TensorError::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..self.nodes.len()).rev() {
            let d_out = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            // Reattach for the parameter write-back below.
            let put_back = self.nodes[id].param.is_some();
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (m, k) = {
                        let s = self.nodes[a.0].value.shape();
                        (s[0], s[1])
                    };
                    let n = self.nodes[b.0].value.shape()[1];
                    let a_val = self.nodes[a.0].value.data().to_vec();
                    let b_val = self.nodes[b.0].value.data().to_vec();
                    {
                        let ga = Self::grad_buf(&mut grads, a.0, m * k);
                        matmul_bt_acc(&d_out, &b_val, m, n, k, ga);
                    }
                    {
                        let gb = Self::grad_buf(&mut grads, b.0, k * n);
                        matmul_at_acc(&a_val, &d_out, m, k, n, gb);
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    {
                        let ga = Self::grad_buf(&mut grads, a.0, d_out.len());
                        for (g, &d) in ga.iter_mut().zip(&d_out) {
                            *g += d;
                        }
                    }
                    let gb = Self::grad_buf(&mut grads, b.0, d_out.len());
                    for (g, &d) in gb.iter_mut().zip(&d_out) {
                        *g += d;
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let a_val = self.nodes[a.0].value.data().to_vec();
                    let b_val = self.nodes[b.0].value.data().to_vec();
                    {
                        let ga = Self::grad_buf(&mut grads, a.0, d_out.len());
                        for ((g, &d), &bv) in ga.iter_mut().zip(&d_out).zip(&b_val) {
                            *g += d * bv;
                        }
                    }
                    let gb = Self::grad_buf(&mut grads, b.0, d_out.len());
                    for ((g, &d), &av) in gb.iter_mut().zip(&d_out).zip(&a_val) {
                        *g += d * av;
                    }
                }
                Op::AddBias { x, b } => {
                    let (x, b) = (*x, *b);
                    let c = self.nodes[b.0].value.len();
                    {
                        let gx = Self::grad_buf(&mut grads, x.0, d_out.len());
                        for (g, &d) in gx.iter_mut().zip(&d_out) {
                            *g += d;
                        }
                    }
                    let gb = Self::grad_buf(&mut grads, b.0, c);
                    for (i, &d) in d_out.iter().enumerate() {
                        gb[i % c] += d;
                    }
                }
                Op::MulBias { x, g } => {
                    let (x, gid) = (*x, *g);
                    let c = self.nodes[gid.0].value.len();
                    let gain = self.nodes[gid.0].value.data().to_vec();
                    let x_val = self.nodes[x.0].value.data().to_vec();
                    {
                        let gx = Self::grad_buf(&mut grads, x.0, d_out.len());
                        for (i, (g, &d)) in gx.iter_mut().zip(&d_out).enumerate() {
                            *g += d * gain[i % c];
                        }
                    }
                    let gg = Self::grad_buf(&mut grads, gid.0, c);
                    for (i, &d) in d_out.iter().enumerate() {
                        gg[i % c] += d * x_val[i];
                    }
                }
                Op::Tanh { x } => {
                    let x = *x;
                    let y = self.nodes[id].value.data().to_vec();
                    let gx = Self::grad_buf(&mut grads, x.0, d_out.len());
                    for ((g, &d), &yv) in gx.iter_mut().zip(&d_out).zip(&y) {
                        *g += d * (1.0 - yv * yv);
                    }
                }
                Op::Gelu { x } => {
                    let x = *x;
                    let x_val = self.nodes[x.0].value.data().to_vec();
                    let gx = Self::grad_buf(&mut grads, x.0, d_out.len());
                    for ((g, &d), &xv) in gx.iter_mut().zip(&d_out).zip(&x_val) {
                        *g += d * gelu_deriv(xv);
                    }
                }
                Op::LayerNorm { x, inv_std } => {
                    let x = *x;
                    let inv_std = inv_std.clone();
                    let y = self.nodes[id].value.data().to_vec();
                    let c = self.nodes[id].value.last_dim();
                    let gx = Self::grad_buf(&mut grads, x.0, d_out.len());
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let ys = &y[r * c..(r + 1) * c];
                        let ds = &d_out[r * c..(r + 1) * c];
                        let mean_d = ds.iter().sum::<f64>() / c as f64;
                        let mean_dy = ds.iter().zip(ys).map(|(&d, &yv)| d * yv).sum::<f64>() / c as f64;
                        for ((g, &d), &yv) in gx[r * c..(r + 1) * c].iter_mut().zip(ds).zip(ys) {
                            *g += inv * (d - mean_d - yv * mean_dy);
                        }
                    }
                }
                Op::Softmax { x } => {
                    let x = *x;
                    let y = self.nodes[id].value.data().to_vec();
                    let c = self.nodes[id].value.last_dim();
                    let rows = y.len() / c;
                    let gx = Self::grad_buf(&mut grads, x.0, d_out.len());
                    for r in 0..rows {
                        let ys = &y[r * c..(r + 1) * c];
                        let ds = &d_out[r * c..(r + 1) * c];
                        let dot = ds.iter().zip(ys).map(|(&d, &yv)| d * yv).sum::<f64>();
                        for ((g, &d), &yv) in gx[r * c..(r + 1) * c].iter_mut().zip(ds).zip(ys) {
                            *g += yv * (d - dot);
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let (x, c) = (*x, *c);
                    let gx = Self::grad_buf(&mut grads, x.0, d_out.len());
                    for (g, &d) in gx.iter_mut().zip(&d_out) {
                        *g += d * c;
                    }
                }
                Op::ScaleVar { x, s } => {
                    let (x, s) = (*x, *s);
                    let sv = self.nodes[s.0].value.data()[0];
                    let x_val = self.nodes[x.0].value.data().to_vec();
                    {
                        let gx = Self::grad_buf(&mut grads, x.0, d_out.len());
                        for (g, &d) in gx.iter_mut().zip(&d_out) {
                            *g += d * sv;
                        }
                    }
                    let gs = Self::grad_buf(&mut grads, s.0, 1);
                    gs[0] += d_out.iter().zip(&x_val).map(|(&d, &xv)| d * xv).sum::<f64>();
                }
                Op::ScaleRows { x, a } => {
                    let (x, a) = (*x, *a);
                    let c = self.nodes[x.0].value.shape()[1];
                    let weights = self.nodes[a.0].value.data().to_vec();
                    let x_val = self.nodes[x.0].value.data().to_vec();
                    {
                        let gx = Self::grad_buf(&mut grads, x.0, d_out.len());
                        for (i, (g, &d)) in gx.iter_mut().zip(&d_out).enumerate() {
                            *g += d * weights[i / c];
                        }
                    }
                    let ga = Self::grad_buf(&mut grads, a.0, weights.len());
                    for (i, &d) in d_out.iter().enumerate() {
                        ga[i / c] += d * x_val[i];
                    }
                }
                Op::Embed { table, indices } => {
                    let table = *table;
                    let indices = indices.clone();
                    let d = self.nodes[id].value.shape()[1];
                    let v = self.nodes[table.0].value.shape()[0];
                    let gt = Self::grad_buf(&mut grads, table.0, v * d);
                    for (row, &idx) in indices.iter().enumerate() {
                        for (g, &dv) in gt[idx * d..(idx + 1) * d]
                            .iter_mut()
                            .zip(&d_out[row * d..(row + 1) * d])
                        {
                            *g += dv;
                        }
                    }
                }
                Op::SliceRows { x, start } => {
                    let (x, start) = (*x, *start);
                    let c = self.nodes[x.0].value.shape()[1];
                    let total = self.nodes[x.0].value.len();
                    let gx = Self::grad_buf(&mut grads, x.0, total);
                    for (g, &d) in gx[start * c..start * c + d_out.len()].iter_mut().zip(&d_out) {
                        *g += d;
                    }
                }
                Op::SliceCols { x, start } => {
                    let (x, start) = (*x, *start);
                    let c = self.nodes[x.0].value.shape()[1];
                    let out_c = self.nodes[id].value.shape()[1];
                    let total = self.nodes[x.0].value.len();
                    let gx = Self::grad_buf(&mut grads, x.0, total);
                    for (i, &d) in d_out.iter().enumerate() {
                        let row = i / out_c;
                        let col = i % out_c;
                        gx[row * c + start + col] += d;
                    }
                }
                Op::ConcatRows { xs } => {
                    let xs = xs.clone();
                    let mut offset = 0;
                    for x in xs {
                        let len = self.nodes[x.0].value.len();
                        let gx = Self::grad_buf(&mut grads, x.0, len);
                        for (g, &d) in gx.iter_mut().zip(&d_out[offset..offset + len]) {
                            *g += d;
                        }
                        offset += len;
                    }
                }
                Op::ConcatCols { xs } => {
                    let xs = xs.clone();
                    let out_c = self.nodes[id].value.shape()[1];
                    let rows = self.nodes[id].value.shape()[0];
                    let mut col_offset = 0;
                    for x in xs {
                        let cx = self.nodes[x.0].value.shape()[1];
                        let gx = Self::grad_buf(&mut grads, x.0, rows * cx);
                        for row in 0..rows {
                            for col in 0..cx {
                                gx[row * cx + col] += d_out[row * out_c + col_offset + col];
                            }
                        }
                        col_offset += cx;
                    }
                }
                Op::Transpose { x } => {
                    let x = *x;
                    let (out_r, out_c) = {
                        let s = self.nodes[id].value.shape();
                        (s[0], s[1])
                    };
                    let gx = Self::grad_buf(&mut grads, x.0, out_r * out_c);
                    for i in 0..out_r {
                        for j in 0..out_c {
                            gx[j * out_r + i] += d_out[i * out_c + j];
                        }
                    }
                }
                Op::Reshape { x } => {
                    let x = *x;
                    let gx = Self::grad_buf(&mut grads, x.0, d_out.len());
                    for (g, &d) in gx.iter_mut().zip(&d_out) {
                        *g += d;
                    }
                }
                Op::MeanRows { x } => {
                    let x = *x;
                    let (r, c) = {
                        let s = self.nodes[x.0].value.shape();
                        (s[0], s[1])
                    };
                    let gx = Self::grad_buf(&mut grads, x.0, r * c);
                    for (i, g) in gx.iter_mut().enumerate() {
                        *g += d_out[i % c] / r as f64;
                    }
                }
                Op::MaxRows { x, argmax } => {
                    let x = *x;
                    let argmax = argmax.clone();
                    let c = argmax.len();
                    let total = self.nodes[x.0].value.len();
                    let gx = Self::grad_buf(&mut grads, x.0, total);
                    for (col, &row) in argmax.iter().enumerate() {
                        gx[row * c + col] += d_out[col];
                    }
                }
                Op::CrossEntropy {
                    logits,
                    gold,
                    probs,
                } => {
                    let logits = *logits;
                    let gold = *gold;
                    let probs = probs.clone();
                    let gl = Self::grad_buf(&mut grads, logits.0, probs.len());
                    let d = d_out[0];
                    for (i, (g, &p)) in gl.iter_mut().zip(&probs).enumerate() {
                        let delta = if i == gold { 1.0 } else { 0.0 };
                        *g += d * (p - delta);
                    }
                }
            }
            if put_back {
                grads[id] = Some(d_out);
            }
        }

        // Accumulate leaf gradients into the parameter store.
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Some(name), Some(g)) = (&node.param, grad) {
                let p = params.get_mut(name)?;
                for (pg, gv) in p.grad.data_mut().iter_mut().zip(g) {
                    *pg += gv;
                }
            }
        }
        Ok(())
    }

    fn grad_buf(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut Vec<f64> {
        let slot = &mut grads[id];
        if slot.is_none() {
            *slot = Some(vec![0.0; len]);
        }
        slot.as_mut().expect("just filled")
    }
}
