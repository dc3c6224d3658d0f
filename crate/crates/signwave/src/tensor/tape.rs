//! Wengert tape: forward values are computed eagerly while every operation
//! records its inputs and a local backward rule; `backward` replays the
//! recording in reverse and accumulates vector-Jacobian products.
//!
//! A tape and its values are confined to one thread for the duration of a
//! forward/backward pass and a tape can be consumed by backward only once.

use super::{Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LAYER_NORM_EPS: f64 = 1e-5;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Result of a cross-entropy node: the loss plus a flag for the degenerate
/// all-padding case (loss defined as 0 there).
#[derive(Debug, Clone, Copy)]
pub struct CrossEntropyOut {
    pub loss: Var,
    pub live_positions: usize,
}

impl CrossEntropyOut {
    pub fn all_ignored(&self) -> bool {
        self.live_positions == 0
    }
}

enum Op<T: Scalar> {
    Leaf,
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddBias { a: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    Transpose { a: Var },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SliceRows { src: Var, start: usize },
    SliceCols { src: Var, start: usize },
    GatherRows { src: Var, rows: Vec<usize> },
    ElemMax { parts: Vec<Var>, argmax: Vec<u8> },
    LayerNorm { x: Var, gain: Var, bias: Var },
    MeanPoolRows { a: Var },
    Gelu { a: Var },
    SoftmaxRows { a: Var },
    MaskAdd { a: Var },
    CrossEntropy { logits: Var, targets: Vec<u32>, ignore_id: u32, smoothing: T },
    SumAll { a: Var },
}

struct Node<T: Scalar> {
    data: Vec<T>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op<T>,
}

/// Recording of one differentiable computation.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), consumed: false }
    }

    // ── Registration and access ─────────────────────────────────────────

    /// Copies a tensor onto the tape; gradient flow follows `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), t.requires_grad, Op::Leaf)
    }

    /// Non-differentiable input data.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var, TensorError> {
        let volume: usize = shape.iter().product();
        if volume != data.len() {
            return Err(TensorError::DataLength { expected: volume, got: data.len() });
        }
        Ok(self.push(data, shape, false, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].data[0]
    }

    /// Gradient accumulated by the last `backward`, if any flowed to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(Option::as_deref)
    }

    /// Copies the accumulated gradient into `tensor.grad` (zeros if none).
    pub fn write_grad_into(&self, v: Var, tensor: &mut Tensor<T>) {
        tensor.grad = Some(match self.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); tensor.len()],
        });
    }

    pub fn extract(&self, v: Var) -> Tensor<T> {
        Tensor::from_vec(self.shape(v).to_vec(), self.value(v).to_vec())
            .expect("tape nodes hold consistent shapes")
    }

    fn push(&mut self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node { data, shape, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn cols(&self, v: Var) -> usize {
        self.nodes[v.0].shape[1]
    }

    fn requires(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn want_2d(&self, v: Var, op: &'static str) -> Result<(usize, usize), TensorError> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch { op, detail: format!("expected 2-D, got {s:?}") });
        }
        Ok((s[0], s[1]))
    }

    fn finite_guard(&self, v: Var, op: &'static str) -> Result<Var, TensorError> {
        if cfg!(debug_assertions) && !self.nodes[v.0].data.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        Ok(v)
    }

    // ── Forward operations ──────────────────────────────────────────────

    /// `[m,k] @ [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.want_2d(a, "matmul")?;
        let (kb, n) = self.want_2d(b, "matmul")?;
        if k != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dims {k} vs {kb}"),
            });
        }
        let data = matmul_nn(self.value(a), self.value(b), m, k, n);
        let rg = self.requires(&[a, b]);
        let v = self.push(data, vec![m, n], rg, Op::Matmul { a, b });
        self.finite_guard(v, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let rg = self.requires(&[a, b]);
        let v = self.push(data, shape, rg, Op::Add { a, b });
        self.finite_guard(v, "add")
    }

    /// Adds a length-`m` bias to every row of an `[n,m]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (n, m) = self.want_2d(a, "add_bias")?;
        if self.shape(bias) != [m] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                detail: format!("bias {:?} against {m} columns", self.shape(bias)),
            });
        }
        let mut data = self.value(a).to_vec();
        let b = self.value(bias);
        for i in 0..n {
            for j in 0..m {
                data[i * m + j] = data[i * m + j] + b[j];
            }
        }
        let rg = self.requires(&[a, bias]);
        let v = self.push(data, vec![n, m], rg, Op::AddBias { a, bias });
        self.finite_guard(v, "add_bias")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let rg = self.requires(&[a, b]);
        let v = self.push(data, shape, rg, Op::Mul { a, b });
        self.finite_guard(v, "mul")
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var, TensorError> {
        let data = self.value(a).iter().map(|&x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires(&[a]);
        let v = self.push(data, shape, rg, Op::Scale { a, factor });
        self.finite_guard(v, "scale")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (n, m) = self.want_2d(a, "transpose")?;
        let data = transpose_kernel(self.value(a), n, m);
        let rg = self.requires(&[a]);
        let v = self.push(data, vec![m, n], rg, Op::Transpose { a });
        Ok(v)
    }

    /// Stacks 2-D blocks with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat_rows" });
        }
        let (_, m) = self.want_2d(parts[0], "concat_rows")?;
        let mut total = 0usize;
        for &p in parts {
            let (r, c) = self.want_2d(p, "concat_rows")?;
            if c != m {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("column counts {m} vs {c}"),
                });
            }
            total += r;
        }
        let mut data = Vec::with_capacity(total * m);
        for &p in parts {
            data.extend_from_slice(self.value(p));
        }
        let rg = self.requires(parts);
        let v = self.push(data, vec![total, m], rg, Op::ConcatRows { parts: parts.to_vec() });
        Ok(v)
    }

    /// Concatenates 2-D blocks with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat_cols" });
        }
        let (n, _) = self.want_2d(parts[0], "concat_cols")?;
        let mut total = 0usize;
        for &p in parts {
            let (r, c) = self.want_2d(p, "concat_cols")?;
            if r != n {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts {n} vs {r}"),
                });
            }
            total += c;
        }
        let mut data = vec![T::zero(); n * total];
        let mut offset = 0;
        for &p in parts {
            let c = self.cols(p);
            let src = &self.nodes[p.0].data;
            for i in 0..n {
                data[i * total + offset..i * total + offset + c]
                    .copy_from_slice(&src[i * c..(i + 1) * c]);
            }
            offset += c;
        }
        let rg = self.requires(parts);
        let v = self.push(data, vec![n, total], rg, Op::ConcatCols { parts: parts.to_vec() });
        Ok(v)
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (n, m) = self.want_2d(src, "slice_rows")?;
        if start + len > n || len == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "slice_rows",
                detail: format!("rows [{start}, {}) out of {n}", start + len),
            });
        }
        let data = self.value(src)[start * m..(start + len) * m].to_vec();
        let rg = self.requires(&[src]);
        let v = self.push(data, vec![len, m], rg, Op::SliceRows { src, start });
        Ok(v)
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (n, m) = self.want_2d(src, "slice_cols")?;
        if start + len > m || len == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols [{start}, {}) out of {m}", start + len),
            });
        }
        let src_data = &self.nodes[src.0].data;
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&src_data[i * m + start..i * m + start + len]);
        }
        let rg = self.requires(&[src]);
        let v = self.push(data, vec![n, len], rg, Op::SliceCols { src, start });
        Ok(v)
    }

    /// Selects rows by index (duplicates allowed); backward scatter-adds.
    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let (n, m) = self.want_2d(src, "gather_rows")?;
        if rows.is_empty() {
            return Err(TensorError::EmptyInput { op: "gather_rows" });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                detail: format!("row {bad} out of {n}"),
            });
        }
        let src_data = &self.nodes[src.0].data;
        let mut data = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            data.extend_from_slice(&src_data[r * m..(r + 1) * m]);
        }
        let rg = self.requires(&[src]);
        let v = self.push(data, vec![rows.len(), m], rg, Op::GatherRows { src, rows: rows.to_vec() });
        Ok(v)
    }

    /// Token embedding: row lookup with id validation.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var, TensorError> {
        let (vocab, _) = self.want_2d(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(TensorError::TokenOutOfRange { id: bad, vocab });
        }
        let rows: Vec<usize> = ids.iter().map(|&id| id as usize).collect();
        self.gather_rows(table, &rows)
    }

    /// Element-wise max across equally shaped inputs; ties resolve to the
    /// earliest input so the subgradient is deterministic.
    pub fn elem_max(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "elem_max" });
        }
        if parts.len() > u8::MAX as usize {
            return Err(TensorError::ShapeMismatch {
                op: "elem_max",
                detail: "too many inputs".into(),
            });
        }
        let shape = self.shape(parts[0]).to_vec();
        for &p in parts {
            if self.shape(p) != shape {
                return Err(TensorError::ShapeMismatch {
                    op: "elem_max",
                    detail: format!("{:?} vs {:?}", shape, self.shape(p)),
                });
            }
        }
        let volume: usize = shape.iter().product();
        let mut data = self.value(parts[0]).to_vec();
        let mut argmax = vec![0u8; volume];
        for (pi, &p) in parts.iter().enumerate().skip(1) {
            let src = &self.nodes[p.0].data;
            for e in 0..volume {
                if src[e] > data[e] {
                    data[e] = src[e];
                    argmax[e] = pi as u8;
                }
            }
        }
        let rg = self.requires(parts);
        let v = self.push(data, shape, rg, Op::ElemMax { parts: parts.to_vec(), argmax });
        Ok(v)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let (n, m) = self.want_2d(x, "layer_norm")?;
        if self.shape(gain) != [m] || self.shape(bias) != [m] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                detail: format!("gain/bias must be [{m}]"),
            });
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let xd = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let mut data = vec![T::zero(); n * m];
        for i in 0..n {
            let row = &xd[i * m..(i + 1) * m];
            let (mean, rstd) = row_moments(row, eps);
            for j in 0..m {
                data[i * m + j] = g[j] * ((row[j] - mean) * rstd) + b[j];
            }
        }
        let rg = self.requires(&[x, gain, bias]);
        let v = self.push(data, vec![n, m], rg, Op::LayerNorm { x, gain, bias });
        self.finite_guard(v, "layer_norm")
    }

    /// Mean over rows: `[n,m] -> [1,m]`.
    pub fn mean_pool_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (n, m) = self.want_2d(a, "mean_pool_rows")?;
        let inv = T::from_f64(1.0 / n as f64);
        let src = self.value(a);
        let mut data = vec![T::zero(); m];
        for i in 0..n {
            for j in 0..m {
                data[j] = data[j] + src[i * m + j];
            }
        }
        for v in &mut data {
            *v = *v * inv;
        }
        let rg = self.requires(&[a]);
        let v = self.push(data, vec![1, m], rg, Op::MeanPoolRows { a });
        Ok(v)
    }

    /// Exact GELU, `x * Phi(x)` with the Gaussian CDF via erf.
    pub fn gelu(&mut self, a: Var) -> Result<Var, TensorError> {
        let data = self.value(a).iter().map(|&x| x * gauss_cdf(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires(&[a]);
        let v = self.push(data, shape, rg, Op::Gelu { a });
        self.finite_guard(v, "gelu")
    }

    /// Row-wise softmax, stabilized by per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (n, m) = self.want_2d(a, "softmax_rows")?;
        if m == 0 {
            return Err(TensorError::EmptyInput { op: "softmax_rows" });
        }
        let src = self.value(a);
        let mut data = vec![T::zero(); n * m];
        for i in 0..n {
            softmax_into(&src[i * m..(i + 1) * m], &mut data[i * m..(i + 1) * m]);
        }
        let rg = self.requires(&[a]);
        let v = self.push(data, vec![n, m], rg, Op::SoftmaxRows { a });
        self.finite_guard(v, "softmax_rows")
    }

    /// Adds a constant (non-differentiable) mask, e.g. causal -1e30 entries.
    pub fn mask_add(&mut self, a: Var, mask: &[T]) -> Result<Var, TensorError> {
        if mask.len() != self.nodes[a.0].data.len() {
            return Err(TensorError::DataLength {
                expected: self.nodes[a.0].data.len(),
                got: mask.len(),
            });
        }
        let data = zip_map(self.value(a), mask, |x, m| x + m);
        let shape = self.shape(a).to_vec();
        let rg = self.requires(&[a]);
        let v = self.push(data, shape, rg, Op::MaskAdd { a });
        Ok(v)
    }

    /// Mean token cross-entropy over rows whose target is not `ignore_id`,
    /// with optional uniform label smoothing.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[u32],
        ignore_id: u32,
        smoothing: T,
    ) -> Result<CrossEntropyOut, TensorError> {
        let (n, vocab) = self.want_2d(logits, "cross_entropy")?;
        if targets.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("{n} logit rows vs {} targets", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != ignore_id && t as usize >= vocab) {
            return Err(TensorError::TokenOutOfRange { id: bad, vocab });
        }
        let src = self.value(logits);
        let uniform = smoothing / T::from_f64(vocab as f64);
        let keep = T::one() - smoothing;
        let mut live = 0usize;
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            if t == ignore_id {
                continue;
            }
            live += 1;
            let row = &src[i * vocab..(i + 1) * vocab];
            let lse = log_sum_exp(row);
            let mut row_sum = T::zero();
            for &x in row {
                row_sum = row_sum + x;
            }
            total = total + lse - keep * row[t as usize] - uniform * row_sum;
        }
        let loss = if live == 0 { T::zero() } else { total / T::from_f64(live as f64) };
        let rg = self.requires(&[logits]);
        let v = self.push(
            vec![loss],
            vec![1],
            rg,
            Op::CrossEntropy { logits, targets: targets.to_vec(), ignore_id, smoothing },
        );
        self.finite_guard(v, "cross_entropy")?;
        Ok(CrossEntropyOut { loss: v, live_positions: live })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let mut total = T::zero();
        for &x in self.value(a) {
            total = total + x;
        }
        let rg = self.requires(&[a]);
        let v = self.push(vec![total], vec![1], rg, Op::SumAll { a });
        self.finite_guard(v, "sum")
    }

    // ── Composites ──────────────────────────────────────────────────────

    /// `x @ w + b` for a 2-D input.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    /// Scaled dot-product attention `softmax(Q K^T / sqrt(d)) V`, returning
    /// the output and the attention weight rows. The optional additive mask
    /// is applied to the scaled scores.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&[T]>,
    ) -> Result<(Var, Var), TensorError> {
        let (_, d) = self.want_2d(q, "attention")?;
        let (n_k, dk) = self.want_2d(k, "attention")?;
        let (n_v, _) = self.want_2d(v, "attention")?;
        if d != dk {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                detail: format!("query dim {d} vs key dim {dk}"),
            });
        }
        if n_k != n_v {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                detail: format!("{n_k} keys vs {n_v} values"),
            });
        }
        if n_k == 0 {
            return Err(TensorError::EmptyInput { op: "attention" });
        }
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, kt)?;
        let scaled = self.scale(scores, T::from_f64(1.0 / (d as f64).sqrt()))?;
        let masked = match mask {
            Some(m) => self.mask_add(scaled, m)?,
            None => scaled,
        };
        let weights = self.softmax_rows(masked)?;
        let out = self.matmul(weights, v)?;
        Ok((out, weights))
    }

    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var, TensorError> {
        self.attention(q, k, v, None).map(|(out, _)| out)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Gradients accumulate additively
    /// across fan-out. Consumes the tape: a second call is a state error.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.nodes[loss.0].shape.clone() });
        }
        self.consumed = true;
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[1];
                    if nodes[a.0].requires_grad {
                        let da = matmul_nt(&g, &nodes[b.0].data, m, n, k);
                        acc(&mut grads, a.0, &da);
                    }
                    if nodes[b.0].requires_grad {
                        let db = matmul_tn(&nodes[a.0].data, &g, m, k, n);
                        acc(&mut grads, b.0, &db);
                    }
                }
                Op::Add { a, b } => {
                    if nodes[a.0].requires_grad {
                        acc(&mut grads, a.0, &g);
                    }
                    if nodes[b.0].requires_grad {
                        acc(&mut grads, b.0, &g);
                    }
                }
                Op::AddBias { a, bias } => {
                    if nodes[a.0].requires_grad {
                        acc(&mut grads, a.0, &g);
                    }
                    if nodes[bias.0].requires_grad {
                        let (n, m) = (node.shape[0], node.shape[1]);
                        let mut db = vec![T::zero(); m];
                        for r in 0..n {
                            for j in 0..m {
                                db[j] = db[j] + g[r * m + j];
                            }
                        }
                        acc(&mut grads, bias.0, &db);
                    }
                }
                Op::Mul { a, b } => {
                    if nodes[a.0].requires_grad {
                        let da = zip_map(&g, &nodes[b.0].data, |gv, bv| gv * bv);
                        acc(&mut grads, a.0, &da);
                    }
                    if nodes[b.0].requires_grad {
                        let db = zip_map(&g, &nodes[a.0].data, |gv, av| gv * av);
                        acc(&mut grads, b.0, &db);
                    }
                }
                Op::Scale { a, factor } => {
                    let da: Vec<T> = g.iter().map(|&gv| gv * *factor).collect();
                    acc(&mut grads, a.0, &da);
                }
                Op::Transpose { a } => {
                    let (m, n) = (node.shape[0], node.shape[1]);
                    let da = transpose_kernel(&g, m, n);
                    acc(&mut grads, a.0, &da);
                }
                Op::ConcatRows { parts } => {
                    let m = node.shape[1];
                    let mut offset = 0;
                    for &p in parts {
                        let r = nodes[p.0].shape[0];
                        if nodes[p.0].requires_grad {
                            acc(&mut grads, p.0, &g[offset * m..(offset + r) * m]);
                        }
                        offset += r;
                    }
                }
                Op::ConcatCols { parts } => {
                    let (n, total) = (node.shape[0], node.shape[1]);
                    let mut offset = 0;
                    for &p in parts {
                        let c = nodes[p.0].shape[1];
                        if nodes[p.0].requires_grad {
                            let mut dp = vec![T::zero(); n * c];
                            for r in 0..n {
                                dp[r * c..(r + 1) * c]
                                    .copy_from_slice(&g[r * total + offset..r * total + offset + c]);
                            }
                            acc(&mut grads, p.0, &dp);
                        }
                        offset += c;
                    }
                }
                Op::SliceRows { src, start } => {
                    let (len, m) = (node.shape[0], node.shape[1]);
                    let src_len = nodes[src.0].data.len();
                    let mut ds = vec![T::zero(); src_len];
                    ds[start * m..(start + len) * m].copy_from_slice(&g);
                    acc(&mut grads, src.0, &ds);
                }
                Op::SliceCols { src, start } => {
                    let (n, len) = (node.shape[0], node.shape[1]);
                    let m = nodes[src.0].shape[1];
                    let mut ds = vec![T::zero(); nodes[src.0].data.len()];
                    for r in 0..n {
                        ds[r * m + start..r * m + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    acc(&mut grads, src.0, &ds);
                }
                Op::GatherRows { src, rows } => {
                    let m = node.shape[1];
                    let mut ds = vec![T::zero(); nodes[src.0].data.len()];
                    for (out_row, &src_row) in rows.iter().enumerate() {
                        for j in 0..m {
                            ds[src_row * m + j] = ds[src_row * m + j] + g[out_row * m + j];
                        }
                    }
                    acc(&mut grads, src.0, &ds);
                }
                Op::ElemMax { parts, argmax } => {
                    for (pi, &p) in parts.iter().enumerate() {
                        if !nodes[p.0].requires_grad {
                            continue;
                        }
                        let mut dp = vec![T::zero(); g.len()];
                        for e in 0..g.len() {
                            if argmax[e] as usize == pi {
                                dp[e] = g[e];
                            }
                        }
                        acc(&mut grads, p.0, &dp);
                    }
                }
                Op::LayerNorm { x, gain, bias } => {
                    let (n, m) = (node.shape[0], node.shape[1]);
                    let eps = T::from_f64(LAYER_NORM_EPS);
                    let xd = &nodes[x.0].data;
                    let gd = &nodes[gain.0].data;
                    let inv_m = T::from_f64(1.0 / m as f64);
                    let mut dx = vec![T::zero(); n * m];
                    let mut dgain = vec![T::zero(); m];
                    let mut dbias = vec![T::zero(); m];
                    for r in 0..n {
                        let row = &xd[r * m..(r + 1) * m];
                        let grow = &g[r * m..(r + 1) * m];
                        let (mean, rstd) = row_moments(row, eps);
                        let mut mean_dxh = T::zero();
                        let mut mean_dxh_xh = T::zero();
                        for j in 0..m {
                            let xh = (row[j] - mean) * rstd;
                            let dxh = grow[j] * gd[j];
                            dgain[j] = dgain[j] + grow[j] * xh;
                            dbias[j] = dbias[j] + grow[j];
                            mean_dxh = mean_dxh + dxh;
                            mean_dxh_xh = mean_dxh_xh + dxh * xh;
                        }
                        mean_dxh = mean_dxh * inv_m;
                        mean_dxh_xh = mean_dxh_xh * inv_m;
                        for j in 0..m {
                            let xh = (row[j] - mean) * rstd;
                            let dxh = grow[j] * gd[j];
                            dx[r * m + j] = rstd * (dxh - mean_dxh - xh * mean_dxh_xh);
                        }
                    }
                    if nodes[x.0].requires_grad {
                        acc(&mut grads, x.0, &dx);
                    }
                    if nodes[gain.0].requires_grad {
                        acc(&mut grads, gain.0, &dgain);
                    }
                    if nodes[bias.0].requires_grad {
                        acc(&mut grads, bias.0, &dbias);
                    }
                }
                Op::MeanPoolRows { a } => {
                    let m = node.shape[1];
                    let n = nodes[a.0].shape[0];
                    let inv = T::from_f64(1.0 / n as f64);
                    let mut da = vec![T::zero(); n * m];
                    for r in 0..n {
                        for j in 0..m {
                            da[r * m + j] = g[j] * inv;
                        }
                    }
                    acc(&mut grads, a.0, &da);
                }
                Op::Gelu { a } => {
                    let da = zip_map(&g, &nodes[a.0].data, |gv, x| gv * gelu_derivative(x));
                    acc(&mut grads, a.0, &da);
                }
                Op::SoftmaxRows { a } => {
                    let (n, m) = (node.shape[0], node.shape[1]);
                    let y = &node.data;
                    let mut da = vec![T::zero(); n * m];
                    for r in 0..n {
                        let mut dot = T::zero();
                        for j in 0..m {
                            dot = dot + g[r * m + j] * y[r * m + j];
                        }
                        for j in 0..m {
                            da[r * m + j] = y[r * m + j] * (g[r * m + j] - dot);
                        }
                    }
                    acc(&mut grads, a.0, &da);
                }
                Op::MaskAdd { a } => {
                    acc(&mut grads, a.0, &g);
                }
                Op::CrossEntropy { logits, targets, ignore_id, smoothing } => {
                    let vocab = nodes[logits.0].shape[1];
                    let live = targets.iter().filter(|&&t| t != *ignore_id).count();
                    if live > 0 {
                        let upstream = g[0] / T::from_f64(live as f64);
                        let uniform = *smoothing / T::from_f64(vocab as f64);
                        let keep = T::one() - *smoothing;
                        let src = &nodes[logits.0].data;
                        let mut dl = vec![T::zero(); src.len()];
                        for (r, &t) in targets.iter().enumerate() {
                            if t == *ignore_id {
                                continue;
                            }
                            let row = &src[r * vocab..(r + 1) * vocab];
                            let out = &mut dl[r * vocab..(r + 1) * vocab];
                            softmax_into(row, out);
                            for (j, slot) in out.iter_mut().enumerate() {
                                let q = if j == t as usize { keep + uniform } else { uniform };
                                *slot = (*slot - q) * upstream;
                            }
                        }
                        acc(&mut grads, logits.0, &dl);
                    }
                }
                Op::SumAll { a } => {
                    let da = vec![g[0]; nodes[a.0].data.len()];
                    acc(&mut grads, a.0, &da);
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}

// ── Kernels ─────────────────────────────────────────────────────────────

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], idx: usize, contribution: &[T]) {
    match &mut grads[idx] {
        Some(existing) => {
            for (e, &c) in existing.iter_mut().zip(contribution) {
                *e = *e + c;
            }
        }
        None => grads[idx] = Some(contribution.to_vec()),
    }
}

/// `[m,k] @ [k,n]`.
fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    out
}

/// `[m,n] @ [k,n]^T -> [m,k]` (row-by-row dot products).
fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut dot = T::zero();
            for j in 0..n {
                dot = dot + arow[j] * brow[j];
            }
            out[i * k + p] = dot;
        }
    }
    out
}

/// `[m,k]^T @ [m,n] -> [k,n]`.
fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = arow[p];
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    out
}

fn transpose_kernel<T: Scalar>(a: &[T], n: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

/// Mean and reciprocal standard deviation of one row (biased variance).
fn row_moments<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let inv_m = T::from_f64(1.0 / row.len() as f64);
    let mut mean = T::zero();
    for &x in row {
        mean = mean + x;
    }
    mean = mean * inv_m;
    let mut var = T::zero();
    for &x in row {
        let d = x - mean;
        var = var + d * d;
    }
    var = var * inv_m;
    (mean, T::one() / (var + eps).sqrt())
}

fn softmax_into<T: Scalar>(row: &[T], out: &mut [T]) {
    let mut max = row[0];
    for &x in row.iter().skip(1) {
        if x > max {
            max = x;
        }
    }
    let mut sum = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        sum = sum + e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let mut max = row[0];
    for &x in row.iter().skip(1) {
        if x > max {
            max = x;
        }
    }
    let mut sum = T::zero();
    for &x in row {
        sum = sum + (x - max).exp();
    }
    max + sum.ln()
}

fn gauss_cdf<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_derivative<T: Scalar>(x: T) -> T {
    let pdf = T::from_f64(INV_SQRT_2PI) * (-(x * x) * T::from_f64(0.5)).exp();
    gauss_cdf(x) + x * pdf
}
