//! Reverse-mode differentiation over a recorded operation tape.
//!
//! A [`Graph`] owns every tensor produced during one forward pass. Leaves
//! enter via [`Graph::input`] / [`Graph::param`]; each operator records the
//! information its backward rule needs. [`Graph::backward`] walks the tape
//! in reverse exactly once and leaves gradients on every node that requires
//! them.
//!
//! All operators treat leading dimensions as batch dimensions: the math is
//! defined on the trailing one or two dimensions and applied independently
//! per slice.

use super::{
    broadcast_binop, matmul2d_nt_acc, matmul2d_tn_acc, matmul_kernel, reduce_to_shape, sigmoid,
    softmax_last_kernel, split_matrix_shape, transpose_last_kernel, Tensor,
};
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    TransposeLast { a: TensorId },
    Add { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Sigmoid { a: TensorId },
    Relu { a: TensorId },
    /// Saves the per-row 1/sqrt(mean(x^2)+eps) factors for backward.
    RmsNorm { x: TensorId, gain: TensorId, inv_rms: Vec<f64> },
    SoftmaxLast { a: TensorId },
    GatherRows { table: TensorId, idx: Vec<usize> },
    ConcatLast { parts: Vec<TensorId> },
    NarrowLast { a: TensorId, start: usize },
    Reshape { a: TensorId },
    Scale { a: TensorId, c: f64 },
    SumAxis { a: TensorId, axis: usize },
    SumAll { a: TensorId },
    /// Huber loss against a constant target: per-sample sum, batch mean.
    Huber { pred: TensorId, target: Vec<f64>, delta: f64, batch: usize },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Epsilon inside the RMSNorm root; keeps all-zero rows finite.
pub const RMSNORM_EPS: f64 = 1e-8;

/// Recorded forward pass (see module docs).
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
    scope_elems: Option<usize>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorId {
        if let Some(elems) = self.scope_elems.as_mut() {
            *elems += data.len();
        }
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { data, shape, grad: None, requires_grad, op });
        id
    }

    fn rg(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Starts counting elements allocated by subsequent operators.
    pub fn begin_alloc_scope(&mut self) {
        self.scope_elems = Some(0);
    }

    /// Stops counting and returns the number of elements allocated in scope.
    pub fn end_alloc_scope(&mut self) -> usize {
        self.scope_elems.take().unwrap_or(0)
    }

    // ── Leaves & accessors ────────────────────────────────────────────

    /// Non-trainable leaf (model inputs, constants).
    pub fn input(&mut self, t: &Tensor) -> TensorId {
        self.push(t.data.clone(), t.shape.clone(), false, Op::Leaf)
    }

    /// Trainable leaf; gradients are produced for it by [`Graph::backward`].
    pub fn param(&mut self, t: &Tensor) -> TensorId {
        self.push(t.data.clone(), t.shape.clone(), true, Op::Leaf)
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    /// Detached copy of a node's value.
    pub fn value(&self, id: TensorId) -> Tensor {
        Tensor {
            shape: self.nodes[id.0].shape.clone(),
            data: self.nodes[id.0].data.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    // ── Operators ─────────────────────────────────────────────────────

    /// Matrix product over the last two dims with leading batch broadcast.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (data, shape) = matmul_kernel(
            &self.nodes[a.0].data,
            &self.nodes[a.0].shape,
            &self.nodes[b.0].data,
            &self.nodes[b.0].shape,
        )?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(data, shape, rg, Op::MatMul { a, b }))
    }

    pub fn transpose_last(&mut self, a: TensorId) -> Result<TensorId> {
        let (data, shape) = transpose_last_kernel(&self.nodes[a.0].data, &self.nodes[a.0].shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(data, shape, rg, Op::TransposeLast { a }))
    }

    /// Broadcast addition (trailing alignment, size-1 or missing dims
    /// replicate).
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (data, shape) = broadcast_binop(
            &self.nodes[a.0].data,
            &self.nodes[a.0].shape,
            &self.nodes[b.0].data,
            &self.nodes[b.0].shape,
            "add",
            |x, y| x + y,
        )?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(data, shape, rg, Op::Add { a, b }))
    }

    /// Broadcast multiplication.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (data, shape) = broadcast_binop(
            &self.nodes[a.0].data,
            &self.nodes[a.0].shape,
            &self.nodes[b.0].data,
            &self.nodes[b.0].shape,
            "mul",
            |x, y| x * y,
        )?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(data, shape, rg, Op::Mul { a, b }))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let data = self.nodes[a.0].data.iter().map(|&x| sigmoid(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        self.push(data, shape, rg, Op::Sigmoid { a })
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let data = self.nodes[a.0].data.iter().map(|&x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        self.push(data, shape, rg, Op::Relu { a })
    }

    /// Root-mean-square normalization over the last dimension with a
    /// per-dimension gain: out = gain ⊙ x / sqrt(mean(x²) + eps).
    pub fn rmsnorm(&mut self, x: TensorId, gain: TensorId) -> Result<TensorId> {
        let d = *self.nodes[x.0].shape.last().unwrap();
        if self.nodes[gain.0].shape != [d] {
            return Err(Error::Shape {
                op: "rmsnorm",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: self.nodes[gain.0].shape.clone(),
            });
        }
        let xd = &self.nodes[x.0].data;
        let gd = &self.nodes[gain.0].data;
        let rows = xd.len() / d;
        let mut out = vec![0.0; xd.len()];
        let mut inv_rms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + RMSNORM_EPS).sqrt();
            inv_rms.push(inv);
            for (o, (&xv, &gv)) in out[r * d..(r + 1) * d].iter_mut().zip(row.iter().zip(gd)) {
                *o = gv * xv * inv;
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(&[x, gain]);
        Ok(self.push(out, shape, rg, Op::RmsNorm { x, gain, inv_rms }))
    }

    /// Stabilized softmax over the last dimension; rows sum to 1.
    pub fn softmax_rows(&mut self, a: TensorId) -> TensorId {
        let data = softmax_last_kernel(&self.nodes[a.0].data, &self.nodes[a.0].shape);
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        self.push(data, shape, rg, Op::SoftmaxLast { a })
    }

    /// Looks up one row per index in a 2-D table; output is [B, 1, cols] so
    /// it broadcasts across the node dimension of a batched activation.
    pub fn gather_rows(&mut self, table: TensorId, idx: &[usize]) -> Result<TensorId> {
        let shape = &self.nodes[table.0].shape;
        if shape.len() != 2 {
            return Err(Error::Shape { op: "gather_rows", lhs: shape.clone(), rhs: vec![idx.len()] });
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::contract(format!(
                "gather_rows index {bad} out of range for table with {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(&self.nodes[table.0].data[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(data, vec![idx.len(), 1, cols], rg, Op::GatherRows { table, idx: idx.to_vec() }))
    }

    /// Concatenation along the last dimension, in argument order.
    pub fn concat_last(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        let first = &self.nodes[parts[0].0].shape;
        let lead = first[..first.len() - 1].to_vec();
        let mut cols: Vec<usize> = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = &self.nodes[p.0].shape;
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::Shape { op: "concat", lhs: first.clone(), rhs: s.clone() });
            }
            cols.push(*s.last().unwrap());
        }
        let total: usize = cols.iter().sum();
        let nrows: usize = lead.iter().product::<usize>().max(1);
        let mut data = vec![0.0; nrows * total];
        let mut off = 0;
        for (&p, &c) in parts.iter().zip(&cols) {
            let src = &self.nodes[p.0].data;
            for r in 0..nrows {
                data[r * total + off..r * total + off + c].copy_from_slice(&src[r * c..(r + 1) * c]);
            }
            off += c;
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.rg(parts);
        Ok(self.push(data, shape, rg, Op::ConcatLast { parts: parts.to_vec() }))
    }

    /// Slice of `len` entries starting at `start` along the last dimension.
    pub fn narrow_last(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let shape = self.nodes[a.0].shape.clone();
        let cols = *shape.last().unwrap();
        if start + len > cols || len == 0 {
            return Err(Error::contract(format!(
                "narrow [{start}, {}) out of range for last dim {cols}",
                start + len
            )));
        }
        let nrows = self.nodes[a.0].data.len() / cols;
        let mut data = vec![0.0; nrows * len];
        for r in 0..nrows {
            data[r * len..(r + 1) * len]
                .copy_from_slice(&self.nodes[a.0].data[r * cols + start..r * cols + start + len]);
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = len;
        let rg = self.rg(&[a]);
        Ok(self.push(data, oshape, rg, Op::NarrowLast { a, start }))
    }

    /// Halves the last dimension into two equal parts.
    pub fn split_half_last(&mut self, a: TensorId) -> Result<(TensorId, TensorId)> {
        let cols = *self.nodes[a.0].shape.last().unwrap();
        if !cols.is_multiple_of(2) {
            return Err(Error::Shape {
                op: "split",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: vec![2],
            });
        }
        let half = cols / 2;
        Ok((self.narrow_last(a, 0, half)?, self.narrow_last(a, half, half)?))
    }

    /// Element-order-preserving reshape.
    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a.0].data.len() || shape.is_empty() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.nodes[a.0].data.clone();
        let rg = self.rg(&[a]);
        Ok(self.push(data, shape.to_vec(), rg, Op::Reshape { a }))
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let data = self.nodes[a.0].data.iter().map(|&x| c * x).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        self.push(data, shape, rg, Op::Scale { a, c })
    }

    /// Sum over one axis (the axis is removed from the shape).
    pub fn sum_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() {
            return Err(Error::contract(format!("sum_axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let an = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        let src = &self.nodes[a.0].data;
        for o in 0..outer {
            for x in 0..an {
                let base = (o * an + x) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        let mut oshape: Vec<usize> = shape[..axis].to_vec();
        oshape.extend_from_slice(&shape[axis + 1..]);
        if oshape.is_empty() {
            oshape.push(1);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, oshape, rg, Op::SumAxis { a, axis }))
    }

    /// Sum of all elements (scalar output).
    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![s], vec![1], rg, Op::SumAll { a })
    }

    /// Huber loss of `pred` against a constant target, summed over each
    /// sample's elements and averaged over the leading batch dimensions
    /// (everything before the last two axes).
    pub fn huber_vs(&mut self, pred: TensorId, target: &Tensor, delta: f64) -> Result<TensorId> {
        let shape = &self.nodes[pred.0].shape;
        if *shape != target.shape {
            return Err(Error::Shape { op: "huber", lhs: shape.clone(), rhs: target.shape.clone() });
        }
        let batch = if shape.len() > 2 { shape[..shape.len() - 2].iter().product() } else { 1 };
        let mut total = 0.0;
        for (&p, &t) in self.nodes[pred.0].data.iter().zip(&target.data) {
            let e = (p - t).abs();
            total += if e <= delta { 0.5 * e * e } else { delta * e - 0.5 * delta * delta };
        }
        total /= batch as f64;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            vec![total],
            vec![1],
            rg,
            Op::Huber { pred, target: target.data.clone(), delta, batch },
        ))
    }

    // ── Backward ──────────────────────────────────────────────────────

    fn add_grad(&mut self, id: TensorId, delta: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let n = self.nodes[id.0].data.len();
        let grad = self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Populates gradients of `loss` w.r.t. every `requires_grad` node.
    /// `loss` must be a scalar, and each graph may run backward only once.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if self.backward_done {
            return Err(Error::contract("backward already called on this graph"));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let grad = self.nodes[i].grad.clone().unwrap();
            match &self.nodes[i].op {
                Op::Leaf => {}

                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let (abatch, m, k) = split_matrix_shape(&self.nodes[a.0].shape).unwrap();
                    let (bbatch, _, n) = split_matrix_shape(&self.nodes[b.0].shape).unwrap();
                    let (abatch, bbatch) = (abatch.to_vec(), bbatch.to_vec());
                    let nb = grad.len() / (m * n);
                    let mut da = vec![0.0; self.nodes[a.0].data.len()];
                    let mut db = vec![0.0; self.nodes[b.0].data.len()];
                    for s in 0..nb {
                        let g = &grad[s * m * n..(s + 1) * m * n];
                        let aoff = if abatch.is_empty() { 0 } else { s * m * k };
                        let boff = if bbatch.is_empty() { 0 } else { s * k * n };
                        matmul2d_nt_acc(
                            g,
                            &self.nodes[b.0].data[boff..boff + k * n],
                            m,
                            k,
                            n,
                            &mut da[aoff..aoff + m * k],
                        );
                        matmul2d_tn_acc(
                            &self.nodes[a.0].data[aoff..aoff + m * k],
                            g,
                            m,
                            k,
                            n,
                            &mut db[boff..boff + k * n],
                        );
                    }
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }

                Op::TransposeLast { a } => {
                    let a = *a;
                    let (dg, _) = transpose_last_kernel(&grad, &self.nodes[i].shape).unwrap();
                    self.add_grad(a, &dg);
                }

                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    let oshape = self.nodes[i].shape.clone();
                    let da = reduce_to_shape(&grad, &oshape, &self.nodes[a.0].shape);
                    let db = reduce_to_shape(&grad, &oshape, &self.nodes[b.0].shape);
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }

                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let oshape = self.nodes[i].shape.clone();
                    let (ga, _) = broadcast_binop(
                        &grad,
                        &oshape,
                        &self.nodes[b.0].data,
                        &self.nodes[b.0].shape,
                        "mul",
                        |g, y| g * y,
                    )
                    .unwrap();
                    let (gb, _) = broadcast_binop(
                        &grad,
                        &oshape,
                        &self.nodes[a.0].data,
                        &self.nodes[a.0].shape,
                        "mul",
                        |g, x| g * x,
                    )
                    .unwrap();
                    let da = reduce_to_shape(&ga, &oshape, &self.nodes[a.0].shape);
                    let db = reduce_to_shape(&gb, &oshape, &self.nodes[b.0].shape);
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }

                Op::Sigmoid { a } => {
                    let a = *a;
                    let dg: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[i].data)
                        .map(|(&g, &s)| g * s * (1.0 - s))
                        .collect();
                    self.add_grad(a, &dg);
                }

                Op::Relu { a } => {
                    let a = *a;
                    let dg: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[a.0].data)
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    self.add_grad(a, &dg);
                }

                Op::RmsNorm { x, gain, inv_rms } => {
                    let (x, gain) = (*x, *gain);
                    let inv_rms = inv_rms.clone();
                    let d = *self.nodes[x.0].shape.last().unwrap();
                    let xd = self.nodes[x.0].data.clone();
                    let gd = self.nodes[gain.0].data.clone();
                    let rows = xd.len() / d;
                    let mut dx = vec![0.0; xd.len()];
                    let mut dgain = vec![0.0; d];
                    for r in 0..rows {
                        let inv = inv_rms[r];
                        let xr = &xd[r * d..(r + 1) * d];
                        let ur = &grad[r * d..(r + 1) * d];
                        // dot = Σ_i u_i g_i x_i
                        let mut dot = 0.0;
                        for j in 0..d {
                            dot += ur[j] * gd[j] * xr[j];
                            dgain[j] += ur[j] * xr[j] * inv;
                        }
                        let c = inv * inv * inv * dot / d as f64;
                        for j in 0..d {
                            dx[r * d + j] = inv * ur[j] * gd[j] - c * xr[j];
                        }
                    }
                    self.add_grad(x, &dx);
                    self.add_grad(gain, &dgain);
                }

                Op::SoftmaxLast { a } => {
                    let a = *a;
                    let cols = *self.nodes[i].shape.last().unwrap();
                    let out = &self.nodes[i].data;
                    let mut dg = vec![0.0; out.len()];
                    for r in 0..out.len() / cols {
                        let s = &out[r * cols..(r + 1) * cols];
                        let u = &grad[r * cols..(r + 1) * cols];
                        let dot: f64 = s.iter().zip(u).map(|(&sv, &uv)| sv * uv).sum();
                        for j in 0..cols {
                            dg[r * cols + j] = s[j] * (u[j] - dot);
                        }
                    }
                    self.add_grad(a, &dg);
                }

                Op::GatherRows { table, idx } => {
                    let table = *table;
                    let idx = idx.clone();
                    let cols = self.nodes[table.0].shape[1];
                    let mut dt = vec![0.0; self.nodes[table.0].data.len()];
                    for (b, &row) in idx.iter().enumerate() {
                        for j in 0..cols {
                            dt[row * cols + j] += grad[b * cols + j];
                        }
                    }
                    self.add_grad(table, &dt);
                }

                Op::ConcatLast { parts } => {
                    let parts = parts.clone();
                    let total = *self.nodes[i].shape.last().unwrap();
                    let nrows = grad.len() / total;
                    let mut off = 0;
                    for p in parts {
                        let c = *self.nodes[p.0].shape.last().unwrap();
                        let mut dp = vec![0.0; nrows * c];
                        for r in 0..nrows {
                            dp[r * c..(r + 1) * c]
                                .copy_from_slice(&grad[r * total + off..r * total + off + c]);
                        }
                        self.add_grad(p, &dp);
                        off += c;
                    }
                }

                Op::NarrowLast { a, start } => {
                    let (a, start) = (*a, *start);
                    let len = *self.nodes[i].shape.last().unwrap();
                    let cols = *self.nodes[a.0].shape.last().unwrap();
                    let nrows = self.nodes[a.0].data.len() / cols;
                    let mut da = vec![0.0; self.nodes[a.0].data.len()];
                    for r in 0..nrows {
                        da[r * cols + start..r * cols + start + len]
                            .copy_from_slice(&grad[r * len..(r + 1) * len]);
                    }
                    self.add_grad(a, &da);
                }

                Op::Reshape { a } => {
                    let a = *a;
                    self.add_grad(a, &grad);
                }

                Op::Scale { a, c } => {
                    let (a, c) = (*a, *c);
                    let dg: Vec<f64> = grad.iter().map(|&g| c * g).collect();
                    self.add_grad(a, &dg);
                }

                Op::SumAxis { a, axis } => {
                    let (a, axis) = (*a, *axis);
                    let shape = self.nodes[a.0].shape.clone();
                    let outer: usize = shape[..axis].iter().product();
                    let an = shape[axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let mut da = vec![0.0; self.nodes[a.0].data.len()];
                    for o in 0..outer {
                        let g = &grad[o * inner..(o + 1) * inner];
                        for x in 0..an {
                            let base = (o * an + x) * inner;
                            da[base..base + inner].copy_from_slice(g);
                        }
                    }
                    self.add_grad(a, &da);
                }

                Op::SumAll { a } => {
                    let a = *a;
                    let g = grad[0];
                    let da = vec![g; self.nodes[a.0].data.len()];
                    self.add_grad(a, &da);
                }

                Op::Huber { pred, target, delta, batch } => {
                    let (pred, delta, batch) = (*pred, *delta, *batch);
                    let target = target.clone();
                    let u = grad[0] / batch as f64;
                    let dp: Vec<f64> = self.nodes[pred.0]
                        .data
                        .iter()
                        .zip(&target)
                        .map(|(&p, &t)| u * (p - t).clamp(-delta, delta))
                        .collect();
                    self.add_grad(pred, &dp);
                }
            }
        }
        Ok(())
    }
}
