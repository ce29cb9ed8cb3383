//! Dense row-major f64 tensors and the raw kernels shared by the recorded
//! operators in [`graph`].
//!
//! `Tensor` is a plain value type: model parameters, dataset windows, and
//! detached activations all live here. Differentiation happens on a
//! [`graph::Graph`], which copies tensors in as leaves and hands gradients
//! back out.

pub mod graph;

pub use graph::{Graph, TensorId};

use crate::{Error, Result};

/// Dense multi-dimensional array of f64 values in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    /// Accumulated gradient, same length as `data` when present.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_dims(&shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], requires_grad: false, grad: None }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![value; numel], requires_grad: false, grad: None }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value], requires_grad: false, grad: None }
    }

    /// Marks the tensor as trainable.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Element lookup by multi-index (row-major).
    pub fn at(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (d, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[d]);
            off = off * self.shape[d] + i;
        }
        self.data[off]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy with a new shape; element count must be conserved.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        check_dims(&shape)?;
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape { op: "reshape", lhs: self.shape.clone(), rhs: shape });
        }
        Ok(Tensor { shape, data: self.data.clone(), requires_grad: false, grad: None })
    }

    /// Matrix product over the last two dimensions with leading batch
    /// broadcast (either operand may omit the batch dimensions).
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (data, shape) = matmul_kernel(&self.data, &self.shape, &rhs.data, &rhs.shape)?;
        Tensor::from_vec(shape, data)
    }

    /// Broadcast elementwise addition.
    pub fn add_b(&self, rhs: &Tensor) -> Result<Tensor> {
        let (data, shape) =
            broadcast_binop(&self.data, &self.shape, &rhs.data, &rhs.shape, "add", |a, b| a + b)?;
        Tensor::from_vec(shape, data)
    }

    /// Broadcast elementwise multiplication.
    pub fn mul_b(&self, rhs: &Tensor) -> Result<Tensor> {
        let (data, shape) =
            broadcast_binop(&self.data, &self.shape, &rhs.data, &rhs.shape, "mul", |a, b| a * b)?;
        Tensor::from_vec(shape, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Transpose of the last two dimensions.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let (data, shape) = transpose_last_kernel(&self.data, &self.shape)?;
        Tensor::from_vec(shape, data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn check_dims(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::contract(format!("invalid tensor shape {shape:?}")));
    }
    Ok(())
}

// ── Raw kernels ───────────────────────────────────────────────────────

/// 2-D matrix multiply accumulating into `out` (ikj order, cache friendly).
fn matmul2d_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += aip * bv;
            }
        }
    }
}

/// dA = dC · Bᵀ for one 2-D slice: g is m×n, b is k×n, out accumulates m×k.
pub(crate) fn matmul2d_nt_acc(g: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (gv, bv) in grow.iter().zip(brow) {
                s += gv * bv;
            }
            orow[p] += s;
        }
    }
}

/// dB = Aᵀ · dC for one 2-D slice: a is m×k, g is m×n, out accumulates k×n.
pub(crate) fn matmul2d_tn_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Splits a shape into (batch dims, rows, cols); requires ndim >= 2.
pub(crate) fn split_matrix_shape(shape: &[usize]) -> Result<(&[usize], usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape { op: "matmul", lhs: shape.to_vec(), rhs: vec![] });
    }
    let (batch, mat) = shape.split_at(shape.len() - 2);
    Ok((batch, mat[0], mat[1]))
}

/// Batched matrix product. Batch dimensions must match exactly or be absent
/// on one side (that operand is then shared across all slices).
pub(crate) fn matmul_kernel(
    a: &[f64],
    ashape: &[usize],
    b: &[f64],
    bshape: &[usize],
) -> Result<(Vec<f64>, Vec<usize>)> {
    let (abatch, m, k) = split_matrix_shape(ashape)?;
    let (bbatch, k2, n) = split_matrix_shape(bshape)?;
    if k != k2 || (!abatch.is_empty() && !bbatch.is_empty() && abatch != bbatch) {
        return Err(Error::Shape { op: "matmul", lhs: ashape.to_vec(), rhs: bshape.to_vec() });
    }
    let batch: &[usize] = if abatch.is_empty() { bbatch } else { abatch };
    let nb: usize = batch.iter().product::<usize>().max(1);
    let mut out = vec![0.0; nb * m * n];
    for s in 0..nb {
        let aoff = if abatch.is_empty() { 0 } else { s * m * k };
        let boff = if bbatch.is_empty() { 0 } else { s * k * n };
        matmul2d_acc(&a[aoff..aoff + m * k], &b[boff..boff + k * n], m, k, n, &mut out[s * m * n..(s + 1) * m * n]);
    }
    let mut oshape = batch.to_vec();
    oshape.push(m);
    oshape.push(n);
    Ok((out, oshape))
}

pub(crate) fn transpose_last_kernel(data: &[f64], shape: &[usize]) -> Result<(Vec<f64>, Vec<usize>)> {
    let (batch, r, c) = split_matrix_shape(shape)?;
    let nb: usize = batch.iter().product::<usize>().max(1);
    let mut out = vec![0.0; data.len()];
    for s in 0..nb {
        let src = &data[s * r * c..(s + 1) * r * c];
        let dst = &mut out[s * r * c..(s + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    let mut oshape = batch.to_vec();
    oshape.push(c);
    oshape.push(r);
    Ok((out, oshape))
}

/// Broadcast shape of two operands under trailing alignment: dimensions are
/// matched from the right; a missing or size-1 dimension replicates.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::Shape { op, lhs: a.to_vec(), rhs: b.to_vec() });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Row-major strides of `shape` within `out_shape` (trailing-aligned);
/// broadcast dimensions get stride 0.
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let pad = nd - shape.len();
    let mut strides = vec![0usize; nd];
    let mut acc = 1usize;
    for d in (0..shape.len()).rev() {
        strides[pad + d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// Elementwise binary op with numpy-style broadcasting.
pub(crate) fn broadcast_binop(
    a: &[f64],
    ashape: &[usize],
    b: &[f64],
    bshape: &[usize],
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    if ashape == bshape {
        let out = a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
        return Ok((out, ashape.to_vec()));
    }
    let oshape = broadcast_shape(ashape, bshape, op)?;
    let numel: usize = oshape.iter().product();
    let sa = broadcast_strides(ashape, &oshape);
    let sb = broadcast_strides(bshape, &oshape);
    let nd = oshape.len();
    let mut out = vec![0.0; numel];
    let mut idx = vec![0usize; nd];
    let (mut off_a, mut off_b) = (0usize, 0usize);
    for o in out.iter_mut() {
        *o = f(a[off_a], b[off_b]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            off_a += sa[d];
            off_b += sb[d];
            if idx[d] < oshape[d] {
                break;
            }
            idx[d] = 0;
            off_a -= sa[d] * oshape[d];
            off_b -= sb[d] * oshape[d];
        }
    }
    Ok((out, oshape))
}

/// Sums `grad` (laid out as `gshape`) down to `tshape`, undoing a broadcast.
pub(crate) fn reduce_to_shape(grad: &[f64], gshape: &[usize], tshape: &[usize]) -> Vec<f64> {
    if gshape == tshape {
        return grad.to_vec();
    }
    let tnumel: usize = tshape.iter().product();
    let st = broadcast_strides(tshape, gshape);
    let nd = gshape.len();
    let mut out = vec![0.0; tnumel];
    let mut idx = vec![0usize; nd];
    let mut off_t = 0usize;
    for &g in grad {
        out[off_t] += g;
        for d in (0..nd).rev() {
            idx[d] += 1;
            off_t += st[d];
            if idx[d] < gshape[d] {
                break;
            }
            idx[d] = 0;
            off_t -= st[d] * gshape[d];
        }
    }
    out
}

/// Numerically stabilized softmax over the last dimension.
pub(crate) fn softmax_last_kernel(data: &[f64], shape: &[usize]) -> Vec<f64> {
    let cols = *shape.last().unwrap();
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            let e = (s - max).exp();
            *d = e;
            sum += e;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

/// Logistic function, shared by the recorded operator and the reference
/// expert oracle.
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
