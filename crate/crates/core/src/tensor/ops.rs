use std::rc::Rc;

use rand::Rng;

use super::gemm::{gemm, View};
use super::{numel, Mask, Tensor};
use crate::error::{Error, Result};

/// Additive logit penalty applied at masked softmax positions.
pub const MASK_PENALTY: f64 = -1e9;

type Grads = Vec<Option<Vec<f64>>>;

/// Recorded operation plus the context its backward rule needs.
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Scale(f64),
    /// `a + b` with `b` tiled over the leading dimensions of `a`.
    AddSuffix,
    MatMul {
        trans_b: bool,
        shared_b: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Reshape,
    Permute(Vec<usize>),
    Softmax,
    LayerNorm {
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Relu,
    Dropout(Vec<f64>),
    Embedding(Vec<usize>),
    Conv1d {
        patches: Vec<f64>,
        lengths: Vec<usize>,
        seq: usize,
        window: usize,
    },
    ConcatLast(Vec<usize>),
    CrossEntropy {
        probs: Vec<f64>,
        targets: Vec<usize>,
        valid: Vec<bool>,
        smoothing: f64,
        count: usize,
    },
    Sum,
    Mean,
    Custom {
        name: &'static str,
        derivative: Rc<dyn Fn(f64) -> f64>,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddSuffix => "add_suffix",
            Op::MatMul { .. } => "matmul",
            Op::Reshape => "reshape",
            Op::Permute(_) => "permute",
            Op::Softmax => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Relu => "relu",
            Op::Dropout(_) => "dropout",
            Op::Embedding(_) => "embedding",
            Op::Conv1d { .. } => "conv1d",
            Op::ConcatLast(_) => "concat",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Custom { name, .. } => name,
        }
    }

    pub fn backward(&self, out: &Tensor, parents: &[Tensor], g: &[f64]) -> Result<Grads> {
        let want = |i: usize| parents[i].requires_grad();
        Ok(match self {
            Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            Op::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
            Op::Mul => {
                let a = parents[0].data();
                let b = parents[1].data();
                vec![
                    want(0).then(|| g.iter().zip(b.iter()).map(|(g, b)| g * b).collect()),
                    want(1).then(|| g.iter().zip(a.iter()).map(|(g, a)| g * a).collect()),
                ]
            }
            Op::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
            Op::AddSuffix => {
                let width = parents[1].numel();
                let mut gb = vec![0.0; width];
                for chunk in g.chunks(width) {
                    gb.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                }
                vec![Some(g.to_vec()), Some(gb)]
            }
            Op::MatMul { trans_b, shared_b, batch, m, k, n } => {
                matmul_backward(parents, g, *trans_b, *shared_b, *batch, *m, *k, *n)
            }
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Permute(axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                vec![Some(permute_data(g, out.shape(), &inv).0)]
            }
            Op::Softmax => {
                let y = out.data();
                let last = *out.shape().last().unwrap_or(&1);
                let mut gx = vec![0.0; g.len()];
                for ((gx, gy), y) in gx.chunks_mut(last).zip(g.chunks(last)).zip(y.chunks(last)) {
                    let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
                    for j in 0..last {
                        gx[j] = y[j] * (gy[j] - dot);
                    }
                }
                vec![Some(gx)]
            }
            Op::LayerNorm { xhat, rstd } => {
                let gain = parents[1].data();
                let n = gain.len();
                let mut gx = vec![0.0; g.len()];
                let mut ggain = vec![0.0; n];
                let mut gbias = vec![0.0; n];
                for (row, ((gx, gy), xh)) in gx.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)).enumerate() {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..n {
                        let d = gy[j] * gain[j];
                        mean_d += d;
                        mean_dx += d * xh[j];
                        ggain[j] += gy[j] * xh[j];
                        gbias[j] += gy[j];
                    }
                    mean_d /= n as f64;
                    mean_dx /= n as f64;
                    for j in 0..n {
                        let d = gy[j] * gain[j];
                        gx[j] = rstd[row] * (d - mean_d - xh[j] * mean_dx);
                    }
                }
                vec![Some(gx), Some(ggain), Some(gbias)]
            }
            Op::Relu => {
                let x = parents[0].data();
                vec![Some(g.iter().zip(x.iter()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect())]
            }
            Op::Dropout(scale) => vec![Some(g.iter().zip(scale).map(|(g, s)| g * s).collect())],
            Op::Embedding(ids) => {
                let table = &parents[0];
                let dim = table.shape()[1];
                let mut gt = vec![0.0; table.numel()];
                for (row, &id) in ids.iter().enumerate() {
                    let src = &g[row * dim..(row + 1) * dim];
                    gt[id * dim..(id + 1) * dim].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                }
                vec![Some(gt)]
            }
            Op::Conv1d { patches, lengths, seq, window } => {
                conv1d_backward(parents, g, patches, lengths, *seq, *window)
            }
            Op::ConcatLast(widths) => {
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut out: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for (o, &w) in out.iter_mut().zip(widths) {
                        o.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                out.into_iter().map(Some).collect()
            }
            Op::CrossEntropy { probs, targets, valid, smoothing, count } => {
                let vocab = probs.len() / targets.len();
                let mut gx = vec![0.0; probs.len()];
                let scale = g[0] / *count as f64;
                let uniform = smoothing / vocab as f64;
                for (row, (&t, &ok)) in targets.iter().zip(valid).enumerate() {
                    if !ok {
                        continue;
                    }
                    let p = &probs[row * vocab..(row + 1) * vocab];
                    let gr = &mut gx[row * vocab..(row + 1) * vocab];
                    for v in 0..vocab {
                        let q = if v == t { 1.0 - smoothing + uniform } else { uniform };
                        gr[v] = scale * (p[v] - q);
                    }
                }
                vec![Some(gx)]
            }
            Op::Sum => vec![Some(vec![g[0]; parents[0].numel()])],
            Op::Mean => {
                let n = parents[0].numel();
                vec![Some(vec![g[0] / n as f64; n])]
            }
            Op::Custom { derivative, .. } => {
                let x = parents[0].data();
                vec![Some(g.iter().zip(x.iter()).map(|(g, &x)| g * derivative(x)).collect())]
            }
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn matmul_backward(
    parents: &[Tensor],
    g: &[f64],
    trans_b: bool,
    shared_b: bool,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Grads {
    let (a, b) = (&parents[0], &parents[1]);
    let ad = a.data();
    let bd = b.data();
    let mut ga = a.requires_grad().then(|| vec![0.0; ad.len()]);
    let mut gb = b.requires_grad().then(|| vec![0.0; bd.len()]);
    // With a shared right operand the batch folds into the row dimension.
    let (batches, rows) = if shared_b { (1, batch * m) } else { (batch, m) };
    for i in 0..batches {
        let a_off = i * rows * k;
        let b_off = if shared_b { 0 } else { i * k * n };
        let c_off = i * rows * n;
        if let Some(ga) = ga.as_mut() {
            // dA = dC . op(B)^T
            let bv = if trans_b { View::row_major(b_off, k) } else { View::transposed(b_off, n) };
            gemm(rows, n, k, g, View::row_major(c_off, n), &bd, bv, ga, a_off, false);
        }
        if let Some(gb) = gb.as_mut() {
            if trans_b {
                // dB[n x k] = dC^T . A
                gemm(n, rows, k, g, View::transposed(c_off, n), &ad, View::row_major(a_off, k), gb, b_off, shared_b);
            } else {
                // dB[k x n] = A^T . dC
                gemm(k, rows, n, &ad, View::transposed(a_off, k), g, View::row_major(c_off, n), gb, b_off, shared_b);
            }
        }
    }
    vec![ga, gb]
}

fn conv1d_backward(
    parents: &[Tensor],
    g: &[f64],
    patches: &[f64],
    lengths: &[usize],
    seq: usize,
    window: usize,
) -> Grads {
    let (x, kernel) = (&parents[0], &parents[1]);
    let d_in = kernel.shape()[1];
    let d_out = kernel.shape()[2];
    let pad = (window - 1) / 2;
    let rows = lengths.len() * seq;
    let cols = window * d_in;
    let mut gk = vec![0.0; kernel.numel()];
    gemm(cols, rows, d_out, patches, View::transposed(0, cols), g, View::row_major(0, d_out), &mut gk, 0, false);
    let mut gbias = vec![0.0; d_out];
    for (b, &len) in lengths.iter().enumerate() {
        for t in 0..len {
            let row = &g[(b * seq + t) * d_out..(b * seq + t + 1) * d_out];
            gbias.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
    }
    let gx = x.requires_grad().then(|| {
        let kd = kernel.data();
        let mut gp = vec![0.0; rows * cols];
        gemm(rows, d_out, cols, g, View::row_major(0, d_out), &kd, View::transposed(0, d_out), &mut gp, 0, false);
        let mut gx = vec![0.0; x.numel()];
        for (b, &len) in lengths.iter().enumerate() {
            for t in 0..len {
                let prow = &gp[(b * seq + t) * cols..(b * seq + t + 1) * cols];
                for tap in 0..window {
                    let Some(src) = (t + tap).checked_sub(pad).filter(|&s| s < len) else {
                        continue;
                    };
                    let dst = &mut gx[(b * seq + src) * d_in..(b * seq + src + 1) * d_in];
                    dst.iter_mut().zip(&prow[tap * d_in..(tap + 1) * d_in]).for_each(|(a, v)| *a += v);
                }
            }
        }
        gx
    });
    vec![gx, Some(gk), Some(gbias)]
}

/// Permutes row-major `data` of `shape` so that output dim `i` is input dim `axes[i]`.
fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..data.len() {
        out.push(data[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data().iter()).map(|(&x, &y)| f(x, y)).collect()
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = zip_with(self, other, |a, b| a + b);
        Tensor::from_op(self.shape().to_vec(), data, Op::Add, vec![self.clone(), other.clone()])
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = zip_with(self, other, |a, b| a - b);
        Tensor::from_op(self.shape().to_vec(), data, Op::Sub, vec![self.clone(), other.clone()])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = zip_with(self, other, |a, b| a * b);
        Tensor::from_op(self.shape().to_vec(), data, Op::Mul, vec![self.clone(), other.clone()])
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Scale(c), vec![self.clone()])
    }

    /// `self + other`, where `other`'s shape is a suffix of `self`'s
    /// (bias vectors, positional tables).
    pub fn add_broadcast(&self, other: &Tensor) -> Result<Tensor> {
        let (s, o) = (self.shape(), other.shape());
        if o.len() > s.len() || s[s.len() - o.len()..] != *o {
            return Err(Error::shape("add_broadcast", format!("{s:?} vs {o:?}")));
        }
        let width = other.numel();
        let b = other.data();
        let mut data = self.to_vec();
        for chunk in data.chunks_mut(width) {
            chunk.iter_mut().zip(b.iter()).for_each(|(a, b)| *a += b);
        }
        drop(b);
        Tensor::from_op(s.to_vec(), data, Op::AddSuffix, vec![self.clone(), other.clone()])
    }

    /// `self[.., m, k] . other[.., k, n]`. A rank-2 `other` is shared across
    /// all leading dimensions of `self`; otherwise leading dimensions must match.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_impl(other, false)
    }

    /// `self . other^T` over the last two dimensions.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: &Tensor, trans_b: bool) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape("matmul", format!("operands must be at least 2-D: {a:?}, {b:?}")));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (bk, n) = if trans_b { (b[b.len() - 1], b[b.len() - 2]) } else { (b[b.len() - 2], b[b.len() - 1]) };
        if k != bk {
            return Err(Error::shape("matmul", format!("inner extents differ: {a:?} vs {b:?}")));
        }
        let shared_b = b.len() == 2;
        if !shared_b && a[..a.len() - 2] != b[..b.len() - 2] {
            return Err(Error::shape("matmul", format!("batch extents differ: {a:?} vs {b:?}")));
        }
        let batch = numel(&a[..a.len() - 2]);
        let mut shape = a[..a.len() - 1].to_vec();
        shape.push(n);
        let mut out = vec![0.0; batch * m * n];
        {
            let ad = self.data();
            let bd = other.data();
            let (batches, rows) = if shared_b { (1, batch * m) } else { (batch, m) };
            for i in 0..batches {
                let b_off = if shared_b { 0 } else { i * k * n };
                let bv = if trans_b { View::transposed(b_off, k) } else { View::row_major(b_off, n) };
                gemm(rows, k, n, &ad, View::row_major(i * rows * k, k), &bd, bv, &mut out, i * rows * n, false);
            }
        }
        Tensor::from_op(shape, out, Op::MatMul { trans_b, shared_b, batch, m, k, n }, vec![self.clone(), other.clone()])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape())));
        }
        Tensor::from_op(shape.to_vec(), self.to_vec(), Op::Reshape, vec![self.clone()])
    }

    /// Output dimension `i` is input dimension `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let mut seen = vec![false; self.rank()];
        if axes.len() != self.rank() || axes.iter().any(|&a| a >= self.rank() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::shape("permute", format!("axes {axes:?} for shape {:?}", self.shape())));
        }
        let (data, shape) = permute_data(&self.data(), self.shape(), axes);
        Tensor::from_op(shape, data, Op::Permute(axes.to_vec()), vec![self.clone()])
    }

    /// Softmax over the last dimension. Masked positions get an additive
    /// penalty of −1e9, so they come out exactly zero whenever their slice
    /// has at least one unmasked entry; a fully masked slice is an error.
    pub fn softmax_lastdim(&self, mask: Option<&Mask>) -> Result<Tensor> {
        let shape = self.shape();
        let last = *shape.last().ok_or_else(|| Error::shape("softmax", "scalar input"))?;
        let rows = self.numel() / last;
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        let strides = mask.map(|m| m.strides_for(shape)).transpose()?;
        let lead = &shape[..shape.len() - 1];
        let mut idx = vec![0usize; lead.len()];
        let mut z = vec![0.0; last];
        for r in 0..rows {
            let xr = &x[r * last..(r + 1) * last];
            match (mask, &strides) {
                (Some(m), Some(st)) => {
                    let base: usize = idx.iter().zip(st).map(|(i, s)| i * s).sum();
                    let step = st[st.len() - 1];
                    let keep = m.values();
                    let mut any = false;
                    for j in 0..last {
                        let k = keep[base + j * step];
                        any |= k;
                        z[j] = if k { xr[j] } else { xr[j] + MASK_PENALTY };
                    }
                    if !any {
                        return Err(Error::FullyMasked(r));
                    }
                }
                _ => z.copy_from_slice(xr),
            }
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let yr = &mut y[r * last..(r + 1) * last];
            let mut total = 0.0;
            for j in 0..last {
                yr[j] = (z[j] - max).exp();
                total += yr[j];
            }
            yr.iter_mut().for_each(|v| *v /= total);
            for d in (0..lead.len()).rev() {
                idx[d] += 1;
                if idx[d] < lead[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        drop(x);
        Tensor::from_op(shape.to_vec(), y, Op::Softmax, vec![self.clone()])
    }

    /// Normalizes each last-dim slice to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let n = *self.shape().last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if gain.shape() != [n] || bias.shape() != [n] {
            return Err(Error::shape(
                "layer_norm",
                format!("input {:?}, gain {:?}, bias {:?}", self.shape(), gain.shape(), bias.shape()),
            ));
        }
        if eps <= 0.0 {
            return Err(Error::Invalid(format!("layer_norm eps must be positive, got {eps}")));
        }
        let x = self.data();
        let (gd, bd) = (gain.data(), bias.data());
        let rows = x.len() / n;
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let xr = &x[r * n..(r + 1) * n];
            let mean = xr.iter().sum::<f64>() / n as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for j in 0..n {
                let h = (xr[j] - mean) * s;
                xhat[r * n + j] = h;
                y[r * n + j] = h * gd[j] + bd[j];
            }
        }
        drop((x, gd, bd));
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            Op::LayerNorm { xhat, rstd },
            vec![self.clone(), gain.clone(), bias.clone()],
        )
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|&v| v.max(0.0)).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Relu, vec![self.clone()])
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`. `p == 0` returns `self` unchanged.
    pub fn dropout<R: Rng>(&self, p: f64, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let scale: Vec<f64> = (0..self.numel()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let data = self.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Dropout(scale), vec![self.clone()])
    }

    /// Gathers rows of a `[V, d]` table; the result has shape `out_lead ++ [d]`.
    pub fn embedding(&self, ids: &[usize], out_lead: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 || numel(out_lead) != ids.len() {
            return Err(Error::shape(
                "embedding",
                format!("table {:?}, {} ids for {out_lead:?}", self.shape(), ids.len()),
            ));
        }
        let (vocab, dim) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Invalid(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        let table = self.data();
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            data.extend_from_slice(&table[id * dim..(id + 1) * dim]);
        }
        drop(table);
        let mut shape = out_lead.to_vec();
        shape.push(dim);
        Tensor::from_op(shape, data, Op::Embedding(ids.to_vec()), vec![self.clone()])
    }

    /// Same-padded 1-D convolution over time.
    ///
    /// `self` is `[T, d_in]` or `[B, T, d_in]`, `kernel` is `[w, d_in, d_out]`
    /// with odd `w`, `bias` is `[d_out]`. Each side is zero-padded by
    /// `(w - 1) / 2`, so the output keeps length `T`. With `lengths`, row `b`
    /// is treated as ending at `lengths[b]`: later positions read as zero
    /// padding and produce zero output.
    pub fn conv1d_same(&self, kernel: &Tensor, bias: &Tensor, lengths: Option<&[usize]>) -> Result<Tensor> {
        let shape = self.shape();
        let (batch, seq, d_in) = match *shape {
            [t, d] => (1, t, d),
            [b, t, d] => (b, t, d),
            _ => return Err(Error::shape("conv1d", format!("input must be 2-D or 3-D, got {shape:?}"))),
        };
        let [window, k_in, d_out] = *kernel.shape() else {
            return Err(Error::shape("conv1d", format!("kernel must be [w, d_in, d_out], got {:?}", kernel.shape())));
        };
        if window % 2 == 0 {
            return Err(Error::Invalid(format!("conv1d window must be odd, got {window}")));
        }
        if k_in != d_in || bias.shape() != [d_out] {
            return Err(Error::shape(
                "conv1d",
                format!("input {shape:?}, kernel {:?}, bias {:?}", kernel.shape(), bias.shape()),
            ));
        }
        let lengths: Vec<usize> = match lengths {
            Some(l) if l.len() != batch || l.iter().any(|&x| x > seq) => {
                return Err(Error::shape("conv1d", format!("lengths {l:?} for batch {batch} x {seq}")));
            }
            Some(l) => l.to_vec(),
            None => vec![seq; batch],
        };
        let pad = (window - 1) / 2;
        let cols = window * d_in;
        let rows = batch * seq;
        let mut patches = vec![0.0; rows * cols];
        {
            let x = self.data();
            for (b, &len) in lengths.iter().enumerate() {
                for t in 0..len {
                    let prow = &mut patches[(b * seq + t) * cols..(b * seq + t + 1) * cols];
                    for tap in 0..window {
                        let Some(src) = (t + tap).checked_sub(pad).filter(|&s| s < len) else {
                            continue;
                        };
                        prow[tap * d_in..(tap + 1) * d_in]
                            .copy_from_slice(&x[(b * seq + src) * d_in..(b * seq + src + 1) * d_in]);
                    }
                }
            }
        }
        let mut out = vec![0.0; rows * d_out];
        gemm(
            rows,
            cols,
            d_out,
            &patches,
            View::row_major(0, cols),
            &kernel.data(),
            View::row_major(0, d_out),
            &mut out,
            0,
            false,
        );
        {
            let bd = bias.data();
            for (b, &len) in lengths.iter().enumerate() {
                for t in 0..len {
                    out[(b * seq + t) * d_out..(b * seq + t + 1) * d_out]
                        .iter_mut()
                        .zip(bd.iter())
                        .for_each(|(o, v)| *o += v);
                }
            }
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = d_out;
        Tensor::from_op(
            out_shape,
            out,
            Op::Conv1d { patches, lengths, seq, window },
            vec![self.clone(), kernel.clone(), bias.clone()],
        )
    }

    /// Concatenates tensors along the last dimension; leading dims must agree.
    pub fn concat_last(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?;
        let lead = &first.shape()[..first.rank() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            if p.rank() != first.rank() || &p.shape()[..p.rank() - 1] != lead {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", first.shape(), p.shape())));
            }
            widths.push(*p.shape().last().unwrap());
        }
        let rows = numel(lead);
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for r in 0..rows {
            for (d, &w) in datas.iter().zip(&widths) {
                data.extend_from_slice(&d[r * w..(r + 1) * w]);
            }
        }
        drop(datas);
        let mut shape = lead.to_vec();
        shape.push(total);
        Tensor::from_op(shape, data, Op::ConcatLast(widths), parts.to_vec())
    }

    /// Mean cross-entropy over positions where `valid` is true.
    ///
    /// `self` holds logits `[.., V]`; with label smoothing `alpha` the target
    /// distribution is `(1 - alpha) * onehot + alpha / V`.
    pub fn masked_cross_entropy(&self, targets: &[usize], valid: &[bool], alpha: f64) -> Result<Tensor> {
        let vocab = *self.shape().last().ok_or_else(|| Error::shape("cross_entropy", "scalar logits"))?;
        let rows = self.numel() / vocab;
        if targets.len() != rows || valid.len() != rows {
            return Err(Error::shape(
                "cross_entropy",
                format!("{rows} logit rows, {} targets, {} mask entries", targets.len(), valid.len()),
            ));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Invalid(format!("label smoothing {alpha} outside [0, 1)")));
        }
        let count = valid.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(Error::Invalid("cross entropy over a fully padded batch".into()));
        }
        let x = self.data();
        let mut probs = vec![0.0; x.len()];
        let mut total = 0.0;
        for r in 0..rows {
            let xr = &x[r * vocab..(r + 1) * vocab];
            let max = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + xr.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (p, v) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(xr) {
                *p = (v - lse).exp();
            }
            if !valid[r] {
                continue;
            }
            let t = targets[r];
            if t >= vocab {
                return Err(Error::Invalid(format!("target {t} outside vocabulary of {vocab}")));
            }
            let nll = lse - xr[t];
            let smooth = if alpha > 0.0 { lse - xr.iter().sum::<f64>() / vocab as f64 } else { 0.0 };
            total += (1.0 - alpha) * nll + alpha * smooth;
        }
        drop(x);
        Tensor::from_op(
            vec![],
            vec![total / count as f64],
            Op::CrossEntropy { probs, targets: targets.to_vec(), valid: valid.to_vec(), smoothing: alpha, count },
            vec![self.clone()],
        )
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![], vec![s], Op::Sum, vec![self.clone()])
    }

    pub fn mean(&self) -> Result<Tensor> {
        let s = self.data().iter().sum::<f64>() / self.numel() as f64;
        Tensor::from_op(vec![], vec![s], Op::Mean, vec![self.clone()])
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map_custom(
        &self,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        derivative: impl Fn(f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Custom { name, derivative: Rc::new(derivative) },
            vec![self.clone()],
        )
    }
}
