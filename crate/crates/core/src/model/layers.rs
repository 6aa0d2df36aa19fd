use rand_chacha::ChaCha8Rng;

use super::params::ParameterSet;
use crate::error::{Error, Result};
use crate::tensor::{Mask, Tensor};

/// Whether a forward pass applies dropout (and with which generator).
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn dropout(&mut self, x: &Tensor, p: f64) -> Result<Tensor> {
        match self {
            Mode::Train(rng) if p > 0.0 => x.dropout(p, *rng),
            _ => Ok(x.clone()),
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Sinusoidal position table: `sin` on even dims, `cos` on odd dims, with
/// wavelengths growing as `10000^(2i / d_model)`.
pub fn sinusoidal_positions(max_len: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::Invalid(format!("d_model must be even and positive, got {d_model}")));
    }
    let mut data = vec![0.0; max_len * d_model];
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(&[max_len, d_model], data)
}

pub fn linear(x: &Tensor, params: &ParameterSet, prefix: &str) -> Result<Tensor> {
    let w = params.get(&format!("{prefix}.weight"))?;
    let b = params.get(&format!("{prefix}.bias"))?;
    x.matmul(w)?.add_broadcast(b)
}

/// `softmax(Q K^T / sqrt(d_k)) V` over the last two dims; also returns the
/// probability matrix.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&Mask>) -> Result<(Tensor, Tensor)> {
    let dk = *q.shape().last().unwrap_or(&0);
    if k.shape().last() != Some(&dk) {
        return Err(Error::shape("attention", format!("query {:?} vs key {:?}", q.shape(), k.shape())));
    }
    let scores = q.matmul_nt(k)?.scale(1.0 / (dk as f64).sqrt())?;
    let probs = scores.softmax_lastdim(mask)?;
    let out = probs.matmul(v)?;
    Ok((out, probs))
}

/// Splits `[B, T, d]` into `[B, H, T, d/H]`.
fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let [b, t, d] = *x.shape() else {
        return Err(Error::shape("split_heads", format!("{:?}", x.shape())));
    };
    x.reshape(&[b, t, heads, d / heads])?.permute(&[0, 2, 1, 3])
}

/// Multi-head attention over `[B, T, d]` (or `[T, d]`) inputs. Returns the
/// projected output and per-head probabilities `[B, H, T_q, T_k]`.
pub fn multi_head_attention(
    x_q: &Tensor,
    x_kv: &Tensor,
    params: &ParameterSet,
    prefix: &str,
    n_heads: usize,
    mask: Option<&Mask>,
) -> Result<(Tensor, Tensor)> {
    if x_q.rank() == 2 {
        let (q3, kv3) =
            (x_q.reshape(&[1, x_q.shape()[0], x_q.shape()[1]])?, x_kv.reshape(&[1, x_kv.shape()[0], x_kv.shape()[1]])?);
        let (out, probs) = multi_head_attention(&q3, &kv3, params, prefix, n_heads, mask)?;
        return Ok((out.reshape(&out.shape()[1..])?, probs));
    }
    let d = *x_q.shape().last().unwrap_or(&0);
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(Error::Invalid(format!("d_model {d} is not divisible by {n_heads} heads")));
    }
    let (b, tq) = (x_q.shape()[0], x_q.shape()[1]);
    let q = split_heads(&linear(x_q, params, &format!("{prefix}.q_proj"))?, n_heads)?;
    let k = split_heads(&linear(x_kv, params, &format!("{prefix}.k_proj"))?, n_heads)?;
    let v = split_heads(&linear(x_kv, params, &format!("{prefix}.v_proj"))?, n_heads)?;
    let (ctx, probs) = scaled_dot_attention(&q, &k, &v, mask)?;
    let merged = ctx.permute(&[0, 2, 1, 3])?.reshape(&[b, tq, d])?;
    Ok((linear(&merged, params, &format!("{prefix}.out_proj"))?, probs))
}

/// Position-wise `relu(x W1 + b1) W2 + b2`.
pub fn feed_forward(x: &Tensor, params: &ParameterSet, prefix: &str) -> Result<Tensor> {
    let h = linear(x, params, &format!("{prefix}.in"))?.relu()?;
    linear(&h, params, &format!("{prefix}.out"))
}

/// `M + C'(Concat(C_w1(M), C_w2(M), ...))` with purely linear same-padded
/// convolutions; rows past `lengths[b]` see zero padding.
pub fn conv_sub_block(
    m: &Tensor,
    params: &ParameterSet,
    prefix: &str,
    windows: &[usize],
    lengths: Option<&[usize]>,
) -> Result<Tensor> {
    let mut branches = Vec::with_capacity(windows.len());
    for &w in windows {
        let p = format!("{prefix}.c{w}");
        let out = m.conv1d_same(params.get(&format!("{p}.weight"))?, params.get(&format!("{p}.bias"))?, lengths)?;
        branches.push(out);
    }
    let cat = Tensor::concat_last(&branches)?;
    let fused = cat.conv1d_same(
        params.get(&format!("{prefix}.fuse.weight"))?,
        params.get(&format!("{prefix}.fuse.bias"))?,
        lengths,
    )?;
    m.add(&fused)
}
