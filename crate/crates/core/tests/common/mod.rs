//! Straight-line reference forward pass over plain nested vectors, written
//! independently of the tensor engine, for one unpadded sentence pair.

#![allow(dead_code)]

pub mod bleu;

use convtransformer::model::{EncoderKind, Model};

pub type Mat = Vec<Vec<f64>>;

fn flat(model: &Model, name: &str) -> Vec<f64> {
    model.params().get(name).unwrap().to_vec()
}

/// `[rows, cols]` row-major parameter as a matrix.
fn weight(model: &Model, name: &str) -> Mat {
    let t = model.params().get(name).unwrap();
    let cols = *t.shape().last().unwrap();
    t.to_vec().chunks(cols).map(<[f64]>::to_vec).collect()
}

fn affine(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    x.iter()
        .map(|row| (0..b.len()).map(|o| b[o] + row.iter().enumerate().map(|(i, v)| v * w[i][o]).sum::<f64>()).collect())
        .collect()
}

fn linear(model: &Model, x: &Mat, prefix: &str) -> Mat {
    affine(x, &weight(model, &format!("{prefix}.weight")), &flat(model, &format!("{prefix}.bias")))
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

fn layer_norm(model: &Model, x: &Mat, prefix: &str) -> Mat {
    let g = flat(model, &format!("{prefix}.gain"));
    let b = flat(model, &format!("{prefix}.bias"));
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = (var + 1e-6).sqrt();
            row.iter().enumerate().map(|(i, v)| (v - mean) / sd * g[i] + b[i]).collect()
        })
        .collect()
}

pub fn position(pos: usize, i: usize, d: usize) -> f64 {
    let pair = (i / 2) as f64;
    let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
    if i.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

fn embed(model: &Model, table: &str, ids: &[usize]) -> Mat {
    let d = model.config().d_model;
    let e = weight(model, table);
    ids.iter()
        .enumerate()
        .map(|(t, &id)| (0..d).map(|i| e[id][i] * (d as f64).sqrt() + position(t, i, d)).collect())
        .collect()
}

/// Same-padded convolution with kernel `[w][d_in][d_out]` read as flat data.
pub fn conv(x: &Mat, kernel: &[f64], bias: &[f64], w: usize) -> Mat {
    let (t_len, d_in, d_out) = (x.len(), x[0].len(), bias.len());
    let half = (w - 1) / 2;
    (0..t_len)
        .map(|t| {
            (0..d_out)
                .map(|o| {
                    let mut acc = bias[o];
                    for k in 0..w {
                        let s = t as isize + k as isize - half as isize;
                        if s < 0 || s >= t_len as isize {
                            continue;
                        }
                        for i in 0..d_in {
                            acc += x[s as usize][i] * kernel[(k * d_in + i) * d_out + o];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn conv_block(model: &Model, x: &Mat, prefix: &str) -> Mat {
    let cfg = model.config();
    let mut cat: Mat = vec![Vec::new(); x.len()];
    for &w in &cfg.conv_windows {
        let p = format!("{prefix}.c{w}");
        let out = conv(x, &flat(model, &format!("{p}.weight")), &flat(model, &format!("{p}.bias")), w);
        for (row, part) in cat.iter_mut().zip(out) {
            row.extend(part);
        }
    }
    let fused = conv(
        &cat,
        &flat(model, &format!("{prefix}.fuse.weight")),
        &flat(model, &format!("{prefix}.fuse.bias")),
        cfg.fuse_window,
    );
    add(x, &fused)
}

/// Multi-head attention; returns the output and per-head probabilities.
fn attention(model: &Model, xq: &Mat, xkv: &Mat, prefix: &str, causal: bool) -> (Mat, Vec<Mat>) {
    let cfg = model.config();
    let (h, dk) = (cfg.n_heads, cfg.d_model / cfg.n_heads);
    let q = linear(model, xq, &format!("{prefix}.q_proj"));
    let k = linear(model, xkv, &format!("{prefix}.k_proj"));
    let v = linear(model, xkv, &format!("{prefix}.v_proj"));
    let mut merged = vec![vec![0.0; cfg.d_model]; xq.len()];
    let mut all = Vec::with_capacity(h);
    for head in 0..h {
        let cols = head * dk..(head + 1) * dk;
        let mut probs = Vec::with_capacity(xq.len());
        for i in 0..xq.len() {
            let visible = if causal { i + 1 } else { xkv.len() };
            let scores: Vec<f64> = (0..visible)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut p = vec![0.0; xkv.len()];
            for j in 0..visible {
                p[j] = exps[j] / z;
            }
            for c in cols.clone() {
                merged[i][c] = (0..xkv.len()).map(|j| p[j] * v[j][c]).sum();
            }
            probs.push(p);
        }
        all.push(probs);
    }
    (linear(model, &merged, &format!("{prefix}.out_proj")), all)
}

fn ffn(model: &Model, x: &Mat, prefix: &str) -> Mat {
    let h: Mat = linear(model, x, &format!("{prefix}.in"))
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    linear(model, &h, &format!("{prefix}.out"))
}

pub fn encode(model: &Model, src: &[usize]) -> Mat {
    let cfg = model.config();
    let mut x = embed(model, "src_embed", src);
    for l in 0..cfg.n_layers {
        if cfg.encoder_kind == EncoderKind::Conv {
            x = conv_block(model, &x, &format!("enc.{l}.conv"));
        }
        let (a, _) = attention(model, &x, &x, &format!("enc.{l}.self_attn"), false);
        x = layer_norm(model, &add(&x, &a), &format!("enc.{l}.norm1"));
        let f = ffn(model, &x, &format!("enc.{l}.ffn"));
        x = layer_norm(model, &add(&x, &f), &format!("enc.{l}.norm2"));
    }
    x
}

/// Logits `[T_t][V]` and last-layer cross-attention per head.
pub fn decode(model: &Model, memory: &Mat, tgt_in: &[usize]) -> (Mat, Vec<Mat>) {
    let cfg = model.config();
    let mut y = embed(model, "tgt_embed", tgt_in);
    let mut cross = Vec::new();
    for l in 0..cfg.n_layers {
        let p = format!("dec.{l}");
        let (a, _) = attention(model, &y, &y, &format!("{p}.self_attn"), true);
        y = layer_norm(model, &add(&y, &a), &format!("{p}.norm1"));
        let (c, probs) = attention(model, &y, memory, &format!("{p}.cross_attn"), false);
        cross = probs;
        y = layer_norm(model, &add(&y, &c), &format!("{p}.norm2"));
        let f = ffn(model, &y, &format!("{p}.ffn"));
        y = layer_norm(model, &add(&y, &f), &format!("{p}.norm3"));
    }
    (linear(model, &y, "out_proj"), cross)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
