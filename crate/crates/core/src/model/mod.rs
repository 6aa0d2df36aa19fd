//! Transformer and convtransformer encoder-decoder models.
//!
//! Both kinds share one parameter naming scheme; the conv kind adds an
//! `enc.{l}.conv.*` sub-block at the start of every encoder layer. Layers use
//! the post-norm residual form `LayerNorm(x + Dropout(Sublayer(x)))`.

mod config;
mod layers;
mod params;

pub use config::{EncoderKind, ModelConfig};
pub use layers::{
    conv_sub_block, feed_forward, linear, multi_head_attention, scaled_dot_attention, sinusoidal_positions, Mode,
};
pub use params::{conv_param_prefix, param_layout, ParamInit, ParamSpec, ParameterSet};

use crate::data::{Batch, TokenGrid};
use crate::error::{Error, Result};
use crate::tensor::{no_grad, Mask, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Number of scalar parameters `cfg` needs, from the layout alone.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    param_layout(cfg).iter().map(ParamSpec::numel).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadSelection {
    Index(usize),
    Mean,
}

/// A row-stochastic `[target_len, source_len]` cross-attention matrix for
/// one sentence, padding excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub matrix: Vec<f64>,
    pub target_len: usize,
    pub source_len: usize,
    pub layer: usize,
    pub head: HeadSelection,
}

impl AttentionMap {
    /// Cuts row `b` out of per-head probabilities `[B, H, T_t, T_s]`, selects
    /// or averages heads, and renormalizes each row.
    pub fn from_probs(
        probs: &Tensor,
        b: usize,
        layer: usize,
        head: HeadSelection,
        target_len: usize,
        source_len: usize,
    ) -> Result<Self> {
        let [nb, nh, tt, ts] = *probs.shape() else {
            return Err(Error::shape("attention_map", format!("{:?}", probs.shape())));
        };
        if b >= nb || target_len == 0 || target_len > tt || source_len == 0 || source_len > ts {
            return Err(Error::shape(
                "attention_map",
                format!("row {b}, lengths {target_len}x{source_len} in {:?}", probs.shape()),
            ));
        }
        let heads: Vec<usize> = match head {
            HeadSelection::Index(h) if h < nh => vec![h],
            HeadSelection::Index(h) => return Err(Error::Invalid(format!("head {h} out of {nh}"))),
            HeadSelection::Mean => (0..nh).collect(),
        };
        let p = probs.data();
        let mut matrix = vec![0.0; target_len * source_len];
        for &h in &heads {
            for i in 0..target_len {
                let base = ((b * nh + h) * tt + i) * ts;
                for j in 0..source_len {
                    matrix[i * source_len + j] += p[base + j];
                }
            }
        }
        for row in matrix.chunks_mut(source_len) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        Ok(AttentionMap { matrix, target_len, source_len, layer, head })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.source_len + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.source_len..(i + 1) * self.source_len]
    }
}

pub struct DecoderOutput {
    /// `[B, T_t, vocab]`.
    pub logits: Tensor,
    /// Per layer, `[B, H, T_t, T_s]` cross-attention probabilities.
    pub cross_attn: Vec<Tensor>,
}

/// Configuration plus parameters; immutable during a forward pass.
pub struct Model {
    config: ModelConfig,
    params: ParameterSet,
    positions: Vec<f64>,
}

impl Model {
    /// Wraps `params`, which must match `param_layout(&config)` exactly.
    pub fn new(config: ModelConfig, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Invalid(format!("expected {} parameter tensors, found {}", layout.len(), params.len())));
        }
        for spec in &layout {
            let t = params.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::shape(
                    "model",
                    format!("{} has shape {:?}, expected {:?}", spec.name, t.shape(), spec.shape),
                ));
            }
        }
        let positions = sinusoidal_positions(config.max_len, config.d_model)?.to_vec();
        Ok(Model { config, params, positions })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ParameterSet::init(&config, seed)?;
        Self::new(config, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn embed(&self, table: &str, grid: &TokenGrid, mode: &mut Mode) -> Result<Tensor> {
        let d = self.config.d_model;
        if grid.cols > self.config.max_len {
            return Err(Error::TooLong { len: grid.cols, max_len: self.config.max_len });
        }
        let pos = Tensor::new(&[grid.cols, d], self.positions[..grid.cols * d].to_vec())?;
        let x = self
            .params
            .get(table)?
            .embedding(&grid.ids, &[grid.rows, grid.cols])?
            .scale((d as f64).sqrt())?
            .add_broadcast(&pos)?;
        mode.dropout(&x, self.config.dropout)
    }

    fn residual_norm(&self, x: &Tensor, sub: &Tensor, norm: &str, mode: &mut Mode) -> Result<Tensor> {
        let y = x.add(&mode.dropout(sub, self.config.dropout)?)?;
        y.layer_norm(
            self.params.get(&format!("{norm}.gain"))?,
            self.params.get(&format!("{norm}.bias"))?,
            LAYER_NORM_EPS,
        )
    }

    /// Encoder states `[B, T_s, d_model]`.
    pub fn encode(&self, src: &TokenGrid, mode: &mut Mode) -> Result<Tensor> {
        let cfg = &self.config;
        let mask = src.key_mask();
        let mut x = self.embed("src_embed", src, mode)?;
        for l in 0..cfg.n_layers {
            if cfg.encoder_kind == EncoderKind::Conv {
                x = conv_sub_block(&x, &self.params, &conv_param_prefix(l), &cfg.conv_windows, Some(&src.lengths))?;
            }
            let p = format!("enc.{l}");
            let (a, _) =
                multi_head_attention(&x, &x, &self.params, &format!("{p}.self_attn"), cfg.n_heads, Some(&mask))?;
            x = self.residual_norm(&x, &a, &format!("{p}.norm1"), mode)?;
            let f = feed_forward(&x, &self.params, &format!("{p}.ffn"))?;
            x = self.residual_norm(&x, &f, &format!("{p}.norm2"), mode)?;
        }
        Ok(x)
    }

    /// Teacher-forced decoder pass over `tgt_in` attending to `memory`.
    pub fn decode(
        &self,
        tgt_in: &TokenGrid,
        memory: &Tensor,
        src: &TokenGrid,
        mode: &mut Mode,
    ) -> Result<DecoderOutput> {
        let cfg = &self.config;
        if memory.shape() != [src.rows, src.cols, cfg.d_model] || tgt_in.rows != src.rows {
            return Err(Error::shape(
                "decode",
                format!("memory {:?}, source {}x{}, target rows {}", memory.shape(), src.rows, src.cols, tgt_in.rows),
            ));
        }
        let self_mask = Mask::causal(tgt_in.cols).and(&tgt_in.key_mask())?;
        let cross_mask = src.key_mask();
        let mut y = self.embed("tgt_embed", tgt_in, mode)?;
        let mut cross_attn = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("dec.{l}");
            let (a, _) =
                multi_head_attention(&y, &y, &self.params, &format!("{p}.self_attn"), cfg.n_heads, Some(&self_mask))?;
            y = self.residual_norm(&y, &a, &format!("{p}.norm1"), mode)?;
            let (c, probs) = multi_head_attention(
                &y,
                memory,
                &self.params,
                &format!("{p}.cross_attn"),
                cfg.n_heads,
                Some(&cross_mask),
            )?;
            cross_attn.push(probs);
            y = self.residual_norm(&y, &c, &format!("{p}.norm2"), mode)?;
            let f = feed_forward(&y, &self.params, &format!("{p}.ffn"))?;
            y = self.residual_norm(&y, &f, &format!("{p}.norm3"), mode)?;
        }
        let logits = linear(&y, &self.params, "out_proj")?;
        Ok(DecoderOutput { logits, cross_attn })
    }

    pub fn forward(&self, batch: &Batch, mode: &mut Mode) -> Result<DecoderOutput> {
        let memory = self.encode(&batch.src, mode)?;
        self.decode(&batch.tgt_in, &memory, &batch.src, mode)
    }

    /// Teacher-forced loss with label smoothing `alpha`.
    pub fn loss(&self, batch: &Batch, alpha: f64, mode: &mut Mode) -> Result<Tensor> {
        let out = self.forward(batch, mode)?;
        out.logits.masked_cross_entropy(&batch.tgt_out, &batch.tgt_mask(), alpha)
    }

    /// Last-layer, head-averaged cross-attention for every row of `batch`,
    /// over `target_len + 1` (EOS included) by `source_len` (EOS included).
    pub fn extract_cross_attention(&self, batch: &Batch) -> Result<Vec<AttentionMap>> {
        let out = no_grad(|| self.forward(batch, &mut Mode::Eval))?;
        let last = self.config.n_layers - 1;
        let probs = &out.cross_attn[last];
        (0..batch.size())
            .map(|b| {
                AttentionMap::from_probs(
                    probs,
                    b,
                    last,
                    HeadSelection::Mean,
                    batch.tgt_in.lengths[b],
                    batch.src.lengths[b],
                )
            })
            .collect()
    }
}
