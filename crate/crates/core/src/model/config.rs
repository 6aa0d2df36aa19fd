use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Plain transformer encoder layers.
    Standard,
    /// Each encoder layer starts with the residual convolution sub-block.
    Conv,
}

/// Architecture hyperparameters shared by encoder and decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder_kind: EncoderKind,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Widths of the parallel convolutions in the conv sub-block.
    pub conv_windows: Vec<usize>,
    /// Width of the convolution fusing the concatenated branch outputs.
    pub fuse_window: usize,
    pub dropout: f64,
    /// Longest sequence (in tokens, including BOS/EOS) the positional table covers.
    pub max_len: usize,
    /// Filled from the vocabulary when left at 0 in a run config.
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_kind: EncoderKind::Conv,
            n_layers: 6,
            n_heads: 8,
            d_model: 512,
            d_ff: 2048,
            conv_windows: vec![3, 5, 7],
            fuse_window: 3,
            dropout: 0.1,
            max_len: 512,
            vocab_size: 0,
        }
    }
}

impl ModelConfig {
    /// A small configuration for tests and toy runs.
    pub fn tiny(kind: EncoderKind, vocab_size: usize) -> Self {
        ModelConfig {
            encoder_kind: kind,
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_ff: 32,
            dropout: 0.0,
            max_len: 64,
            vocab_size,
            ..ModelConfig::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                out.push(format!("model.{name} must be positive"));
            }
        }
        if self.n_heads > 0 && !self.d_model.is_multiple_of(self.n_heads) {
            out.push(format!("model.d_model ({}) must be divisible by model.n_heads ({})", self.d_model, self.n_heads));
        }
        if !self.d_model.is_multiple_of(2) {
            out.push(format!("model.d_model ({}) must be even for sinusoidal positions", self.d_model));
        }
        if self.conv_windows.is_empty() {
            out.push("model.conv_windows must not be empty".into());
        }
        for &w in &self.conv_windows {
            if w % 2 == 0 {
                out.push(format!("model.conv_windows entry {w} must be odd"));
            }
        }
        if self.fuse_window.is_multiple_of(2) {
            out.push(format!("model.fuse_window ({}) must be odd", self.fuse_window));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            out.push(format!("model.dropout ({}) must lie in [0, 1)", self.dropout));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}
