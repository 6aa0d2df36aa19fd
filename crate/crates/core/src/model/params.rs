use std::collections::BTreeMap;

use super::config::{EncoderKind, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{init_param, InitScheme, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamInit {
    Uniform,
    Zeros,
    Ones,
}

/// Name, shape and initializer of one trainable tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: ParamInit,
}

impl ParamSpec {
    fn new(name: String, shape: Vec<usize>, init: ParamInit) -> Self {
        ParamSpec { name, shape, init }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn linear(out: &mut Vec<ParamSpec>, prefix: &str, d_in: usize, d_out: usize) {
    out.push(ParamSpec::new(format!("{prefix}.weight"), vec![d_in, d_out], ParamInit::Uniform));
    out.push(ParamSpec::new(format!("{prefix}.bias"), vec![d_out], ParamInit::Zeros));
}

fn conv(out: &mut Vec<ParamSpec>, prefix: &str, w: usize, d_in: usize, d_out: usize) {
    out.push(ParamSpec::new(format!("{prefix}.weight"), vec![w, d_in, d_out], ParamInit::Uniform));
    out.push(ParamSpec::new(format!("{prefix}.bias"), vec![d_out], ParamInit::Zeros));
}

fn norm(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    out.push(ParamSpec::new(format!("{prefix}.gain"), vec![d], ParamInit::Ones));
    out.push(ParamSpec::new(format!("{prefix}.bias"), vec![d], ParamInit::Zeros));
}

fn attention(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    for proj in ["q_proj", "k_proj", "v_proj", "out_proj"] {
        linear(out, &format!("{prefix}.{proj}"), d, d);
    }
}

fn ffn(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, d_ff: usize) {
    linear(out, &format!("{prefix}.in"), d, d_ff);
    linear(out, &format!("{prefix}.out"), d_ff, d);
}

/// Parameter names of the convolution sub-block of encoder layer `layer`.
pub fn conv_param_prefix(layer: usize) -> String {
    format!("enc.{layer}.conv")
}

/// Every trainable tensor the architecture needs, in construction order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (d, v) = (cfg.d_model, cfg.vocab_size);
    let mut out = Vec::new();
    out.push(ParamSpec::new("src_embed".into(), vec![v, d], ParamInit::Uniform));
    out.push(ParamSpec::new("tgt_embed".into(), vec![v, d], ParamInit::Uniform));
    for l in 0..cfg.n_layers {
        if cfg.encoder_kind == EncoderKind::Conv {
            let p = conv_param_prefix(l);
            for &w in &cfg.conv_windows {
                conv(&mut out, &format!("{p}.c{w}"), w, d, d);
            }
            conv(&mut out, &format!("{p}.fuse"), cfg.fuse_window, cfg.conv_windows.len() * d, d);
        }
        attention(&mut out, &format!("enc.{l}.self_attn"), d);
        norm(&mut out, &format!("enc.{l}.norm1"), d);
        ffn(&mut out, &format!("enc.{l}.ffn"), d, cfg.d_ff);
        norm(&mut out, &format!("enc.{l}.norm2"), d);
    }
    for l in 0..cfg.n_layers {
        attention(&mut out, &format!("dec.{l}.self_attn"), d);
        norm(&mut out, &format!("dec.{l}.norm1"), d);
        attention(&mut out, &format!("dec.{l}.cross_attn"), d);
        norm(&mut out, &format!("dec.{l}.norm2"), d);
        ffn(&mut out, &format!("dec.{l}.ffn"), d, cfg.d_ff);
        norm(&mut out, &format!("dec.{l}.norm3"), d);
    }
    linear(&mut out, "out_proj", d, v);
    out
}

/// Stable 64-bit FNV-1a, so per-parameter seeds do not depend on layout order.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Named trainable tensors; iteration is in sorted name order.
#[derive(Clone, Debug, Default)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    /// Fresh parameters for `cfg`. Each tensor's draw depends only on `seed`
    /// and its own name, so two architectures share every common tensor.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = BTreeMap::new();
        for spec in param_layout(cfg) {
            let t = match spec.init {
                ParamInit::Uniform => init_param(&spec.shape, InitScheme::UniformScaled, seed ^ name_hash(&spec.name))?,
                ParamInit::Zeros => init_param(&spec.shape, InitScheme::Zeros, 0)?,
                ParamInit::Ones => Tensor::param(&spec.shape, vec![1.0; spec.numel()])?,
            };
            if tensors.insert(spec.name.clone(), t).is_some() {
                return Err(Error::Invalid(format!("duplicate parameter name {}", spec.name)));
            }
        }
        Ok(ParameterSet { tensors })
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        ParameterSet { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn entries(&self) -> Vec<(String, Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn zero_grad(&self) {
        self.tensors.values().for_each(Tensor::zero_grad);
    }

    /// Independent copy of every tensor (no shared storage).
    pub fn deep_clone(&self) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for (k, v) in &self.tensors {
            tensors.insert(k.clone(), Tensor::param(v.shape(), v.to_vec())?);
        }
        Ok(ParameterSet { tensors })
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn copy_from(&self, other: &ParameterSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Invalid("parameter sets differ in size".into()));
        }
        for (k, v) in &self.tensors {
            let src = other.get(k)?;
            if src.shape() != v.shape() {
                return Err(Error::shape("copy_from", format!("{k}: {:?} vs {:?}", v.shape(), src.shape())));
            }
            v.data_mut().copy_from_slice(&src.data());
        }
        Ok(())
    }

    /// Sets every tensor whose name starts with `prefix` to zero.
    pub fn zero_prefix(&self, prefix: &str) -> usize {
        let mut n = 0;
        for (k, v) in &self.tensors {
            if k.starts_with(prefix) {
                v.data_mut().iter_mut().for_each(|x| *x = 0.0);
                n += 1;
            }
        }
        n
    }
}
