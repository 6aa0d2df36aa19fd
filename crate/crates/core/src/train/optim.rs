use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterSet;

/// `d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn lr_at_step(step: u64, d_model: usize, warmup: u64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub adam: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet, adam: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(k, t)| (k.clone(), vec![0.0; t.numel()])).collect();
        OptimizerState { adam, step: 0, m: zeros(), v: zeros() }
    }

    fn check_matches(&self, params: &ParameterSet) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::Invalid("optimizer state does not match the parameter set".into()));
        }
        for (k, t) in params.iter() {
            let (m, v) = (self.m.get(k), self.v.get(k));
            if m.map(Vec::len) != Some(t.numel()) || v.map(Vec::len) != Some(t.numel()) {
                return Err(Error::Invalid(format!("optimizer moments for {k} do not match its shape")));
            }
        }
        Ok(())
    }
}

/// Bias-corrected Adam update of every parameter from its accumulated
/// gradient (missing gradients count as zero). Nothing is modified when any
/// gradient is non-finite.
pub fn adam_step(params: &ParameterSet, state: &mut OptimizerState, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Invalid(format!("learning rate must be positive, got {lr}")));
    }
    state.check_matches(params)?;
    for (k, t) in params.iter() {
        if let Some(g) = t.grad() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { op: format!("gradient of {k}") });
            }
        }
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.adam;
    let c1 = 1.0 - beta1.powf(state.step as f64);
    let c2 = 1.0 - beta2.powf(state.step as f64);
    for (k, t) in params.iter() {
        let g = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
        let m = state.m.get_mut(k).expect("checked");
        let v = state.v.get_mut(k).expect("checked");
        let mut x = t.data_mut();
        for i in 0..g.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            x[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Global L2 norm of all gradients before clipping; rescales them to at
/// most `max_norm`.
pub fn clip_grad_norm(params: &ParameterSet, max_norm: f64) -> f64 {
    let sq: f64 = params.iter().filter_map(|(_, t)| t.grad()).map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, t) in params.iter() {
            if let Some(g) = t.grad() {
                t.set_grad(Some(g.into_iter().map(|x| x * s).collect()));
            }
        }
    }
    norm
}
