//! JSON run configuration with strict key checking.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use convtransformer::align::{DEFAULT_GRID, DEFAULT_K, DEFAULT_REG};
use convtransformer::decode::DecodeConfig;
use convtransformer::model::ModelConfig;
use convtransformer::train::{DType, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Two aligned text files and a bookkeeping language tag.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusFiles {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub lang: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Training corpora; several are mixed and shuffled without language tags.
    pub train: Vec<CorpusFiles>,
    pub valid: Vec<CorpusFiles>,
    /// Transliteration table applied to every side of every corpus.
    pub translit: Option<PathBuf>,
    /// Existing vocabulary file; built from the training data when absent.
    pub vocab: Option<PathBuf>,
    pub min_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { train: Vec::new(), valid: Vec::new(), translit: None, vocab: None, min_count: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    pub n: usize,
    pub grid: usize,
    pub k: usize,
    pub reg: f64,
    pub seed: u64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig { n: 500, grid: DEFAULT_GRID, k: DEFAULT_K, reg: DEFAULT_REG, seed: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: DecodeConfig,
    pub analyze: AnalyzeConfig,
    pub checkpoint_dtype: DType,
}

/// Dotted paths of keys in `value` that `template` does not have. Arrays
/// are checked element-wise against the template's first element.
fn unknown_keys(value: &Value, template: &Value, path: &str, out: &mut Vec<String>) {
    match (value, template) {
        (Value::Object(v), Value::Object(t)) => {
            for (k, child) in v {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match t.get(k) {
                    Some(tc) => unknown_keys(child, tc, &p, out),
                    None => out.push(p),
                }
            }
        }
        (Value::Array(v), Value::Array(t)) => {
            if let Some(tc) = t.first() {
                for (i, child) in v.iter().enumerate() {
                    unknown_keys(child, tc, &format!("{path}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

impl RunConfig {
    fn template() -> Value {
        let mut t = RunConfig::default();
        t.data.train.push(CorpusFiles::default());
        t.data.valid.push(CorpusFiles::default());
        serde_json::to_value(t).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        let mut unknown = Vec::new();
        unknown_keys(&value, &Self::template(), "", &mut unknown);
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        let cfg: RunConfig = serde_json::from_value(value).context("invalid config value")?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Every value-level problem. `vocab_size` may still be 0 here; it is
    /// filled from the vocabulary.
    pub fn problems(&self) -> Vec<String> {
        let mut out: Vec<String> =
            self.model.problems().into_iter().filter(|p| !p.starts_with("model.vocab_size")).collect();
        out.extend(self.train.problems());
        out.extend(self.eval.problems());
        if self.data.min_count == 0 {
            out.push("data.min_count must be at least 1".into());
        }
        if self.analyze.n == 0 || self.analyze.grid == 0 || self.analyze.k == 0 {
            out.push("analyze.n, analyze.grid and analyze.k must be positive".into());
        }
        if self.analyze.reg.is_nan() || self.analyze.reg <= 0.0 {
            out.push(format!("analyze.reg ({}) must be positive", self.analyze.reg));
        }
        out
    }

    pub fn validate_for_training(&self) -> Result<()> {
        let mut p = self.problems();
        if self.data.train.is_empty() {
            p.push("data.train must list at least one corpus".into());
        }
        if !p.is_empty() {
            bail!("invalid config: {}", p.join("; "));
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
