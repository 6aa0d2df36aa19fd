//! Binary checkpoint format.
//!
//! Layout: magic `CXF1`, one version byte, a `u32` little-endian header
//! length and a UTF-8 JSON header (model config, vocabulary, progress,
//! optimizer hyperparameters), then tensor records in sorted name order:
//! parameters first, then Adam first and second moments when present. A
//! record is `u32` name length, name bytes, dtype tag (`0` = f64, `1` =
//! f32), `u32` rank, `u64` extents and the little-endian row-major payload.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{AdamConfig, OptimizerState};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ParameterSet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CXF1";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[default]
    F64,
    F32,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F64 => 0,
            DType::F32 => 1,
        }
    }
}

/// Position of a run: completed epochs and batches done in the current one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub epoch: usize,
    pub batch_in_epoch: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    vocab: String,
    step: u64,
    progress: Progress,
    adam: Option<AdamConfig>,
    dtype: DType,
    tensors: usize,
}

/// Everything needed to run or resume a model.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParameterSet,
    pub optimizer: Option<OptimizerState>,
    pub progress: Progress,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<(Model, Vocabulary)> {
        Ok((Model::new(self.config, self.params)?, self.vocab))
    }

    /// Rejects a checkpoint whose architecture differs from `expected`.
    pub fn check_compatible(&self, expected: &ModelConfig) -> Result<()> {
        if self.config.d_model != expected.d_model {
            return Err(Error::Checkpoint(format!(
                "d_model mismatch: checkpoint has {}, config asks for {}",
                self.config.d_model, expected.d_model
            )));
        }
        if self.config != *expected {
            return Err(Error::Checkpoint("model config differs from the checkpoint".into()));
        }
        Ok(())
    }
}

fn write_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64], dtype: DType) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dtype.tag());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        DType::F64 => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F32 => data.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
}

/// Serializes to bytes; see the module docs for the layout.
pub fn encode_checkpoint(
    model: &Model,
    vocab: &Vocabulary,
    optimizer: Option<&OptimizerState>,
    progress: Progress,
    dtype: DType,
) -> Result<Vec<u8>> {
    let params = model.params();
    let mut tensors = params.len();
    if optimizer.is_some() {
        tensors *= 3;
    }
    let header = Header {
        model: model.config().clone(),
        vocab: vocab.chars().iter().collect(),
        step: optimizer.map_or(0, |o| o.step),
        progress,
        adam: optimizer.map(|o| o.adam),
        dtype,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in params.iter() {
        write_record(&mut out, name, t.shape(), &t.data(), dtype);
    }
    if let Some(o) = optimizer {
        for (name, t) in params.iter() {
            write_record(&mut out, name, t.shape(), &o.m[name], dtype);
        }
        for (name, t) in params.iter() {
            write_record(&mut out, name, t.shape(), &o.v[name], dtype);
        }
    }
    Ok(out)
}

/// Writes through a temporary file and a rename, so an interrupted save
/// leaves any previous checkpoint intact.
pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    vocab: &Vocabulary,
    optimizer: Option<&OptimizerState>,
    progress: Progress,
    dtype: DType,
) -> Result<()> {
    let bytes = encode_checkpoint(model, vocab, optimizer, progress, dtype)?;
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated file at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn record(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let tag = self.u8()?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("{name}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count.ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
        let data = match tag {
            0 => self
                .take(count.saturating_mul(8))?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            1 => self
                .take(count.saturating_mul(4))?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            t => return Err(Error::Checkpoint(format!("{name}: unknown dtype tag {t}"))),
        };
        Ok((name, shape, data))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(Error::NotCheckpoint("missing CXF1 magic".into()));
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)?;
    let vocab = Vocabulary::from_chars(header.vocab.chars().collect())?;
    if header.model.vocab_size != vocab.len() {
        return Err(Error::Checkpoint(format!(
            "config vocab_size {} but stored vocabulary has {}",
            header.model.vocab_size,
            vocab.len()
        )));
    }
    let mut records = Vec::with_capacity(header.tensors);
    for _ in 0..header.tensors {
        records.push(r.record()?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let has_opt = header.adam.is_some();
    let per = if has_opt { header.tensors / 3 } else { header.tensors };
    if per * if has_opt { 3 } else { 1 } != header.tensors {
        return Err(Error::Checkpoint("tensor count does not split into parameters and moments".into()));
    }
    let mut rest = records.into_iter();
    let mut params = BTreeMap::new();
    for (name, shape, data) in rest.by_ref().take(per) {
        let t = Tensor::param(&shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        params.insert(name, t);
    }
    let params = ParameterSet::from_map(params);
    // Validates names and shapes (including d_model) against the stored config.
    let model = Model::new(header.model.clone(), params)?;
    let optimizer = match header.adam {
        None => None,
        Some(adam) => {
            let mut moments = [BTreeMap::new(), BTreeMap::new()];
            for slot in &mut moments {
                for (name, shape, data) in rest.by_ref().take(per) {
                    let t = model.params().get(&name).map_err(|_| Error::Checkpoint(format!("stray moment {name}")))?;
                    if t.shape() != shape.as_slice() {
                        return Err(Error::Checkpoint(format!("moment {name} has shape {shape:?}")));
                    }
                    slot.insert(name, data);
                }
            }
            let [m, v] = moments;
            Some(OptimizerState { adam, step: header.step, m, v })
        }
    };
    let config = model.config().clone();
    let params = model.params().clone();
    Ok(Checkpoint { config, vocab, params, optimizer, progress: header.progress })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderKind;

    fn setup() -> (Model, Vocabulary, OptimizerState) {
        let vocab = Vocabulary::from_chars("xyz".chars().collect()).unwrap();
        let model = Model::init(ModelConfig::tiny(EncoderKind::Conv, vocab.len()), 3).unwrap();
        let mut opt = OptimizerState::new(model.params(), AdamConfig::default());
        opt.step = 17;
        opt.m.values_mut().for_each(|m| m.iter_mut().for_each(|x| *x = 0.25));
        (model, vocab, opt)
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let (model, vocab, opt) = setup();
        let p = Progress { epoch: 2, batch_in_epoch: 5 };
        let bytes = encode_checkpoint(&model, &vocab, Some(&opt), p, DType::F64).unwrap();
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.vocab, vocab);
        assert_eq!(ck.progress, p);
        assert_eq!(ck.optimizer.as_ref(), Some(&opt));
        for (name, t) in model.params().iter() {
            assert_eq!(*ck.params.get(name).unwrap().data(), *t.data());
        }
    }

    #[test]
    fn f32_round_trip_within_precision() {
        let (model, vocab, _) = setup();
        let bytes = encode_checkpoint(&model, &vocab, None, Progress::default(), DType::F32).unwrap();
        let ck = decode_checkpoint(&bytes).unwrap();
        assert!(ck.optimizer.is_none());
        for (name, t) in model.params().iter() {
            for (a, b) in ck.params.get(name).unwrap().data().iter().zip(t.data().iter()) {
                assert!((a - b).abs() <= 1e-7 * b.abs().max(1e-30));
            }
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let (model, vocab, opt) = setup();
        let bytes = encode_checkpoint(&model, &vocab, Some(&opt), Progress::default(), DType::F64).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::NotCheckpoint(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("version"));
        let err = decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn d_model_mismatch_is_reported() {
        let (model, vocab, _) = setup();
        let bytes = encode_checkpoint(&model, &vocab, None, Progress::default(), DType::F64).unwrap();
        let ck = decode_checkpoint(&bytes).unwrap();
        let other = ModelConfig { d_model: 32, ..ck.config.clone() };
        assert!(ck.check_compatible(&other).unwrap_err().to_string().contains("d_model"));
        ck.check_compatible(&ck.config.clone()).unwrap();
    }
}
