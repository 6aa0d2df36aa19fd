//! Greedy and beam decoding, and corpus BLEU.

mod bleu;

pub use bleu::{corpus_bleu, BleuOptions, BleuStats, BleuTokenizer, MAX_ORDER};

use serde::{Deserialize, Serialize};

use crate::data::{encode_source, TokenGrid, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::model::{AttentionMap, HeadSelection, Mode, Model};
use crate::tensor::{no_grad, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Greedy,
    Beam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_size: usize,
    /// Output cap is `max_len_ratio * source_chars + max_len_offset` tokens.
    pub max_len_ratio: f64,
    pub max_len_offset: usize,
    /// Finished beams are ranked by `logP / len^length_penalty`.
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Greedy,
            beam_size: 4,
            max_len_ratio: 3.0,
            max_len_offset: 10,
            length_penalty: 1.0,
        }
    }
}

impl DecodeConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.beam_size == 0 {
            out.push("eval.beam_size must be at least 1".into());
        }
        if self.max_len_ratio.is_nan() || self.max_len_ratio < 0.0 {
            out.push(format!("eval.max_len_ratio ({}) must be non-negative", self.max_len_ratio));
        }
        if self.length_penalty.is_nan() || self.length_penalty < 0.0 {
            out.push(format!("eval.length_penalty ({}) must be non-negative", self.length_penalty));
        }
        out
    }

    /// Most output tokens (EOS included) for a source of `source_chars`
    /// characters, further bounded by the model's position table.
    pub fn output_cap(&self, source_chars: usize, max_len: usize) -> usize {
        let cap = (self.max_len_ratio * source_chars as f64).floor() as usize + self.max_len_offset;
        cap.min(max_len.saturating_sub(1)).max(1)
    }
}

/// Next-token log-probabilities for a set of prefixes that all start with BOS.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>>;
}

/// Row-wise log-softmax of the last time step of `[B, T, V]` logits.
fn last_step_log_probs(logits: &Tensor) -> Vec<Vec<f64>> {
    let [b, t, v] = *logits.shape() else { unreachable!("decoder logits are rank 3") };
    let data = logits.data();
    (0..b)
        .map(|i| {
            let row = &data[(i * t + t - 1) * v..(i * t + t) * v];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.iter().map(|x| x - lse).collect()
        })
        .collect()
}

fn gather_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let width: usize = t.shape()[1..].iter().product();
    let data = t.data();
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&data[r * width..(r + 1) * width]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = rows.len();
    Tensor::new(&shape, out)
}

fn gather_grid(g: &TokenGrid, rows: &[usize]) -> TokenGrid {
    let mut ids = Vec::with_capacity(rows.len() * g.cols);
    for &r in rows {
        ids.extend_from_slice(&g.ids[r * g.cols..(r + 1) * g.cols]);
    }
    TokenGrid { ids, rows: rows.len(), cols: g.cols, lengths: rows.iter().map(|&r| g.lengths[r]).collect() }
}

/// Scores continuations of one encoded source sentence.
pub struct ModelScorer<'a> {
    model: &'a Model,
    src: TokenGrid,
    memory: Tensor,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model, src_ids: Vec<usize>) -> Result<Self> {
        let src = TokenGrid::from_rows(&[src_ids])?;
        let memory = no_grad(|| model.encode(&src, &mut Mode::Eval))?;
        Ok(ModelScorer { model, src, memory })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let rows = vec![0; prefixes.len()];
        let memory = gather_rows(&self.memory, &rows)?;
        let src = gather_grid(&self.src, &rows);
        let tgt = TokenGrid::from_rows(prefixes)?;
        if tgt.lengths.iter().any(|&l| l != tgt.cols) {
            return Err(Error::Invalid("prefixes must share one length".into()));
        }
        let out = no_grad(|| self.model.decode(&tgt, &memory, &src, &mut Mode::Eval))?;
        Ok(last_step_log_probs(&out.logits))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, EOS included when it was produced.
    pub ids: Vec<usize>,
    pub text: String,
    /// Last-layer head-averaged cross-attention, one row per generated id.
    pub attention: AttentionMap,
}

/// Batched greedy decoding: argmax at every step until EOS or the length cap.
pub fn greedy_decode_batch(
    model: &Model,
    vocab: &Vocabulary,
    sources: &[&str],
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>> {
    if sources.is_empty() {
        return Ok(Vec::new());
    }
    let rows: Vec<Vec<usize>> = sources.iter().map(|s| encode_source(vocab, s)).collect();
    let caps: Vec<usize> = sources.iter().map(|s| cfg.output_cap(s.chars().count(), model.config().max_len)).collect();
    let src = TokenGrid::from_rows(&rows)?;
    no_grad(|| {
        let memory = model.encode(&src, &mut Mode::Eval)?;
        let last = model.config().n_layers - 1;
        let mut generated: Vec<Vec<usize>> = vec![Vec::new(); sources.len()];
        let mut done: Vec<Option<AttentionMap>> = vec![None; sources.len()];
        loop {
            let active: Vec<usize> = (0..sources.len()).filter(|&i| done[i].is_none()).collect();
            if active.is_empty() {
                break;
            }
            let prefixes: Vec<Vec<usize>> =
                active.iter().map(|&i| std::iter::once(BOS).chain(generated[i].iter().copied()).collect()).collect();
            let tgt = TokenGrid::from_rows(&prefixes)?;
            let sub_src = gather_grid(&src, &active);
            let sub_mem = gather_rows(&memory, &active)?;
            let out = model.decode(&tgt, &sub_mem, &sub_src, &mut Mode::Eval)?;
            let lps = last_step_log_probs(&out.logits);
            for (a, &i) in active.iter().enumerate() {
                let next = argmax(&lps[a]);
                generated[i].push(next);
                if next == EOS || generated[i].len() >= caps[i] {
                    let map = AttentionMap::from_probs(
                        &out.cross_attn[last],
                        a,
                        last,
                        HeadSelection::Mean,
                        tgt.cols,
                        src.lengths[i],
                    )?;
                    done[i] = Some(map);
                }
            }
        }
        Ok(generated
            .into_iter()
            .zip(done)
            .map(|(ids, map)| Hypothesis { text: vocab.decode(&ids), ids, attention: map.expect("every row finished") })
            .collect())
    })
}

pub fn greedy_decode(model: &Model, vocab: &Vocabulary, source: &str, cfg: &DecodeConfig) -> Result<Hypothesis> {
    Ok(greedy_decode_batch(model, vocab, &[source], cfg)?.remove(0))
}

/// Beam search over any scorer. Returns generated ids (EOS included when
/// produced) of the best finished hypothesis under length normalization.
pub fn beam_search(
    scorer: &mut dyn StepScorer,
    beam_size: usize,
    cap: usize,
    length_penalty: f64,
) -> Result<Vec<usize>> {
    if beam_size == 0 {
        return Err(Error::Invalid("beam size must be at least 1".into()));
    }
    let norm = |ids: &[usize], lp: f64| lp / (ids.len() as f64).powf(length_penalty);
    let mut live: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    for step in 0..cap {
        let prefixes: Vec<Vec<usize>> =
            live.iter().map(|(ids, _)| std::iter::once(BOS).chain(ids.iter().copied()).collect()).collect();
        let lps = scorer.log_probs(&prefixes)?;
        let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(live.len() * scorer.vocab_size());
        for (b, row) in lps.iter().enumerate() {
            for (tok, &lp) in row.iter().enumerate() {
                cands.push((live[b].1 + lp, b, tok));
            }
        }
        cands.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut next = Vec::with_capacity(beam_size);
        for &(score, b, tok) in cands.iter().take(beam_size) {
            let mut ids = live[b].0.clone();
            ids.push(tok);
            if tok == EOS || step + 1 == cap {
                finished.push((ids, score));
            } else {
                next.push((ids, score));
            }
        }
        live = next;
        if live.is_empty() || finished.len() >= beam_size {
            break;
        }
        if length_penalty == 0.0 {
            let best_done = finished.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
            let best_live = live.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
            if best_done >= best_live {
                break;
            }
        }
    }
    finished.extend(live);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for (ids, lp) in finished {
        let s = norm(&ids, lp);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((ids, s));
        }
    }
    Ok(best.map(|(ids, _)| ids).unwrap_or_default())
}

pub fn beam_decode(model: &Model, vocab: &Vocabulary, source: &str, cfg: &DecodeConfig) -> Result<String> {
    let mut scorer = ModelScorer::new(model, encode_source(vocab, source))?;
    let cap = cfg.output_cap(source.chars().count(), model.config().max_len);
    let ids = beam_search(&mut scorer, cfg.beam_size, cap, cfg.length_penalty)?;
    Ok(vocab.decode(&ids))
}

/// Decodes every source with the configured strategy.
pub fn translate_all(model: &Model, vocab: &Vocabulary, sources: &[&str], cfg: &DecodeConfig) -> Result<Vec<String>> {
    match cfg.strategy {
        Strategy::Greedy => Ok(greedy_decode_batch(model, vocab, sources, cfg)?.into_iter().map(|h| h.text).collect()),
        Strategy::Beam => sources.iter().map(|s| beam_decode(model, vocab, s, cfg)).collect(),
    }
}
