use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Progress};
use super::log::{EpochSummary, LogRow, TrainLog};
use super::optim::{adam_step, clip_grad_norm, lr_at_step, AdamConfig, OptimizerState};
use crate::data::{make_batches, Batch, ParallelCorpus, Vocabulary};
use crate::decode::{corpus_bleu, greedy_decode_batch, BleuOptions, DecodeConfig};
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::tensor::no_grad;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Upper bound on `rows * padded_length` per batch.
    pub max_tokens: usize,
    pub warmup: u64,
    pub seed: u64,
    pub label_smoothing: f64,
    /// Multiplier on the warmup/inverse-sqrt schedule.
    pub lr_scale: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub adam: AdamConfig,
    /// Validation sentences decoded per greedy batch.
    pub eval_batch: usize,
    /// Record wall-clock seconds in the log (makes logs run-dependent).
    pub log_seconds: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            max_tokens: 2048,
            warmup: 400,
            seed: 1,
            label_smoothing: 0.1,
            lr_scale: 1.0,
            clip_norm: 1.0,
            adam: AdamConfig::default(),
            eval_batch: 64,
            log_seconds: false,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_tokens == 0 {
            out.push("train.max_tokens must be positive".into());
        }
        if self.warmup == 0 {
            out.push("train.warmup must be positive".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            out.push(format!("train.label_smoothing ({}) must lie in [0, 1)", self.label_smoothing));
        }
        if self.lr_scale.is_nan() || self.lr_scale <= 0.0 {
            out.push(format!("train.lr_scale ({}) must be positive", self.lr_scale));
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            out.push(format!("train.clip_norm ({}) must be non-negative", self.clip_norm));
        }
        if self.eval_batch == 0 {
            out.push("train.eval_batch must be positive".into());
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// Mean token negative log-likelihood without smoothing.
    pub loss: f64,
    pub bleu: f64,
}

/// Dropout stream for optimization step `step`; depends only on the seed and
/// the step, so a resumed run draws the same masks.
fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add((epoch as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Teacher-forced validation loss over `corpus`.
pub fn validation_loss(model: &Model, vocab: &Vocabulary, corpus: &ParallelCorpus, max_tokens: usize) -> Result<f64> {
    let batches = make_batches(corpus, vocab, max_tokens, 0)?;
    no_grad(|| {
        let (mut total, mut count) = (0.0, 0usize);
        for b in &batches {
            let loss = model.loss(b, 0.0, &mut Mode::Eval)?.item()?;
            let n = b.target_tokens();
            total += loss * n as f64;
            count += n;
        }
        if count == 0 {
            return Err(Error::Invalid("empty validation corpus".into()));
        }
        Ok(total / count as f64)
    })
}

/// Greedy translations of every source side in `corpus`.
pub fn greedy_translations(
    model: &Model,
    vocab: &Vocabulary,
    corpus: &ParallelCorpus,
    chunk: usize,
) -> Result<Vec<String>> {
    let mut hyps = Vec::with_capacity(corpus.len());
    for part in corpus.pairs().chunks(chunk.max(1)) {
        let srcs: Vec<&str> = part.iter().map(|(s, _)| s.as_str()).collect();
        hyps.extend(greedy_decode_batch(model, vocab, &srcs, &DecodeConfig::default())?.into_iter().map(|h| h.text));
    }
    Ok(hyps)
}

/// Greedy-decoding BLEU and teacher-forced loss.
pub fn evaluate(
    model: &Model,
    vocab: &Vocabulary,
    corpus: &ParallelCorpus,
    max_tokens: usize,
    chunk: usize,
) -> Result<Evaluation> {
    let loss = validation_loss(model, vocab, corpus, max_tokens)?;
    let hyps = greedy_translations(model, vocab, corpus, chunk)?;
    let refs: Vec<&str> = corpus.pairs().iter().map(|(_, t)| t.as_str()).collect();
    let bleu = corpus_bleu(&hyps, &refs, BleuOptions::default())?;
    Ok(Evaluation { loss, bleu })
}

/// Owns a model, its optimizer state and the run log.
pub struct Trainer {
    model: Model,
    vocab: Vocabulary,
    cfg: TrainConfig,
    state: OptimizerState,
    progress: Progress,
    log: TrainLog,
    started: Instant,
}

impl Trainer {
    pub fn new(model: Model, vocab: Vocabulary, cfg: TrainConfig) -> Result<Self> {
        let p = cfg.problems();
        if !p.is_empty() {
            return Err(Error::Config(p.join("; ")));
        }
        if vocab.len() != model.config().vocab_size {
            return Err(Error::Invalid(format!(
                "vocabulary has {} entries but the model expects {}",
                vocab.len(),
                model.config().vocab_size
            )));
        }
        let state = OptimizerState::new(model.params(), cfg.adam);
        Ok(Trainer {
            model,
            vocab,
            cfg,
            state,
            progress: Progress::default(),
            log: TrainLog::default(),
            started: Instant::now(),
        })
    }

    /// Continues from a checkpoint that carries optimizer state.
    pub fn resume(ckpt: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let Checkpoint { config, vocab, params, optimizer, progress } = ckpt;
        let state = optimizer.ok_or_else(|| Error::Checkpoint("no optimizer state to resume from".into()))?;
        let model = Model::new(config, params)?;
        let mut t = Self::new(model, vocab, cfg)?;
        t.state = state;
        t.progress = progress;
        Ok(t)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.state
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn step(&self) -> u64 {
        self.state.step
    }

    /// One optimization step on `batch`; returns the training loss.
    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        let step = self.state.step + 1;
        let params = self.model.params();
        params.zero_grad();
        let mut rng = step_rng(self.cfg.seed, step);
        let loss = self.model.loss(batch, self.cfg.label_smoothing, &mut Mode::Train(&mut rng))?;
        let value = loss.item()?;
        loss.backward()?;
        if self.cfg.clip_norm > 0.0 {
            clip_grad_norm(params, self.cfg.clip_norm);
        }
        let lr = self.cfg.lr_scale * lr_at_step(step, self.model.config().d_model, self.cfg.warmup);
        adam_step(params, &mut self.state, lr)?;
        params.zero_grad();
        Ok(value)
    }

    fn epoch_batches(&self, corpus: &ParallelCorpus) -> Result<Vec<Batch>> {
        if corpus.is_empty() {
            return Err(Error::Invalid("empty training corpus".into()));
        }
        make_batches(corpus, &self.vocab, self.cfg.max_tokens, epoch_seed(self.cfg.seed, self.progress.epoch))
    }

    /// Runs up to `limit` steps of the current epoch (all remaining when
    /// `None`). Returns the losses of the steps taken.
    pub fn run_steps(&mut self, corpus: &ParallelCorpus, limit: Option<usize>) -> Result<Vec<f64>> {
        let batches = self.epoch_batches(corpus)?;
        let start = self.progress.batch_in_epoch.min(batches.len());
        let end = limit.map_or(batches.len(), |n| (start + n).min(batches.len()));
        let mut losses = Vec::with_capacity(end - start);
        for b in &batches[start..end] {
            let loss = self.train_step(b)?;
            self.progress.batch_in_epoch += 1;
            let seconds = self.cfg.log_seconds.then(|| self.started.elapsed().as_secs_f64());
            self.log.push_step(LogRow {
                step: self.state.step,
                epoch: self.progress.epoch,
                loss,
                val_loss: None,
                val_bleu: None,
                seconds,
            })?;
            losses.push(loss);
        }
        Ok(losses)
    }

    /// Finishes the current epoch, validates on `val` when given, and moves
    /// to the next epoch.
    pub fn run_epoch(&mut self, corpus: &ParallelCorpus, val: Option<&ParallelCorpus>) -> Result<EpochSummary> {
        let epoch = self.progress.epoch;
        let losses = self.run_steps(corpus, None)?;
        let steps = self.log.rows().iter().filter(|r| r.epoch == epoch).count();
        let train_loss = {
            let rows: Vec<f64> = self.log.rows().iter().filter(|r| r.epoch == epoch).map(|r| r.loss).collect();
            if rows.is_empty() {
                losses.iter().sum::<f64>() / losses.len().max(1) as f64
            } else {
                rows.iter().sum::<f64>() / rows.len() as f64
            }
        };
        let eval = match val {
            Some(v) => Some(evaluate(&self.model, &self.vocab, v, self.cfg.max_tokens, self.cfg.eval_batch)?),
            None => None,
        };
        let summary =
            EpochSummary { epoch, steps, train_loss, val_loss: eval.map(|e| e.loss), val_bleu: eval.map(|e| e.bleu) };
        self.log.close_epoch(summary.clone());
        self.progress = Progress { epoch: epoch + 1, batch_in_epoch: 0 };
        Ok(summary)
    }

    /// Trains until `epochs` epochs are complete, calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        corpus: &ParallelCorpus,
        val: Option<&ParallelCorpus>,
        epochs: usize,
        mut on_epoch: impl FnMut(&Trainer, &EpochSummary) -> Result<()>,
    ) -> Result<()> {
        while self.progress.epoch < epochs {
            let summary = self.run_epoch(corpus, val)?;
            on_epoch(self, &summary)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::copy_corpus;
    use crate::model::{EncoderKind, ModelConfig};

    fn setup(seed: u64) -> (Trainer, ParallelCorpus) {
        let corpus = copy_corpus(40, 3, 6, 9).unwrap();
        let vocab = Vocabulary::build(std::slice::from_ref(&corpus), 1).unwrap();
        let cfg = ModelConfig { n_layers: 1, dropout: 0.1, ..ModelConfig::tiny(EncoderKind::Conv, vocab.len()) };
        let model = Model::init(cfg, seed).unwrap();
        let tc = TrainConfig { max_tokens: 64, warmup: 10, seed, ..TrainConfig::default() };
        (Trainer::new(model, vocab, tc).unwrap(), corpus)
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let (mut t, c) = setup(1);
        let before = t.model().params().deep_clone().unwrap();
        t.fit(&c, None, 0, |_, _| Ok(())).unwrap();
        assert!(t.log().is_empty());
        for (k, v) in before.iter() {
            assert_eq!(*t.model().params().get(k).unwrap().data(), *v.data());
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let (mut t, c) = setup(4);
            t.fit(&c, None, 2, |_, _| Ok(())).unwrap();
            t.log().rows().iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>()
        };
        let a = run();
        assert!(!a.is_empty());
        assert_eq!(a, run());
    }
}
