use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use convtransformer::align::{alignment_report, collect_alignments, dump_alignments, reports_csv, write_matrix};
use convtransformer::data::{mix_corpora, toy, Batch, ParallelCorpus, Side, TransliterationTable, Vocabulary};
use convtransformer::decode::{corpus_bleu, translate_all, BleuOptions, BleuTokenizer, DecodeConfig, Strategy};
use convtransformer::model::Model;
use convtransformer::train::{load_checkpoint, save_checkpoint, Checkpoint, EpochSummary, Trainer};
use unicode_normalization::UnicodeNormalization;

use crate::config::{AnalyzeConfig, CorpusFiles, RunConfig};

const LATEST: &str = "checkpoint_latest.cxf";
const BEST: &str = "checkpoint_best.cxf";
const LOG: &str = "train_log.csv";

/// Lines of a UTF-8 file, NFC-normalized. Empty lines are kept.
fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let body = text.strip_suffix('\n').unwrap_or(&text);
    if text.is_empty() {
        return Ok(Vec::new());
    }
    Ok(body.split('\n').map(|l| l.nfc().collect()).collect())
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut s = String::new();
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn load_table(path: Option<&Path>) -> Result<Option<TransliterationTable>> {
    path.map(|p| TransliterationTable::load(p).with_context(|| format!("loading {}", p.display()))).transpose()
}

fn load_corpus(files: &CorpusFiles, table: Option<&TransliterationTable>) -> Result<ParallelCorpus> {
    let c = ParallelCorpus::load(&files.src, &files.tgt, &files.lang)
        .with_context(|| format!("loading corpus {} / {}", files.src.display(), files.tgt.display()))?;
    Ok(match table {
        Some(t) => c.transliterate(t, Side::Source).transliterate(t, Side::Target),
        None => c,
    })
}

pub fn build_vocab(
    src: &[PathBuf],
    tgt: &[PathBuf],
    out: &Path,
    translit: Option<&Path>,
    min_count: usize,
) -> Result<()> {
    ensure!(src.len() == tgt.len(), "{} --src files but {} --tgt files", src.len(), tgt.len());
    let table = load_table(translit)?;
    let corpora = src
        .iter()
        .zip(tgt)
        .map(|(s, t)| load_corpus(&CorpusFiles { src: s.clone(), tgt: t.clone(), lang: String::new() }, table.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::build(&corpora, min_count)?;
    vocab.save(out)?;
    println!("vocab size {}", vocab.len());
    Ok(())
}

fn print_epoch(s: &EpochSummary) {
    let val = match (s.val_loss, s.val_bleu) {
        (Some(l), Some(b)) => format!(" val_loss {l:.4} val_bleu {b:.2}"),
        _ => String::new(),
    };
    eprintln!("epoch {} steps {} train_loss {:.4}{val}", s.epoch, s.steps, s.train_loss);
}

pub fn train(config: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    cfg.validate_for_training()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let table = load_table(cfg.data.translit.as_deref())?;
    let train_sets = cfg.data.train.iter().map(|f| load_corpus(f, table.as_ref())).collect::<Result<Vec<_>>>()?;
    let valid_sets = cfg.data.valid.iter().map(|f| load_corpus(f, table.as_ref())).collect::<Result<Vec<_>>>()?;

    let resumed = resume.map(load_checkpoint).transpose()?;
    let vocab = match (&resumed, &cfg.data.vocab) {
        (Some(ck), _) => ck.vocab.clone(),
        (None, Some(path)) => Vocabulary::load(path)?,
        (None, None) => {
            let v = Vocabulary::build(&train_sets, cfg.data.min_count)?;
            v.save(&out.join("vocab.txt"))?;
            v
        }
    };
    if cfg.model.vocab_size == 0 {
        cfg.model.vocab_size = vocab.len();
    }
    ensure!(
        cfg.model.vocab_size == vocab.len(),
        "model.vocab_size is {} but the vocabulary has {} entries",
        cfg.model.vocab_size,
        vocab.len()
    );
    cfg.model.validate()?;
    std::fs::write(out.join("config.json"), cfg.to_pretty_json() + "\n").context("writing config.json")?;

    let train_corpus = mix_corpora(&train_sets, cfg.train.seed)?;
    let valid = if valid_sets.is_empty() {
        None
    } else {
        let pairs = valid_sets.iter().flat_map(|c| c.pairs().iter().cloned()).collect();
        Some(ParallelCorpus::new(pairs, "valid")?)
    };

    let mut trainer = match resumed {
        Some(ck) => {
            ck.check_compatible(&cfg.model)?;
            Trainer::resume(ck, cfg.train.clone())?
        }
        None => Trainer::new(Model::init(cfg.model.clone(), cfg.train.seed)?, vocab, cfg.train.clone())?,
    };
    let dtype = cfg.checkpoint_dtype;
    let save = |t: &Trainer, name: &str| {
        save_checkpoint(&out.join(name), t.model(), t.vocab(), Some(t.optimizer()), t.progress(), dtype)
    };
    if cfg.train.epochs == 0 || trainer.progress().epoch >= cfg.train.epochs {
        save(&trainer, LATEST)?;
        save(&trainer, BEST)?;
        trainer.log().write_csv(&out.join(LOG))?;
        return Ok(());
    }
    let mut best = f64::NEG_INFINITY;
    trainer.fit(&train_corpus, valid.as_ref(), cfg.train.epochs, |t, s| {
        print_epoch(s);
        save(t, LATEST)?;
        let score = s.val_bleu.unwrap_or(f64::NEG_INFINITY);
        if score > best || valid.is_none() || best == f64::NEG_INFINITY {
            best = best.max(score);
            save(t, BEST)?;
        }
        t.log().write_csv(&out.join(LOG))
    })?;
    Ok(())
}

fn load_model(ckpt: &Path) -> Result<(Model, Vocabulary)> {
    let ck: Checkpoint = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    Ok(ck.into_model()?)
}

pub fn translate(
    ckpt: &Path,
    input: &Path,
    out: &Path,
    beam: Option<usize>,
    length_penalty: f64,
    dump_attn: Option<&Path>,
    translit: Option<&Path>,
) -> Result<()> {
    let (model, vocab) = load_model(ckpt)?;
    let table = load_table(translit)?;
    let mut lines = read_lines(input)?;
    if let Some(t) = &table {
        lines = lines.iter().map(|l| t.transliterate(l)).collect();
    }
    let unknown: BTreeSet<char> = lines.iter().flat_map(|l| l.chars()).filter(|&c| !vocab.contains(c)).collect();
    if !unknown.is_empty() {
        eprintln!(
            "warning: {} input characters are not in the checkpoint vocabulary and map to UNK: {:?}",
            unknown.len(),
            unknown.iter().collect::<String>()
        );
    }
    let cfg = match beam {
        None => DecodeConfig::default(),
        Some(0) => bail!("--beam must be at least 1"),
        Some(b) => DecodeConfig { strategy: Strategy::Beam, beam_size: b, length_penalty, ..DecodeConfig::default() },
    };
    let todo: Vec<usize> = (0..lines.len()).filter(|&i| !lines[i].is_empty()).collect();
    let mut hyps = vec![String::new(); lines.len()];
    for chunk in todo.chunks(64) {
        let srcs: Vec<&str> = chunk.iter().map(|&i| lines[i].as_str()).collect();
        for (&i, h) in chunk.iter().zip(translate_all(&model, &vocab, &srcs, &cfg)?) {
            hyps[i] = h;
        }
    }
    write_lines(out, &hyps)?;
    if let Some(dir) = dump_attn {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for &i in &todo {
            let batch = Batch::from_pairs(&vocab, &[(lines[i].as_str(), hyps[i].as_str())], vec![i])?;
            let map = model.extract_cross_attention(&batch)?.remove(0);
            write_matrix(&dir.join(format!("{i}.txt")), &map)?;
        }
    }
    Ok(())
}

pub fn score(hyp: &Path, reference: &Path, char: bool, smooth: bool) -> Result<()> {
    let hyps = read_lines(hyp)?;
    let refs = read_lines(reference)?;
    ensure!(hyps.len() == refs.len(), "{} hypotheses but {} references", hyps.len(), refs.len());
    let tokenizer = if char { BleuTokenizer::Character } else { BleuTokenizer::Whitespace };
    let bleu = corpus_bleu(&hyps, &refs, BleuOptions { tokenizer, smooth })?;
    println!("BLEU {bleu:.2}");
    Ok(())
}

fn model_tag(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

#[allow(clippy::too_many_arguments)]
pub fn analyze(
    ckpt_a: &Path,
    ckpt_b: &[PathBuf],
    src: &Path,
    reference: &Path,
    opts: &AnalyzeConfig,
    lang: &str,
    out: &Path,
    translit: Option<&Path>,
    dump_dir: Option<&Path>,
) -> Result<()> {
    ensure!(opts.reg > 0.0, "--reg must be positive");
    let table = load_table(translit)?;
    let files = CorpusFiles { src: src.to_path_buf(), tgt: reference.to_path_buf(), lang: lang.to_string() };
    let corpus = load_corpus(&files, table.as_ref())?;
    let collect = |path: &Path| -> Result<_> {
        let (model, vocab) = load_model(path)?;
        let set = collect_alignments(&model, &vocab, &corpus, opts.n, opts.seed, &model_tag(path))?;
        if let Some(dir) = dump_dir {
            dump_alignments(&dir.join(&set.model), &set)?;
        }
        Ok(set)
    };
    let set_a = collect(ckpt_a)?;
    let mut reports = Vec::with_capacity(ckpt_b.len());
    for b in ckpt_b {
        let set_b = collect(b)?;
        let r = alignment_report(&set_a, &set_b, (opts.grid, opts.grid), opts.k, opts.reg)?;
        println!("{} vs {}: rho_mean {:.6}", r.model_a, r.model_b, r.rho_mean);
        reports.push(r);
    }
    std::fs::write(out, reports_csv(&reports)).with_context(|| format!("writing {}", out.display()))
}

pub fn toy_data(cipher: bool, n: usize, out_dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let corpora =
        if cipher { toy::cipher_corpora(n, 5, 20, seed)?.to_vec() } else { vec![toy::copy_corpus(n, 5, 20, seed)?] };
    for c in &corpora {
        let (s, t) = (out_dir.join(format!("{}.src", c.lang())), out_dir.join(format!("{}.tgt", c.lang())));
        c.save(&s, &t)?;
        println!("wrote {} pairs to {} and {}", c.len(), s.display(), t.display());
    }
    Ok(())
}
