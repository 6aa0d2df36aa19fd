use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unicode_normalization::UnicodeNormalization;

use super::translit::TransliterationTable;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Aligned sentence pairs. The language tag is bookkeeping only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelCorpus {
    pairs: Vec<(String, String)>,
    lang: String,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<(String, String)>, lang: &str) -> Result<Self> {
        for (i, (s, t)) in pairs.iter().enumerate() {
            if s.is_empty() || t.is_empty() {
                return Err(Error::Invalid(format!("pair {} has an empty side", i + 1)));
            }
        }
        Ok(ParallelCorpus { pairs, lang: lang.to_string() })
    }

    /// Reads two aligned files (UTF-8, LF line endings, no BOM), NFC-normalizing each line.
    pub fn load(src_path: &Path, tgt_path: &Path, lang: &str) -> Result<Self> {
        let src = read_lines(src_path)?;
        let tgt = read_lines(tgt_path)?;
        if src.len() != tgt.len() {
            return Err(Error::Invalid(format!(
                "{} has {} lines but {} has {}",
                src_path.display(),
                src.len(),
                tgt_path.display(),
                tgt.len()
            )));
        }
        Ok(ParallelCorpus { pairs: src.into_iter().zip(tgt).collect(), lang: lang.to_string() })
    }

    pub fn save(&self, src_path: &Path, tgt_path: &Path) -> Result<()> {
        let join = |f: fn(&(String, String)) -> &String| {
            let mut s = String::new();
            for p in &self.pairs {
                s.push_str(f(p));
                s.push('\n');
            }
            s
        };
        std::fs::write(src_path, join(|p| &p.0)).map_err(|e| Error::io(src_path, e))?;
        std::fs::write(tgt_path, join(|p| &p.1)).map_err(|e| Error::io(tgt_path, e))
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn lang(&self) -> &str {
        &self.lang
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// First `n` pairs as a new corpus.
    pub fn take(&self, n: usize) -> ParallelCorpus {
        ParallelCorpus { pairs: self.pairs.iter().take(n).cloned().collect(), lang: self.lang.clone() }
    }

    /// Splits off the last `n` pairs: `(head, tail)`.
    pub fn split_tail(&self, n: usize) -> (ParallelCorpus, ParallelCorpus) {
        let cut = self.pairs.len().saturating_sub(n);
        let head = ParallelCorpus { pairs: self.pairs[..cut].to_vec(), lang: self.lang.clone() };
        let tail = ParallelCorpus { pairs: self.pairs[cut..].to_vec(), lang: self.lang.clone() };
        (head, tail)
    }

    pub fn transliterate(&self, table: &TransliterationTable, side: Side) -> ParallelCorpus {
        let pairs = self
            .pairs
            .iter()
            .map(|(s, t)| match side {
                Side::Source => (table.transliterate(s), t.clone()),
                Side::Target => (s.clone(), table.transliterate(t)),
            })
            .collect();
        ParallelCorpus { pairs, lang: self.lang.clone() }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fail = |line: usize, msg: &str| Error::Format { path: path.into(), line, msg: msg.to_string() };
    if text.starts_with('\u{feff}') {
        return Err(fail(1, "byte order mark not allowed"));
    }
    let body = text.strip_suffix('\n').unwrap_or(&text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            if line.ends_with('\r') {
                Err(fail(i + 1, "CRLF line ending"))
            } else if line.is_empty() {
                Err(fail(i + 1, "empty line"))
            } else {
                Ok(line.nfc().collect())
            }
        })
        .collect()
}

/// Concatenates the corpora and shuffles the pairs with `seed`.
pub fn mix_corpora(corpora: &[ParallelCorpus], seed: u64) -> Result<ParallelCorpus> {
    if corpora.is_empty() {
        return Err(Error::Invalid("mix_corpora needs at least one corpus".into()));
    }
    let mut pairs: Vec<(String, String)> = corpora.iter().flat_map(|c| c.pairs.iter().cloned()).collect();
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let lang = corpora.iter().map(|c| c.lang.as_str()).collect::<Vec<_>>().join("+");
    Ok(ParallelCorpus { pairs, lang })
}
