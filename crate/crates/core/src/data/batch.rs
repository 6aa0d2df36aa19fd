use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::ParallelCorpus;
use super::vocab::{Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::tensor::Mask;

/// Right-padded id matrix `[rows, cols]` with per-row real lengths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGrid {
    pub ids: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
    pub lengths: Vec<usize>,
}

impl TokenGrid {
    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Invalid("batch has no rows".into()));
        }
        if let Some(i) = rows.iter().position(|r| r.is_empty()) {
            return Err(Error::Invalid(format!("row {i} is empty")));
        }
        let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = vec![PAD; rows.len() * cols];
        for (i, r) in rows.iter().enumerate() {
            ids[i * cols..i * cols + r.len()].copy_from_slice(r);
        }
        Ok(TokenGrid { ids, rows: rows.len(), cols, lengths: rows.iter().map(Vec::len).collect() })
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i * self.cols..i * self.cols + self.lengths[i]]
    }

    /// `true` at real positions, `false` at padding.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = Vec::with_capacity(self.ids.len());
        for &len in &self.lengths {
            m.extend((0..self.cols).map(|j| j < len));
        }
        m
    }

    /// Attention mask `[rows, 1, 1, cols]` hiding padded keys.
    pub fn key_mask(&self) -> Mask {
        Mask::key_padding(&self.lengths, self.cols)
    }
}

/// Teacher-forcing batch: `tgt_in = BOS + y` and `tgt_out = y + EOS`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub src: TokenGrid,
    pub tgt_in: TokenGrid,
    pub tgt_out: Vec<usize>,
    /// Corpus position of each row.
    pub indices: Vec<usize>,
}

impl Batch {
    /// `src` rows already end with EOS; `tgt` rows are bare character ids.
    pub fn from_ids(src: &[Vec<usize>], tgt: &[Vec<usize>], indices: Vec<usize>) -> Result<Self> {
        if src.len() != tgt.len() || src.len() != indices.len() {
            return Err(Error::Invalid("source, target and index counts differ".into()));
        }
        let tgt_in: Vec<Vec<usize>> =
            tgt.iter().map(|y| std::iter::once(BOS).chain(y.iter().copied()).collect()).collect();
        let tgt_in = TokenGrid::from_rows(&tgt_in)?;
        let mut tgt_out = vec![PAD; tgt_in.ids.len()];
        for (i, y) in tgt.iter().enumerate() {
            let row = &mut tgt_out[i * tgt_in.cols..];
            row[..y.len()].copy_from_slice(y);
            row[y.len()] = EOS;
        }
        Ok(Batch { src: TokenGrid::from_rows(src)?, tgt_in, tgt_out, indices })
    }

    /// Encodes pairs with `vocab`; an empty source is rejected.
    pub fn from_pairs(vocab: &Vocabulary, pairs: &[(&str, &str)], indices: Vec<usize>) -> Result<Self> {
        let mut src = Vec::with_capacity(pairs.len());
        let mut tgt = Vec::with_capacity(pairs.len());
        for (i, (s, t)) in pairs.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Invalid(format!("empty source in row {i}")));
            }
            src.push(encode_source(vocab, s));
            tgt.push(vocab.encode(t, false));
        }
        Self::from_ids(&src, &tgt, indices)
    }

    pub fn size(&self) -> usize {
        self.src.rows
    }

    pub fn src_mask(&self) -> Vec<bool> {
        self.src.mask()
    }

    pub fn tgt_mask(&self) -> Vec<bool> {
        self.tgt_in.mask()
    }

    /// Number of non-pad target positions.
    pub fn target_tokens(&self) -> usize {
        self.tgt_in.lengths.iter().sum()
    }
}

/// Source characters followed by EOS.
pub fn encode_source(vocab: &Vocabulary, s: &str) -> Vec<usize> {
    let mut ids = vocab.encode(s, false);
    ids.push(EOS);
    ids
}

/// Length-bucketed batches with `rows * max(T_s, T_t) <= max_tokens`, in
/// seeded order. Equal-length pairs are grouped in seeded order too, so
/// batch composition varies between seeds.
pub fn make_batches(corpus: &ParallelCorpus, vocab: &Vocabulary, max_tokens: usize, seed: u64) -> Result<Vec<Batch>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut encoded = Vec::with_capacity(corpus.len());
    for (i, (s, t)) in corpus.pairs().iter().enumerate() {
        let src = encode_source(vocab, s);
        let tgt = vocab.encode(t, false);
        let width = src.len().max(tgt.len() + 1);
        if width > max_tokens {
            return Err(Error::Invalid(format!(
                "pair on line {} needs {width} positions but max_tokens is {max_tokens}",
                i + 1
            )));
        }
        encoded.push((src, tgt));
    }
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| encoded[i].0.len());

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut width = 0;
    for i in order {
        let w = encoded[i].0.len().max(encoded[i].1.len() + 1);
        let next = width.max(w);
        if !current.is_empty() && (current.len() + 1) * next > max_tokens {
            groups.push(std::mem::take(&mut current));
            width = 0;
        }
        width = width.max(w);
        current.push(i);
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups.shuffle(&mut rng);

    groups
        .into_iter()
        .map(|g| {
            let src: Vec<_> = g.iter().map(|&i| encoded[i].0.clone()).collect();
            let tgt: Vec<_> = g.iter().map(|&i| encoded[i].1.clone()).collect();
            Batch::from_ids(&src, &tgt, g)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(pairs: &[(&str, &str)]) -> (ParallelCorpus, Vocabulary) {
        let c = ParallelCorpus::new(pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(), "x").unwrap();
        let v = Vocabulary::build(std::slice::from_ref(&c), 1).unwrap();
        (c, v)
    }

    #[test]
    fn equal_pairs_share_one_batch() {
        let (c, v) = setup(&[("ab", "ba"), ("ba", "ab")]);
        let b = make_batches(&c, &v, 10_000, 0).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].size(), 2);
    }

    #[test]
    fn oversized_pair_names_its_line() {
        let (c, v) = setup(&[("a", "b"), ("abababab", "b")]);
        let err = make_batches(&c, &v, 5, 0).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn shifted_targets_and_masks() {
        let (_, v) = setup(&[("abc", "ab")]);
        let b = Batch::from_pairs(&v, &[("abc", "ab"), ("a", "b")], vec![0, 1]).unwrap();
        assert_eq!(b.src.ids, vec![4, 5, 6, EOS, 4, EOS, PAD, PAD]);
        assert_eq!(b.tgt_in.ids, vec![BOS, 4, 5, BOS, 5, PAD]);
        assert_eq!(b.tgt_out, vec![4, 5, EOS, 5, EOS, PAD]);
        assert_eq!(b.src_mask(), vec![true, true, true, true, true, true, false, false]);
        assert_eq!(b.tgt_mask(), vec![true, true, true, true, true, false]);
        assert!(Batch::from_pairs(&v, &[("", "a")], vec![0]).is_err());
    }

    #[test]
    fn budget_and_coverage() {
        let pairs: Vec<(String, String)> = (0..50).map(|i| ("x".repeat(1 + i % 9), "y".repeat(1 + i % 5))).collect();
        let c = ParallelCorpus::new(pairs, "x").unwrap();
        let v = Vocabulary::build(std::slice::from_ref(&c), 1).unwrap();
        let batches = make_batches(&c, &v, 40, 3).unwrap();
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.size() * b.src.cols.max(b.tgt_in.cols) <= 40);
        }
        assert_eq!(batches, make_batches(&c, &v, 40, 3).unwrap());
    }
}
