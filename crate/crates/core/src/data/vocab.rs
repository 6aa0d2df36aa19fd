use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::corpus::ParallelCorpus;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_RESERVED: usize = 4;

/// Character <-> id map. Ids `0..4` are PAD, BOS, EOS and UNK; characters
/// follow in the order they were registered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        let mut index = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, i + NUM_RESERVED).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary character {c:?}")));
            }
        }
        Ok(Vocabulary { chars, index })
    }

    /// Every character seen at least `min_count` times on either side of any
    /// corpus, ordered by code point.
    pub fn build(corpora: &[ParallelCorpus], min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::Invalid("min_count must be at least 1".into()));
        }
        if corpora.iter().all(|c| c.is_empty()) {
            return Err(Error::Invalid("cannot build a vocabulary from empty corpora".into()));
        }
        let mut counts: BTreeMap<char, usize> = BTreeMap::new();
        for corpus in corpora {
            for (s, t) in corpus.pairs() {
                for c in s.chars().chain(t.chars()) {
                    *counts.entry(c).or_default() += 1;
                }
            }
        }
        let chars = counts.into_iter().filter(|&(_, n)| n >= min_count).map(|(c, _)| c).collect();
        Self::from_chars(chars)
    }

    /// Size including the reserved ids.
    pub fn len(&self) -> usize {
        self.chars.len() + NUM_RESERVED
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(NUM_RESERVED).and_then(|i| self.chars.get(i)).copied()
    }

    pub fn encode(&self, s: &str, add_bos_eos: bool) -> Vec<usize> {
        let mut out = Vec::with_capacity(s.len() + 2);
        if add_bos_eos {
            out.push(BOS);
        }
        out.extend(s.chars().map(|c| self.id(c)));
        if add_bos_eos {
            out.push(EOS);
        }
        out
    }

    /// Characters for every non-reserved id; reserved ids are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&i| self.char_of(i)).collect()
    }

    /// One character per line; the character on line `i` (0-based) has id `i + 4`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for &c in &self.chars {
            s.push(c);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        if body.is_empty() {
            return Self::from_chars(Vec::new());
        }
        let mut chars = Vec::new();
        for (i, line) in body.split('\n').enumerate() {
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => {
                    return Err(Error::Format {
                        path: "<vocab>".into(),
                        line: i + 1,
                        msg: format!("expected exactly one character, got {line:?}"),
                    })
                }
            }
        }
        Self::from_chars(chars)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Format { line, msg, .. } => Error::Format { path: path.into(), line, msg },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::new(pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(), "x").unwrap()
    }

    #[test]
    fn two_char_corpus() {
        let v = Vocabulary::build(&[corpus(&[("ab", "ba")])], 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id('a'), 4);
        assert_eq!(v.id('b'), 5);
    }

    #[test]
    fn min_count_drops_rare_chars() {
        let v = Vocabulary::build(&[corpus(&[("aaz", "aa")])], 2).unwrap();
        assert!(!v.contains('z'));
        assert_eq!(v.encode("z", false), vec![UNK]);
        assert!(Vocabulary::build(&[corpus(&[("a", "a")])], 0).is_err());
        assert!(Vocabulary::build(&[], 1).is_err());
    }

    #[test]
    fn order_independent_of_corpus_order() {
        let a = Vocabulary::build(&[corpus(&[("xy", "z"), ("q", "yx")])], 1).unwrap();
        let b = Vocabulary::build(&[corpus(&[("q", "yx"), ("xy", "z")])], 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_decode_contracts() {
        let v = Vocabulary::from_chars(vec!['a', 'b']).unwrap();
        assert_eq!(v.encode("", true), vec![BOS, EOS]);
        assert_eq!(v.encode("a¤b", false), vec![4, UNK, 5]);
        assert_eq!(v.decode(&v.encode("abba", false)), "abba");
        assert_eq!(v.decode(&[BOS, 4, PAD, UNK, 5, EOS]), "ab");
    }

    #[test]
    fn text_round_trip_and_errors() {
        let v = Vocabulary::from_chars(vec![' ', 'é', '利']).unwrap();
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::from_text("ab\n").is_err());
        assert!(Vocabulary::from_text("a\na\n").is_err());
    }
}
