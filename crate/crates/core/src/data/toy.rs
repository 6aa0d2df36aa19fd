//! Synthetic corpora for smoke tests and desk-scale experiments.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::ParallelCorpus;
use crate::error::{Error, Result};

/// Nine letters and a space.
pub const TOY_ALPHABET: [char; 10] = ['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', ' '];

/// `n` random strings with lengths uniform in `min_len..=max_len`. Strings
/// never start or end with a space.
pub fn random_strings(n: usize, alphabet: &[char], min_len: usize, max_len: usize, seed: u64) -> Result<Vec<String>> {
    if min_len == 0 || min_len > max_len {
        return Err(Error::Invalid(format!("bad length range {min_len}..={max_len}")));
    }
    if !alphabet.iter().any(|c| !c.is_whitespace()) {
        return Err(Error::Invalid("alphabet needs a non-space character".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.gen_range(min_len..=max_len);
        let s: String = (0..len).map(|_| *alphabet.choose(&mut rng).unwrap()).collect();
        if !s.starts_with(char::is_whitespace) && !s.ends_with(char::is_whitespace) {
            out.push(s);
        }
    }
    Ok(out)
}

/// Identity translation over random strings.
pub fn copy_corpus(n: usize, min_len: usize, max_len: usize, seed: u64) -> Result<ParallelCorpus> {
    let strings = random_strings(n, &TOY_ALPHABET, min_len, max_len, seed)?;
    ParallelCorpus::new(strings.into_iter().map(|s| (s.clone(), s)).collect(), "copy")
}

/// A character substitution; unmapped characters pass through.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubstitutionCipher {
    map: HashMap<char, char>,
}

impl SubstitutionCipher {
    /// Seeded bijection from `domain` onto `codomain` (equal sizes).
    pub fn random(domain: &[char], codomain: &[char], seed: u64) -> Result<Self> {
        if domain.len() != codomain.len() {
            return Err(Error::Invalid("cipher domain and codomain differ in size".into()));
        }
        let mut image = codomain.to_vec();
        image.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(SubstitutionCipher { map: domain.iter().copied().zip(image).collect() })
    }

    pub fn apply(&self, s: &str) -> String {
        s.chars().map(|c| self.map.get(&c).copied().unwrap_or(c)).collect()
    }
}

/// Pairs `(cipher(t), t)` for every target sentence.
pub fn cipher_corpus(targets: &[String], cipher: &SubstitutionCipher, lang: &str) -> Result<ParallelCorpus> {
    ParallelCorpus::new(targets.iter().map(|t| (cipher.apply(t), t.clone())).collect(), lang)
}

/// Codomains of the two toy cipher languages: disjoint from each other and
/// from the target alphabet.
pub const CIPHER_CODOMAINS: [[char; 9]; 2] =
    [['A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I'], ['j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r']];

/// Two cipher "languages" translating into the shared toy target language,
/// each with `n` pairs of length `min_len..=max_len`.
pub fn cipher_corpora(n: usize, min_len: usize, max_len: usize, seed: u64) -> Result<[ParallelCorpus; 2]> {
    let letters = &TOY_ALPHABET[..9];
    let mut out = Vec::with_capacity(2);
    for (i, codomain) in CIPHER_CODOMAINS.iter().enumerate() {
        let cipher = SubstitutionCipher::random(letters, codomain, seed ^ (0xc1 + i as u64))?;
        let targets = random_strings(n, &TOY_ALPHABET, min_len, max_len, seed.wrapping_add(1000 * (i as u64 + 1)))?;
        out.push(cipher_corpus(&targets, &cipher, &format!("l{}", i + 1))?);
    }
    let [a, b]: [ParallelCorpus; 2] = out.try_into().expect("two corpora");
    Ok([a, b])
}
