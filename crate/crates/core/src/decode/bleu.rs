use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuTokenizer {
    /// Whitespace-separated words.
    #[default]
    Whitespace,
    /// Every non-whitespace character is a token.
    Character,
}

impl BleuTokenizer {
    pub fn tokenize<'a>(&self, s: &'a str) -> Vec<&'a str> {
        match self {
            BleuTokenizer::Whitespace => s.split_whitespace().collect(),
            BleuTokenizer::Character => {
                s.char_indices().filter(|(_, c)| !c.is_whitespace()).map(|(i, c)| &s[i..i + c.len_utf8()]).collect()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuOptions {
    pub tokenizer: BleuTokenizer,
    /// Add-one smoothing of the precisions for orders 2 and up.
    pub smooth: bool,
}

/// Sufficient statistics of corpus BLEU.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add_sentence(&mut self, hyp: &[&str], reference: &[&str]) {
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1);
            self.matches[n - 1] += h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }

    /// Score in `[0, 100]`.
    pub fn score(&self, smooth: bool) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let (mut m, mut t) = (self.matches[n] as f64, self.totals[n] as f64);
            if smooth && n > 0 {
                m += 1.0;
                t += 1.0;
            }
            if m == 0.0 || t == 0.0 {
                return 0.0;
            }
            log_sum += (m / t).ln();
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        100.0 * bp * (log_sum / MAX_ORDER as f64).exp()
    }
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU (orders 1..=4, brevity penalty), scaled to `[0, 100]`.
/// Token-identical corpora score exactly 100.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], opts: BleuOptions) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::Invalid(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    if hyps.is_empty() {
        return Err(Error::Invalid("BLEU needs at least one sentence".into()));
    }
    let mut stats = BleuStats::default();
    let mut identical = true;
    for (h, r) in hyps.iter().zip(refs) {
        let ht = opts.tokenizer.tokenize(h.as_ref());
        let rt = opts.tokenizer.tokenize(r.as_ref());
        identical &= ht == rt;
        stats.add_sentence(&ht, &rt);
    }
    if identical {
        return Ok(100.0);
    }
    Ok(stats.score(opts.smooth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bleu(h: &[&str], r: &[&str]) -> f64 {
        corpus_bleu(h, r, BleuOptions::default()).unwrap()
    }

    #[test]
    fn anchors() {
        let s = ["the cat sat on the mat", "a b c d e"];
        assert_eq!(bleu(&s, &s), 100.0);
        assert_eq!(bleu(&["x y z w"], &["a b c d"]), 0.0);
        assert!(corpus_bleu(&["a"], &["a", "b"], BleuOptions::default()).is_err());
    }

    #[test]
    fn hand_computed_value() {
        // 6 hyp tokens vs 7 ref tokens; precisions 5/6, 3/5, 2/4, 1/3.
        let h = ["the cat sat on a mat"];
        let r = ["the cat sat on the red mat"];
        let p: f64 = (5.0 / 6.0) * (3.0 / 5.0) * (2.0 / 4.0) * (1.0 / 3.0);
        let want = 100.0 * (1.0f64 - 7.0 / 6.0).exp() * p.powf(0.25);
        assert!((bleu(&h, &r) - want).abs() < 1e-12);
    }

    #[test]
    fn character_mode_and_smoothing() {
        let opts = BleuOptions { tokenizer: BleuTokenizer::Character, smooth: false };
        assert_eq!(corpus_bleu(&["abcd"], &["abcd"], opts).unwrap(), 100.0);
        assert!(corpus_bleu(&["abcdex"], &["abcdey"], opts).unwrap() > 0.0);
        let smooth = BleuOptions { smooth: true, ..Default::default() };
        assert_eq!(bleu(&["a b"], &["a c"]), 0.0);
        assert!(corpus_bleu(&["a b"], &["a c"], smooth).unwrap() > 0.0);
    }
}
