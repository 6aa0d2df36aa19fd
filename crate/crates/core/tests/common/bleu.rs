//! Brute-force n-gram counting oracle for corpus BLEU and random corpora to
//! exercise it.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Occurrences of `gram` in `tokens`, by scanning every window.
fn occurrences(tokens: &[&str], gram: &[&str]) -> usize {
    if gram.len() > tokens.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len()).filter(|&i| &tokens[i..i + gram.len()] == gram).count()
}

pub fn oracle_bleu(hyps: &[String], refs: &[String]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        let ht: Vec<&str> = h.split_whitespace().collect();
        let rt: Vec<&str> = rf.split_whitespace().collect();
        c += ht.len();
        r += rt.len();
        for n in 1..=4 {
            if ht.len() < n {
                continue;
            }
            total[n - 1] += ht.len() - n + 1;
            let mut seen: Vec<&[&str]> = Vec::new();
            for i in 0..=ht.len() - n {
                let g = &ht[i..i + n];
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                matched[n - 1] += occurrences(&ht, g).min(occurrences(&rt, g));
            }
        }
    }
    // Token-identical corpora score 100 even without any 4-gram.
    let same = hyps.iter().zip(refs).all(|(h, r)| h.split_whitespace().eq(r.split_whitespace()));
    if same {
        return 100.0;
    }
    if c == 0 || matched.contains(&0) {
        return 0.0;
    }
    let log_p: f64 = (0..4).map(|n| (matched[n] as f64 / total[n] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * log_p.exp()
}

fn random_sentence(rng: &mut ChaCha8Rng, words: &[&str]) -> String {
    let n = rng.gen_range(1..=12);
    (0..n).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// A reference plus a hypothesis made from it by random edits.
pub fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>) {
    let words = ["the", "cat", "sat", "on", "mat", "a"];
    let n = rng.gen_range(1..=10);
    let refs: Vec<String> = (0..n).map(|_| random_sentence(rng, &words)).collect();
    let hyps = refs
        .iter()
        .map(|r| {
            let mut toks: Vec<&str> = r.split(' ').collect();
            for _ in 0..rng.gen_range(0..3) {
                match rng.gen_range(0..3) {
                    0 if toks.len() > 1 => {
                        let i = rng.gen_range(0..toks.len());
                        toks.remove(i);
                    }
                    1 => {
                        let i = rng.gen_range(0..=toks.len());
                        toks.insert(i, words.choose(rng).unwrap());
                    }
                    _ => {
                        let i = rng.gen_range(0..toks.len());
                        toks[i] = words.choose(rng).unwrap();
                    }
                }
            }
            toks.join(" ")
        })
        .collect();
    (hyps, refs)
}
