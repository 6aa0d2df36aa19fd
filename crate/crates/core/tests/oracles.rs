//! Brute-force oracles for BLEU, cross-entropy, beam search and CCA.

mod common;

use common::bleu::{oracle_bleu, random_corpus};
use convtransformer::align::{cca, cca_mean_correlation, DEFAULT_REG};
use convtransformer::data::{BOS, EOS};
use convtransformer::decode::{beam_search, corpus_bleu, BleuOptions, BleuTokenizer, StepScorer};
use convtransformer::tensor::Tensor;
use convtransformer::Result;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// ---------------------------------------------------------------- BLEU

const WORDS: BleuOptions = BleuOptions { tokenizer: BleuTokenizer::Whitespace, smooth: false };

#[test]
fn bleu_matches_brute_force_oracle_on_random_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut nonzero = 0;
    for _ in 0..20 {
        let (hyps, refs) = random_corpus(&mut rng);
        let got = corpus_bleu(&hyps, &refs, WORDS).unwrap();
        let want = oracle_bleu(&hyps, &refs);
        assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        nonzero += usize::from(want > 0.0);
    }
    assert!(nonzero >= 10, "oracle corpora too easy to zero out");
}

#[test]
fn bleu_anchors_and_order_invariance() {
    let refs = vec!["the cat sat on the mat".to_string(), "a b c d".to_string()];
    assert_eq!(corpus_bleu(&refs, &refs, WORDS).unwrap(), 100.0);
    let disjoint = vec!["x y z w v u".to_string(), "p q r s".to_string()];
    assert_eq!(corpus_bleu(&disjoint, &refs, WORDS).unwrap(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (hyps, refs) = random_corpus(&mut rng);
        let base = corpus_bleu(&hyps, &refs, WORDS).unwrap();
        let mut order: Vec<usize> = (0..hyps.len()).collect();
        order.shuffle(&mut rng);
        let h: Vec<&String> = order.iter().map(|&i| &hyps[i]).collect();
        let r: Vec<&String> = order.iter().map(|&i| &refs[i]).collect();
        assert!((corpus_bleu(&h, &r, WORDS).unwrap() - base).abs() < 1e-9);
        assert_eq!(base == 100.0, hyps == refs);
    }
    assert!(corpus_bleu(&refs[..1], &refs, WORDS).is_err());
}

// ------------------------------------------------------- cross-entropy

#[test]
fn cross_entropy_matches_log_softmax_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..20 {
        let (n, v) = (rng.gen_range(1..8), rng.gen_range(2..9));
        let logits: Vec<f64> = (0..n * v).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..v)).collect();
        let mut valid: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
        valid[trial % n] = true;
        let alpha = [0.0, 0.1, 0.3][trial % 3];
        let t = Tensor::new(&[n, v], logits.clone()).unwrap();
        let got = t.masked_cross_entropy(&targets, &valid, alpha).unwrap().item().unwrap();
        let mut sum = 0.0;
        for i in (0..n).filter(|&i| valid[i]) {
            let row = &logits[i * v..(i + 1) * v];
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            for (k, x) in row.iter().enumerate() {
                let q = alpha / v as f64 + if k == targets[i] { 1.0 - alpha } else { 0.0 };
                sum -= q * (x.exp() / z).ln();
            }
        }
        let want = sum / valid.iter().filter(|&&b| b).count() as f64;
        assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
    }
}

#[test]
fn cross_entropy_analytic_cases() {
    let v = 5;
    let uniform = Tensor::new(&[3, v], vec![0.7; 3 * v]).unwrap();
    let loss = uniform.masked_cross_entropy(&[0, 2, 4], &[true; 3], 0.0).unwrap().item().unwrap();
    assert!((loss - (v as f64).ln()).abs() < 1e-12);
    let mut sharp = vec![-1e3; 2 * v];
    sharp[1] = 0.0;
    sharp[v + 3] = 0.0;
    let perfect = Tensor::new(&[2, v], sharp).unwrap();
    assert_eq!(perfect.masked_cross_entropy(&[1, 3], &[true, true], 0.0).unwrap().item().unwrap(), 0.0);
    assert!(uniform.masked_cross_entropy(&[0, 2, 4], &[false; 3], 0.0).is_err());
}

// --------------------------------------------------------- beam search

/// Next-token distribution depending only on the previous token.
struct Markov {
    table: Vec<Vec<f64>>,
}

impl Markov {
    fn random(v: usize, rng: &mut ChaCha8Rng) -> Self {
        let table = (0..v)
            .map(|_| {
                let w: Vec<f64> = (0..v).map(|_| rng.gen_range(0.05..1.0f64).powi(3)).collect();
                let z: f64 = w.iter().sum();
                w.iter().map(|x| (x / z).ln()).collect()
            })
            .collect();
        Markov { table }
    }

    fn score(&self, ids: &[usize]) -> f64 {
        let mut prev = BOS;
        let mut s = 0.0;
        for &t in ids {
            s += self.table[prev][t];
            prev = t;
        }
        s
    }
}

impl StepScorer for Markov {
    fn vocab_size(&self) -> usize {
        self.table.len()
    }

    fn log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        Ok(prefixes.iter().map(|p| self.table[*p.last().unwrap()].clone()).collect())
    }
}

/// Every complete output: EOS-terminated within `cap`, or exactly `cap` long.
fn all_outputs(v: usize, cap: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for step in 0..cap {
        let mut next = Vec::new();
        for p in &frontier {
            for t in 0..v {
                let mut q = p.clone();
                q.push(t);
                if t == EOS || step + 1 == cap {
                    out.push(q);
                } else {
                    next.push(q);
                }
            }
        }
        frontier = next;
    }
    out
}

fn exhaustive_best(m: &Markov, cap: usize, penalty: f64) -> Vec<usize> {
    all_outputs(m.table.len(), cap)
        .into_iter()
        .map(|ids| {
            let s = m.score(&ids) / (ids.len() as f64).powf(penalty);
            (ids, s)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

#[test]
fn single_step_beam_equals_exhaustive_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let mut m = Markov::random(8, &mut rng);
        let want = exhaustive_best(&m, 1, 0.0);
        assert_eq!(beam_search(&mut m, 8, 1, 0.0).unwrap(), want);
    }
}

#[test]
fn wide_beam_equals_exhaustive_search() {
    // Width 400 exceeds the 7^3 live prefixes possible at cap 4, so the
    // search is exhaustive and must agree with enumeration.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..30 {
        let penalty = [0.0, 0.6, 1.0][trial % 3];
        let mut m = Markov::random(8, &mut rng);
        let want = exhaustive_best(&m, 4, penalty);
        assert_eq!(beam_search(&mut m, 400, 4, penalty).unwrap(), want, "trial {trial}");
    }
}

#[test]
fn beam_eight_on_four_char_toy_model_finds_best_sequence() {
    // Four characters after the reserved ids; reserved tokens other than
    // EOS are made unlikely, as in a trained model.
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut m = Markov::random(8, &mut rng);
    for row in m.table.iter_mut() {
        for id in [0, 1, 3] {
            row[id] -= 8.0;
        }
    }
    for penalty in [0.0, 1.0] {
        let want = exhaustive_best(&m, 4, penalty);
        assert_eq!(beam_search(&mut m, 8, 4, penalty).unwrap(), want);
    }
}

#[test]
fn beam_one_is_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut m = Markov::random(6, &mut rng);
        let mut greedy = Vec::new();
        let mut prev = BOS;
        while greedy.len() < 6 {
            let row = &m.table[prev];
            let t = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            greedy.push(t);
            if t == EOS {
                break;
            }
            prev = t;
        }
        assert_eq!(beam_search(&mut m, 1, 6, 1.0).unwrap(), greedy);
    }
}

// ----------------------------------------------------------------- CCA

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn orthonormal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    gaussian(d, d, rng).qr().q()
}

#[test]
fn cca_self_correlation_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = gaussian(500, 64, &mut rng);
    let r = cca(&x, &x, 10, DEFAULT_REG).unwrap();
    assert!((r.mean() - 1.0).abs() <= 1e-6);
    assert!(r.correlations.iter().all(|&c| (c - 1.0).abs() <= 1e-6));
}

#[test]
fn cca_is_invariant_to_orthonormal_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = gaussian(500, 64, &mut rng);
    let y = &x + gaussian(500, 64, &mut rng) * 0.5;
    let r = orthonormal(64, &mut rng);
    let base = cca_mean_correlation(&x, &y, 10, DEFAULT_REG).unwrap();
    let rotated = cca_mean_correlation(&x, &(&y * &r), 10, DEFAULT_REG).unwrap();
    assert!((base - rotated).abs() <= 1e-4, "{base} vs {rotated}");
    let self_rot = cca_mean_correlation(&x, &(&x * &r), 10, DEFAULT_REG).unwrap();
    assert!((self_rot - 1.0).abs() <= 1e-4);
}

#[test]
fn cca_is_symmetric_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = gaussian(200, 20, &mut rng);
    let y = &x * 0.3 + gaussian(200, 20, &mut rng);
    let a = cca(&x, &y, 10, DEFAULT_REG).unwrap();
    let b = cca(&y, &x, 10, DEFAULT_REG).unwrap();
    assert!((a.mean() - b.mean()).abs() <= 1e-9);
    for w in a.correlations.windows(2) {
        assert!(w[0] >= w[1]);
    }
    assert!(a.correlations.iter().all(|&c| (0.0..=1.0 + 1e-9).contains(&c)));
}

#[test]
fn cca_ranks_noisy_copies_above_independent_sets() {
    let mut wins = 0;
    let mut independent_means = Vec::new();
    for trial in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        let x = gaussian(500, 64, &mut rng);
        let noisy = &x + gaussian(500, 64, &mut rng) * 0.1;
        let indep = gaussian(500, 64, &mut rng);
        let paired = cca_mean_correlation(&x, &noisy, 10, DEFAULT_REG).unwrap();
        let apart = cca_mean_correlation(&x, &indep, 10, DEFAULT_REG).unwrap();
        wins += usize::from(paired > apart);
        independent_means.push(apart);
    }
    println!("independent 500x64 rho_mean per trial: {independent_means:.3?}");
    assert_eq!(wins, 10);
}

#[test]
fn cca_rejects_bad_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = gaussian(11, 3, &mut rng);
    assert!(cca(&x, &x, 10, DEFAULT_REG).is_err());
    assert!(cca(&x, &gaussian(12, 3, &mut rng), 2, DEFAULT_REG).is_err());
    assert!(cca(&x, &x, 2, 0.0).is_err());
}
