//! Model invariants: straight-line oracles, residual identity, causality,
//! padding invariance, attention normalization and parameter accounting.

mod common;

use std::collections::BTreeMap;

use convtransformer::data::{Batch, EOS, NUM_RESERVED};
use convtransformer::model::{
    conv_param_prefix, conv_sub_block, parameter_count, EncoderKind, Mode, Model, ModelConfig, ParameterSet,
};
use convtransformer::tensor::{grad_check, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V: usize = 12;

fn config(kind: EncoderKind, layers: usize, d: usize, heads: usize) -> ModelConfig {
    ModelConfig { n_layers: layers, d_model: d, n_heads: heads, d_ff: 2 * d, ..ModelConfig::tiny(kind, V) }
}

/// Random characters (non-reserved ids), with EOS appended to the source.
fn random_pair(rng: &mut ChaCha8Rng, ts: usize, tt: usize) -> (Vec<usize>, Vec<usize>) {
    let mut src: Vec<usize> = (0..ts).map(|_| rng.gen_range(NUM_RESERVED..V)).collect();
    src.push(EOS);
    let tgt = (0..tt).map(|_| rng.gen_range(NUM_RESERVED..V)).collect();
    (src, tgt)
}

fn batch_of(pairs: &[(Vec<usize>, Vec<usize>)]) -> Batch {
    let src: Vec<Vec<usize>> = pairs.iter().map(|p| p.0.clone()).collect();
    let tgt: Vec<Vec<usize>> = pairs.iter().map(|p| p.1.clone()).collect();
    Batch::from_ids(&src, &tgt, (0..pairs.len()).collect()).unwrap()
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn encoder_matches_straight_line_oracle() {
    for kind in [EncoderKind::Standard, EncoderKind::Conv] {
        let model = Model::init(config(kind, 1, 8, 2), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (src, tgt) = random_pair(&mut rng, 6, 4);
        let batch = batch_of(&[(src.clone(), tgt)]);
        let got = model.encode(&batch.src, &mut Mode::Eval).unwrap();
        let want: Vec<f64> = common::encode(&model, &src).concat();
        let err = common::max_abs_diff(&got.data(), &want);
        assert!(err < 1e-12, "{kind:?}: {err}");
    }
}

#[test]
fn full_model_matches_straight_line_oracle() {
    for kind in [EncoderKind::Standard, EncoderKind::Conv] {
        let model = Model::init(config(kind, 2, 16, 4), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (src, tgt) = random_pair(&mut rng, 7, 5);
        let batch = batch_of(&[(src.clone(), tgt)]);
        let out = model.forward(&batch, &mut Mode::Eval).unwrap();
        let memory = common::encode(&model, &src);
        let (logits, cross) = common::decode(&model, &memory, batch.tgt_in.row(0));
        assert!(common::max_abs_diff(&out.logits.data(), &logits.concat()) < 1e-12);
        let probs: Vec<f64> = cross.concat().concat();
        assert!(common::max_abs_diff(&out.cross_attn[1].data(), &probs) < 1e-12);
    }
}

#[test]
fn conv_sub_block_matches_composed_convolutions() {
    let cfg = ModelConfig { d_model: 8, n_heads: 2, ..ModelConfig::tiny(EncoderKind::Conv, V) };
    let model = Model::init(cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let x = Tensor::new(&[5, 8], m.concat()).unwrap();
    let prefix = conv_param_prefix(0);
    let got = conv_sub_block(&x, model.params(), &prefix, &[3, 5, 7], None).unwrap();
    let want = common::conv_block(&model, &m, &prefix);
    assert!(common::max_abs_diff(&got.data(), &want.concat()) < 1e-12);
}

#[test]
fn zeroed_conv_block_is_bit_identical_to_standard_encoder() {
    for seed in 0..5 {
        let conv_cfg = config(EncoderKind::Conv, 2, 16, 2);
        let conv = ParameterSet::init(&conv_cfg, seed).unwrap();
        for l in 0..conv_cfg.n_layers {
            conv.zero_prefix(&conv_param_prefix(l));
        }
        let shared: BTreeMap<String, Tensor> =
            conv.iter().filter(|(k, _)| !k.contains(".conv.")).map(|(k, v)| (k.clone(), v.clone())).collect();
        let std_cfg = ModelConfig { encoder_kind: EncoderKind::Standard, ..conv_cfg.clone() };
        let conv_model = Model::new(conv_cfg, conv).unwrap();
        let std_model = Model::new(std_cfg, ParameterSet::from_map(shared)).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = vec![random_pair(&mut rng, 9, 6), random_pair(&mut rng, 4, 8)];
        let batch = batch_of(&pairs);
        let a = conv_model.forward(&batch, &mut Mode::Eval).unwrap();
        let b = std_model.forward(&batch, &mut Mode::Eval).unwrap();
        assert_eq!(bits(&a.logits), bits(&b.logits));
        for (x, y) in a.cross_attn.iter().zip(&b.cross_attn) {
            assert_eq!(bits(x), bits(y));
        }
    }
}

#[test]
fn decoder_is_causal_under_exhaustive_perturbation() {
    let model = Model::init(config(EncoderKind::Conv, 2, 16, 2), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (src, tgt) = random_pair(&mut rng, 5, 7);
    let base = model.forward(&batch_of(&[(src.clone(), tgt.clone())]), &mut Mode::Eval).unwrap();
    let base = base.logits.to_vec();
    // tgt_in = [BOS] + tgt, so target token j sits at decoder input j + 1.
    for j in 0..tgt.len() {
        for id in NUM_RESERVED..V {
            if id == tgt[j] {
                continue;
            }
            let mut t = tgt.clone();
            t[j] = id;
            let out = model.forward(&batch_of(&[(src.clone(), t)]), &mut Mode::Eval).unwrap();
            let got = out.logits.data();
            let upto = (j + 1) * V;
            assert_eq!(&got[..upto], &base[..upto], "perturbing target {j} changed earlier logits");
            assert_ne!(&got[upto..], &base[upto..]);
        }
    }
}

#[test]
fn trailing_padding_does_not_change_real_positions() {
    for kind in [EncoderKind::Standard, EncoderKind::Conv] {
        let model = Model::init(config(kind, 2, 16, 4), 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let short = random_pair(&mut rng, 3, 4);
        let alone = batch_of(std::slice::from_ref(&short));
        let alone_enc = model.encode(&alone.src, &mut Mode::Eval).unwrap().to_vec();
        let alone_out = model.forward(&alone, &mut Mode::Eval).unwrap().logits.to_vec();
        for extra in [1, 4, 9] {
            let long = random_pair(&mut rng, 3 + extra, 4 + extra);
            let padded = batch_of(&[short.clone(), long]);
            let enc = model.encode(&padded.src, &mut Mode::Eval).unwrap().to_vec();
            let out = model.forward(&padded, &mut Mode::Eval).unwrap().logits.to_vec();
            assert!(common::max_abs_diff(&enc[..alone_enc.len()], &alone_enc) <= 1e-9);
            let tt = padded.tgt_in.cols;
            let real = alone.tgt_in.cols;
            let rows: Vec<f64> = out[..tt * V].chunks(V).take(real).flatten().copied().collect();
            assert!(common::max_abs_diff(&rows, &alone_out) <= 1e-9, "{kind:?} +{extra}");
        }
    }
}

#[test]
fn permuting_source_changes_encoder_output() {
    let model = Model::init(config(EncoderKind::Standard, 1, 16, 2), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let mut src: Vec<usize> = (0..6).map(|_| rng.gen_range(NUM_RESERVED..V)).collect();
        if src.iter().all(|&c| c == src[0]) {
            continue;
        }
        let mut perm = src.clone();
        while perm == src {
            perm.rotate_left(1);
            perm.swap(0, rng.gen_range(0..6));
        }
        src.push(EOS);
        perm.push(EOS);
        let tgt = vec![NUM_RESERVED];
        let a = model.encode(&batch_of(&[(src, tgt.clone())]).src, &mut Mode::Eval).unwrap();
        let b = model.encode(&batch_of(&[(perm, tgt)]).src, &mut Mode::Eval).unwrap();
        assert!(common::max_abs_diff(&a.data(), &b.data()) > 1e-3);
    }
}

#[test]
fn extracted_attention_is_row_stochastic_with_real_dims() {
    let model = Model::init(config(EncoderKind::Conv, 2, 16, 4), 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pairs = vec![random_pair(&mut rng, 3, 9), random_pair(&mut rng, 8, 2)];
    let maps = model.extract_cross_attention(&batch_of(&pairs)).unwrap();
    for (map, (src, tgt)) in maps.iter().zip(&pairs) {
        assert_eq!((map.target_len, map.source_len), (tgt.len() + 1, src.len()));
        for i in 0..map.target_len {
            assert!((map.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(map.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let model = Model::init(config(EncoderKind::Conv, 2, 16, 2), 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let batch = batch_of(&[random_pair(&mut rng, 6, 6)]);
    let report =
        grad_check(|| model.forward(&batch, &mut Mode::Eval)?.logits.mean(), &model.params().entries(), 1e-5, 1e-4)
            .unwrap();
    assert!(report.passed(), "max rel err {}", report.max_rel_err());
}

/// Closed-form count of one model, written out from the layer definitions.
fn closed_form(kind: EncoderKind, n: usize, d: usize, dff: usize, v: usize, windows: &[usize], fuse: usize) -> usize {
    let attn = 4 * (d * d + d);
    let norm = 2 * d;
    let ffn = d * dff + dff + dff * d + d;
    let conv = if kind == EncoderKind::Conv {
        windows.iter().map(|w| w * d * d + d).sum::<usize>() + fuse * windows.len() * d * d + d
    } else {
        0
    };
    let enc = n * (conv + attn + norm + ffn + norm);
    let dec = n * (2 * attn + 3 * norm + ffn);
    2 * v * d + enc + dec + d * v + v
}

#[test]
fn parameter_count_matches_closed_form() {
    for kind in [EncoderKind::Standard, EncoderKind::Conv] {
        let cfg = ModelConfig { encoder_kind: kind, vocab_size: 300, ..ModelConfig::default() };
        let want = closed_form(kind, 6, 512, 2048, 300, &[3, 5, 7], 3);
        assert_eq!(parameter_count(&cfg), want);
        assert_eq!(ParameterSet::init(&ModelConfig { max_len: 8, ..cfg.clone() }, 0).unwrap().num_elements(), want);
    }
    let d = 512;
    let per_layer = (3 * d * d + d) + (5 * d * d + d) + (7 * d * d + d) + (3 * 3 * d * d + d);
    let base = ModelConfig { vocab_size: 300, ..ModelConfig::default() };
    let std = ModelConfig { encoder_kind: EncoderKind::Standard, ..base.clone() };
    assert_eq!(parameter_count(&base) - parameter_count(&std), 6 * per_layer);
}
