mod common;

use std::sync::Arc;

use common::*;
use sagt_core::autodiff::{check_param_gradients, BiasTables, Mode, Tape};
use sagt_core::linalg::Matrix;
use sagt_core::model::{ensemble_predict, forward, forward_batch, sa_mha, softmax, Input, ModelParams, StructuralEncoding};
use sagt_core::sampler::SubgraphSequence;

const SEQ: [usize; 5] = [3, 7, 0, 12, 5];

#[test]
fn attention_rows_are_distributions() {
    for seed in 0..5 {
        let m = tiny_model(seed, 3, 2.0);
        let mut t = Tape::eval();
        let seqs: Vec<&[usize]> = vec![&SEQ, &[1, 2, 3, 4, 5]];
        let out = forward_batch(&mut t, &m.params, &m.enc, Input::Raw(&m.x), &seqs).unwrap();
        assert_eq!(out.attention.len(), 2);
        for att in out.attention {
            let p = t.attention_probs(att).unwrap();
            assert_eq!(p.shape(), (2 * 2 * 5, 5));
            for row in p.row_iter() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&x| x >= 0.0));
            }
        }
    }
}

#[test]
fn zero_mixing_matches_vanilla_attention() {
    for seed in 0..5 {
        let m = tiny_model(seed, 3, 0.0);
        let h = random_matrix(5, 8, 1.0, &mut rng(seed));
        let layer = &m.params.layers[0];
        let mut t = Tape::eval();
        let hv = t.constant(h.clone());
        let mix = t.param(&m.params.store, m.params.mix);
        let bias = t.mix_bias(mix, Arc::new(m.enc.tables(&[&SEQ]))).unwrap();
        let (_, att) = sa_mha(&mut t, &m.params, layer, hv, bias, 5).unwrap();
        let s = &m.params.store;
        let reference = vanilla_attention(&h, s.get(layer.wq), s.get(layer.wk), s.get(layer.wv), 2);
        assert!(t.value(att).max_abs_diff(&reference) < 1e-12);
    }
}

#[test]
fn unit_first_order_weight_gives_identity_bias() {
    let m = tiny_model(1, 3, 0.0);
    assert_eq!(m.enc.bias(&[1.0, 0.0, 0.0, 0.0], &SEQ), Matrix::identity(5));
    let mut t = Tape::eval();
    let w = t.constant(Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]]).unwrap());
    let b = t.mix_bias(w, Arc::new(m.enc.tables(&[&SEQ]))).unwrap();
    let v = t.value(b);
    for h in 0..2 {
        let idx: Vec<usize> = (h * 5..h * 5 + 5).collect();
        assert_eq!(v.select_rows(&idx), Matrix::identity(5));
    }
}

#[test]
fn last_order_is_zero_and_second_order_reads_the_walk_matrix() {
    let m = tiny_model(2, 3, 0.0);
    for &u in &SEQ {
        for &v in &SEQ {
            assert_eq!(m.enc.alpha(3, u, v), 0.0);
            let walk = if u == v || m.graph.has_edge(u, v) {
                1.0 / (m.graph.degree(u) + 1) as f64
            } else {
                0.0
            };
            assert_eq!(m.enc.alpha(1, u, v), walk);
        }
    }
}

#[test]
fn logits_ignore_context_order() {
    let m = tiny_model(3, 3, 1.5);
    let a = forward(&m.params, &m.enc, &m.x, &SEQ, Mode::Eval).unwrap();
    let b = forward(&m.params, &m.enc, &m.x, &[3, 5, 12, 7, 0], Mode::Eval).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn zero_mixing_ignores_rewiring() {
    let m = tiny_model(4, 3, 0.0);
    let rewired = m.graph.with_edges((0..19).map(|v| (v, v + 1))).unwrap();
    let enc2 = StructuralEncoding::new(&rewired, 4).unwrap();
    let a = forward(&m.params, &m.enc, &m.x, &SEQ, Mode::Eval).unwrap();
    let b = forward(&m.params, &enc2, &m.x, &SEQ, Mode::Eval).unwrap();
    assert_eq!(a, b);

    let m = tiny_model(4, 3, 1.0);
    let a = forward(&m.params, &m.enc, &m.x, &SEQ, Mode::Eval).unwrap();
    let b = forward(&m.params, &enc2, &m.x, &SEQ, Mode::Eval).unwrap();
    assert_ne!(a, b);
}

#[test]
fn uniform_bias_shift_leaves_attention_unchanged() {
    let mut r = rng(5);
    let (q, k, v) = (random_matrix(4, 4, 1.0, &mut r), random_matrix(4, 4, 1.0, &mut r), random_matrix(4, 4, 1.0, &mut r));
    let tables = Arc::new(BiasTables {
        batch: 1,
        orders: 1,
        len: 4,
        alphas: vec![1.0; 16],
    });
    let mut t = Tape::eval();
    let (qv, kv, vv) = (t.constant(q), t.constant(k), t.constant(v));
    let plain = t.attention(qv, kv, vv, None, 2, 4).unwrap();
    let w = t.constant(Matrix::from_rows(&[[3.5], [-2.0]]).unwrap());
    let bias = t.mix_bias(w, tables).unwrap();
    let shifted = t.attention(qv, kv, vv, Some(bias), 2, 4).unwrap();
    assert!(t.value(plain).max_abs_diff(t.value(shifted)) < 1e-12);
}

#[test]
fn eval_is_deterministic_and_train_uses_dropout() {
    let m = tiny_model(6, 3, 1.0);
    let a = forward(&m.params, &m.enc, &m.x, &SEQ, Mode::Eval).unwrap();
    assert_eq!(a, forward(&m.params, &m.enc, &m.x, &SEQ, Mode::Eval).unwrap());
    let t1 = forward(&m.params, &m.enc, &m.x, &SEQ, Mode::Train(1)).unwrap();
    assert_eq!(t1, forward(&m.params, &m.enc, &m.x, &SEQ, Mode::Train(1)).unwrap());
    assert_ne!(t1, forward(&m.params, &m.enc, &m.x, &SEQ, Mode::Train(2)).unwrap());
    assert_ne!(t1, a);
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for seed in 0..3 {
        let m = tiny_model(seed, 3, 1.0);
        for mode in [Mode::Eval, Mode::Train(seed)] {
            let report = check_param_gradients(&m.params.store, 1e-5, mode, model_loss(&m)).unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed} {mode:?}: {report:?}");
        }
    }
}

#[test]
fn identical_copies_ensemble_to_a_single_forward() {
    let m = tiny_model(7, 3, 1.0);
    let projected = m.params.project_all(&m.x).unwrap();
    let seq = SubgraphSequence {
        target: 3,
        nodes: SEQ.to_vec(),
    };
    let single = softmax(&forward(&m.params, &m.enc, &m.x, &SEQ, Mode::Eval).unwrap());
    let (_, probs) = ensemble_predict(&m.params, &m.enc, &projected, &vec![seq; 4]).unwrap();
    for (a, b) in single.iter().zip(&probs) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_class_predicts_certainty() {
    let m = tiny_model(8, 1, 0.0);
    let p = softmax(&forward(&m.params, &m.enc, &m.x, &SEQ, Mode::Eval).unwrap());
    assert_eq!(p, vec![1.0]);
}

#[test]
fn unknown_token_is_rejected() {
    let m = tiny_model(9, 3, 0.0);
    assert!(forward(&m.params, &m.enc, &m.x, &[0, 25], Mode::Eval).is_err());
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let m = tiny_model(10, 3, 1.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    m.params.save(&path).unwrap();
    let loaded = ModelParams::load(&path).unwrap();
    assert_eq!(loaded, m.params);
    assert_eq!(
        forward(&loaded, &m.enc, &m.x, &SEQ, Mode::Eval).unwrap(),
        forward(&m.params, &m.enc, &m.x, &SEQ, Mode::Eval).unwrap()
    );
}
