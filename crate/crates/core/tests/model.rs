mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vulnclf::model::{parameter_count, rope_rotate, Model, ModelConfig};
use vulnclf::tensor::Tensor;

#[test]
fn finite_difference_gradients_two_layer_d16() {
    let (mut model, batch, pad) = gradcheck_setup();
    let report = gradient_check(&mut model, &batch, pad, 1e-5);
    assert_eq!(report.len(), model.params().len());
    for (name, err) in &report {
        assert!(*err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn finite_difference_gradients_multi_head_kv() {
    let mut cfg = toy_config(32, 1, 8, 2, 2);
    cfg.initializer_range = 0.3;
    let mut model = Model::init(cfg).unwrap();
    let batch = vec![
        vulnclf::training::Example {
            seq: left_padded(&[1, 2, 3], 4, 0),
            label: 0,
        },
        vulnclf::training::Example {
            seq: left_padded(&[4, 5, 6, 7], 4, 0),
            label: 1,
        },
    ];
    for (name, err) in gradient_check(&mut model, &batch, 0, 1e-5) {
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

/// Parameter total written out term by term from the architecture.
fn analytic_count(c: &ModelConfig) -> u64 {
    let (v, d, i, l) = (
        c.vocab_size as u64,
        c.hidden_size as u64,
        c.intermediate_size as u64,
        c.num_layers as u64,
    );
    let kv = (c.num_kv_heads * c.hidden_size / c.num_heads) as u64;
    let attention = d * d + 2 * d * kv + d * d;
    let mlp = 2 * d * i;
    let norms = 2 * 2 * d;
    let head = d * c.num_labels as u64 + c.num_labels as u64;
    v * d + l * (attention + mlp + norms) + 2 * d + head
}

#[test]
fn reference_configuration_budget() {
    let cfg = ModelConfig::default();
    assert_eq!(
        (
            cfg.vocab_size,
            cfg.hidden_size,
            cfg.num_layers,
            cfg.intermediate_size,
            cfg.num_kv_heads
        ),
        (65024, 768, 12, 3072, 1)
    );
    let n = parameter_count(&cfg);
    assert_eq!(n, analytic_count(&cfg));
    assert!((1.18e8..=1.24e8).contains(&(n as f64)), "{n}");
}

#[test]
fn initialized_model_matches_count() {
    let cfg = toy_config(50, 3, 12, 3, 1);
    let m = Model::init(cfg.clone()).unwrap();
    assert_eq!(m.num_parameters(), parameter_count(&cfg));
    assert_eq!(m.num_parameters(), analytic_count(&cfg));
}

fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

fn rotate_rows(rows: &[Vec<f64>], positions: &[usize], head_dim: usize) -> Vec<Vec<f64>> {
    let cols = rows[0].len();
    let t = Tensor::matrix(rows.len(), cols, rows.concat()).unwrap();
    let (q, _) = rope_rotate(&t, &t, positions, head_dim, 10000.0).unwrap();
    (0..rows.len()).map(|r| q.row(r).to_vec()).collect()
}

#[test]
fn rope_thousand_trials() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let head_dim = 2 * rng.random_range(1..=8);
        let heads = rng.random_range(1..=3);
        let rows = random_rows(&mut rng, 2, head_dim * heads);
        let m = rng.random_range(0..512);
        let n = rng.random_range(0..512);
        let s = rng.random_range(0..512);

        // Position zero is the identity, bit for bit.
        assert_eq!(rotate_rows(&rows, &[0, 0], head_dim), rows);

        let at = rotate_rows(&rows, &[m, n], head_dim);
        let shifted = rotate_rows(&rows, &[m + s, n + s], head_dim);
        for h in 0..heads {
            let span = h * head_dim..(h + 1) * head_dim;
            let (q, k) = (&rows[0][span.clone()], &rows[1][span.clone()]);
            let (qm, kn) = (&at[0][span.clone()], &at[1][span.clone()]);
            assert!((norm(qm) - norm(q)).abs() < 1e-12);
            assert!((norm(kn) - norm(k)).abs() < 1e-12);
            let expect = rotate_reference(q, m, 10000.0);
            assert!(expect.iter().zip(qm).all(|(a, b)| (a - b).abs() < 1e-12));
            let d1 = dot(qm, kn);
            let d2 = dot(&shifted[0][span.clone()], &shifted[1][span]);
            assert!((d1 - d2).abs() < 1e-9, "{d1} vs {d2}");
        }
    }
}

#[test]
fn changing_a_token_never_affects_earlier_positions() {
    let cfg = toy_config(40, 2, 16, 4, 1);
    let model = Model::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let len = 8;
        let ids: Vec<u32> = (0..len).map(|_| rng.random_range(1..40)).collect();
        let t = rng.random_range(0..len);
        let mut changed = ids.clone();
        changed[t] = (changed[t] % 39) + 1;
        let a = model.hidden_states(&[left_padded(&ids, len, 0)]).unwrap();
        let b = model
            .hidden_states(&[left_padded(&changed, len, 0)])
            .unwrap();
        for r in 0..t {
            assert_eq!(a.row(r), b.row(r), "position {r} moved after editing {t}");
        }
    }
}

#[test]
fn left_padding_does_not_change_logits() {
    let cfg = toy_config(40, 2, 16, 4, 1);
    let model = Model::init(cfg).unwrap();
    let ids = [5, 9, 13, 2, 7];
    let short = model.logits(&[left_padded(&ids, 5, 0)]).unwrap();
    for extra in [1, 3, 8] {
        let long = model.logits(&[left_padded(&ids, 5 + extra, 0)]).unwrap();
        for (a, b) in short.data().iter().zip(long.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b} with {extra} pads");
        }
    }
}

#[test]
fn batching_matches_single_inference() {
    let model = Model::init(toy_config(40, 2, 16, 4, 1)).unwrap();
    let a = left_padded(&[3, 4, 5, 6, 7, 8], 6, 0);
    let b = left_padded(&[9, 10], 6, 0);
    let both = model.logits(&[a.clone(), b.clone()]).unwrap();
    let only_b = model.logits(&[left_padded(&[9, 10], 2, 0)]).unwrap();
    let only_a = model.logits(&[a]).unwrap();
    for k in 0..2 {
        assert!((both.row(0)[k] - only_a.row(0)[k]).abs() < 1e-9);
        assert!((both.row(1)[k] - only_b.row(0)[k]).abs() < 1e-9);
    }
}

#[test]
fn eval_forward_is_bitwise_deterministic() {
    let model = Model::init(toy_config(40, 2, 16, 4, 1)).unwrap();
    let seq = left_padded(&[1, 2, 3, 4], 6, 0);
    let a = model.logits(std::slice::from_ref(&seq)).unwrap();
    let b = model.logits(&[seq]).unwrap();
    assert_eq!(a.data(), b.data());
    let again = Model::init(toy_config(40, 2, 16, 4, 1)).unwrap();
    assert_eq!(again.params(), model.params());
}

#[test]
fn checkpoint_round_trip_preserves_logits() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::init(toy_config(40, 1, 8, 2, 1)).unwrap();
    let path = dir.path().join("m.ckpt");
    vulnclf::model::save_checkpoint(&model, &path).unwrap();
    let back = vulnclf::model::load_checkpoint(&path).unwrap();
    let seq = left_padded(&[1, 2, 3], 4, 0);
    assert_eq!(
        model.logits(std::slice::from_ref(&seq)).unwrap().data(),
        back.logits(&[seq]).unwrap().data()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn probabilities_are_a_distribution(ids in prop::collection::vec(1u32..40, 1..10)) {
        let model = Model::init(toy_config(40, 1, 8, 2, 1)).unwrap();
        let logits = model.logits(&[left_padded(&ids, ids.len(), 0)]).unwrap();
        let p = vulnclf::model::predict(&logits);
        let s: f64 = p.probabilities[0].iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(p.probabilities[0].iter().all(|&x| x > 0.0 && x < 1.0));
        prop_assert!(p.sigmoid_scores[0].iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
