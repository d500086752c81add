mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vulnclf::metrics::*;

fn names(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("c{i}")).collect()
}

/// Table IV of the reference results (binary, FormAI test split).
const TABLE_IV: [(&str, f64); 15] = [
    ("precision_0", 0.89),
    ("recall_0", 0.84),
    ("f1_0", 0.86),
    ("precision_1", 0.95),
    ("recall_1", 0.97),
    ("f1_1", 0.96),
    ("accuracy", 0.94),
    ("macro_precision", 0.92),
    ("macro_recall", 0.90),
    ("macro_f1", 0.91),
    ("weighted_precision", 0.94),
    ("weighted_recall", 0.94),
    ("weighted_f1", 0.94),
    ("support_0", 4528.0),
    ("support_1", 15533.0),
];

#[test]
fn table_iv_from_confusion_counts() {
    let r = report(&ConfusionMatrix::binary(3788, 740, 483, 15050)).unwrap();
    let got = [
        r.classes[0].precision,
        r.classes[0].recall,
        r.classes[0].f1,
        r.classes[1].precision,
        r.classes[1].recall,
        r.classes[1].f1,
        r.accuracy,
        r.macro_avg.precision,
        r.macro_avg.recall,
        r.macro_avg.f1,
        r.weighted_avg.precision,
        r.weighted_avg.recall,
        r.weighted_avg.f1,
        r.classes[0].support as f64,
        r.classes[1].support as f64,
    ];
    for ((name, want), got) in TABLE_IV.iter().zip(got) {
        assert!((got - want).abs() <= 0.005, "{name}: {got} vs {want}");
    }
    assert_eq!(r.total, 20061);
}

#[test]
fn oracle_fixture_is_the_table_iv_matrix() {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/data/oracle_binary_predictions.csv"
    );
    let (labels, preds, probs) =
        vulnclf::cli::read_predictions(std::path::Path::new(path)).unwrap();
    assert!(probs.is_none());
    let cm = confusion(&preds, &labels, 2).unwrap();
    assert_eq!(cm.counts(), &[vec![3788, 740], vec![483, 15050]]);
}

#[test]
fn hundred_random_instances_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..100 {
        let inst = random_instance(&mut rng);
        let bad = oracle_mismatches(&inst);
        assert!(bad.is_empty(), "instance {i}: {bad:?}");
    }
}

#[test]
fn mcc_survives_huge_counts() {
    // Scaling every cell leaves MCC unchanged; the products here overflow
    // u64 and would lose precision in a naive f64 numerator.
    let base = ConfusionMatrix::binary(3788, 740, 483, 15050);
    let k = 400_000_000u64;
    let big = ConfusionMatrix::binary(3788 * k, 740 * k, 483 * k, 15050 * k);
    let (a, b) = (mcc(&base).unwrap().value, mcc(&big).unwrap().value);
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    let (preds, labels) = expand(base.counts());
    assert!((a - pearson_mcc(&preds, &labels)).abs() < 1e-12);
}

#[test]
fn zero_division_is_flagged_not_nan() {
    let r = MetricsReport::compute(&[0, 0], &[0, 0], None, &names(3)).unwrap();
    assert!(r.classes.iter().all(|c| c.f1.is_finite()));
    assert!(!r.flags.is_empty());
    assert_eq!(r.classes[1].precision, 0.0);
}

#[test]
fn report_json_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inst = random_instance(&mut rng);
    let r = MetricsReport::compute(&inst.preds, &inst.labels, Some(&inst.probs), &names(inst.c))
        .unwrap();
    let back: MetricsReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
}

proptest! {
    #[test]
    fn identities_hold(labels in prop::collection::vec(0usize..5, 1..60), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<usize> = labels.iter().map(|_| rand::Rng::random_range(&mut rng, 0..5)).collect();
        let r = MetricsReport::compute(&preds, &labels, None, &names(5)).unwrap();
        prop_assert!((r.accuracy + r.hamming_loss - 1.0).abs() < 1e-12);
        prop_assert!(r.accuracy_exact.complements(r.hamming_exact));
        prop_assert!((r.weighted_avg.recall - r.accuracy).abs() < 1e-12);
        prop_assert_eq!(r.micro_avg.f1, r.accuracy);
        prop_assert!(r.cohen_kappa <= r.accuracy + 1e-12);
    }

    #[test]
    fn permutation_invariant(pairs in prop::collection::vec((0usize..4, 0usize..4), 2..40), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = pairs.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let split = |v: &[(usize, usize)]| -> (Vec<usize>, Vec<usize>) { v.iter().copied().unzip() };
        let ((p1, l1), (p2, l2)) = (split(&pairs), split(&shuffled));
        let probs = |p: &[usize]| -> Vec<Vec<f64>> {
            p.iter().map(|&k| (0..4).map(|j| if j == k { 0.7 } else { 0.1 }).collect()).collect()
        };
        let a = MetricsReport::compute(&p1, &l1, Some(&probs(&p1)), &names(4)).unwrap();
        let b = MetricsReport::compute(&p2, &l2, Some(&probs(&p2)), &names(4)).unwrap();
        prop_assert_eq!(a.confusion.counts(), b.confusion.counts());
        prop_assert!((a.cohen_kappa - b.cohen_kappa).abs() < 1e-12);
        prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
        prop_assert!((a.roc_auc_macro.unwrap() - b.roc_auc_macro.unwrap()).abs() < 1e-12);
        prop_assert!((a.pr_auc_macro.unwrap() - b.pr_auc_macro.unwrap()).abs() < 1e-12);
        prop_assert!((a.log_loss.unwrap() - b.log_loss.unwrap()).abs() < 1e-12);
        prop_assert!((a.brier_score.unwrap() - b.brier_score.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mcc_flips_sign_with_inverted_predictions(cells in prop::array::uniform4(0u64..1000)) {
        let [tn, fp, fn_, tp] = cells;
        let a = mcc(&ConfusionMatrix::binary(tn, fp, fn_, tp)).unwrap().value;
        // Inverting predictions swaps the columns.
        let b = mcc(&ConfusionMatrix::binary(fp, tn, tp, fn_)).unwrap().value;
        prop_assert!((a + b).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_score_one(labels in prop::collection::vec(0usize..2, 2..40)) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let r = MetricsReport::compute(&labels, &labels, None, &names(2)).unwrap();
        prop_assert_eq!(r.accuracy, 1.0);
        prop_assert_eq!(r.mcc, Some(1.0));
        prop_assert_eq!(r.cohen_kappa, 1.0);
        prop_assert_eq!(r.macro_avg.f1, 1.0);
    }
}
