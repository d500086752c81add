//! Independent reference implementations shared by the integration and
//! acceptance tests. Nothing here calls into the code under test except to
//! build inputs.
#![allow(
    dead_code,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop
)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vulnclf::model::{Model, ModelConfig};
use vulnclf::tokenizer::TokenSequence;
use vulnclf::training::{loss_and_grads, Example};

// ---------------------------------------------------------------- metrics

/// A random scoring problem: labels, hard predictions and probability rows.
#[derive(Clone, Debug)]
pub struct Instance {
    pub c: usize,
    pub labels: Vec<usize>,
    pub preds: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
}

/// N in 1..=50, C in 2..=12. Scores are coarse so ties are common.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(1..=50);
    let c = rng.random_range(2..=12);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let preds = labels
        .iter()
        .map(|&l| {
            if rng.random_bool(0.5) {
                l
            } else {
                rng.random_range(0..c)
            }
        })
        .collect();
    let probs = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..c).map(|_| rng.random_range(1..=10) as f64).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    Instance {
        c,
        labels,
        preds,
        probs,
    }
}

pub fn count(preds: &[usize], labels: &[usize], f: impl Fn(usize, usize) -> bool) -> f64 {
    preds.iter().zip(labels).filter(|(&p, &l)| f(p, l)).count() as f64
}

fn div0(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    count(preds, labels, |p, l| p == l) / preds.len() as f64
}

pub fn hamming(preds: &[usize], labels: &[usize]) -> f64 {
    count(preds, labels, |p, l| p != l) / preds.len() as f64
}

/// (precision, recall, f1, support) for class `k`, counting samples.
pub fn per_class(preds: &[usize], labels: &[usize], k: usize) -> (f64, f64, f64, f64) {
    let tp = count(preds, labels, |p, l| p == k && l == k);
    let predicted = count(preds, labels, |p, _| p == k);
    let support = count(preds, labels, |_, l| l == k);
    let p = div0(tp, predicted);
    let r = div0(tp, support);
    (p, r, div0(2.0 * p * r, p + r), support)
}

/// Macro and weighted (precision, recall, f1).
pub fn averages(preds: &[usize], labels: &[usize], c: usize) -> ([f64; 3], [f64; 3]) {
    let n = preds.len() as f64;
    let mut mac = [0.0; 3];
    let mut wei = [0.0; 3];
    for k in 0..c {
        let (p, r, f, s) = per_class(preds, labels, k);
        for (i, v) in [p, r, f].into_iter().enumerate() {
            mac[i] += v / c as f64;
            wei[i] += v * s / n;
        }
    }
    (mac, wei)
}

pub fn kappa(preds: &[usize], labels: &[usize], c: usize) -> f64 {
    let n = preds.len() as f64;
    let po = accuracy(preds, labels);
    let pe: f64 = (0..c)
        .map(|k| count(preds, labels, |_, l| l == k) * count(preds, labels, |p, _| p == k))
        .sum::<f64>()
        / (n * n);
    if pe == 1.0 {
        return if po == 1.0 { 1.0 } else { 0.0 };
    }
    (po - pe) / (1.0 - pe)
}

/// Pearson correlation of the two 0/1 indicator vectors.
pub fn pearson_mcc(preds: &[usize], labels: &[usize]) -> f64 {
    let x: Vec<f64> = preds.iter().map(|&p| (p == 1) as u8 as f64).collect();
    let y: Vec<f64> = labels.iter().map(|&l| (l == 1) as u8 as f64).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx.sqrt() * vy.sqrt())
    }
}

pub fn specificity(preds: &[usize], labels: &[usize], c: usize) -> f64 {
    (0..c)
        .map(|k| {
            let tn = count(preds, labels, |p, l| p != k && l != k);
            let fp = count(preds, labels, |p, l| p == k && l != k);
            div0(tn, tn + fp)
        })
        .sum::<f64>()
        / c as f64
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn pairwise_auc(scores: &[f64], pos: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Step through every distinct threshold, counting predictions at or
/// above it, and integrate precision over recall with trapezoids from
/// (0, first precision).
pub fn threshold_pr_auc(scores: &[f64], pos: &[bool]) -> Option<f64> {
    let n_pos = pos.iter().filter(|&&p| p).count() as f64;
    if n_pos == 0.0 || n_pos == pos.len() as f64 {
        return None;
    }
    let mut th: Vec<f64> = scores.to_vec();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let mut points = Vec::new();
    for t in th {
        let tp = scores
            .iter()
            .zip(pos)
            .filter(|(&s, &p)| s >= t && p)
            .count() as f64;
        let all = scores.iter().filter(|&&s| s >= t).count() as f64;
        points.push((tp / n_pos, tp / all));
    }
    let mut area = 0.0;
    let mut prev = (0.0, points[0].1);
    for &(r, p) in &points {
        area += (r - prev.0) * (p + prev.1) / 2.0;
        prev = (r, p);
    }
    Some(area)
}

pub fn macro_auc(
    probs: &[Vec<f64>],
    labels: &[usize],
    per: fn(&[f64], &[bool]) -> Option<f64>,
) -> f64 {
    let c = probs[0].len();
    let vals: Vec<f64> = (0..c)
        .filter_map(|k| {
            let s: Vec<f64> = probs.iter().map(|r| r[k]).collect();
            let p: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            per(&s, &p)
        })
        .collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

pub fn logloss(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    -probs
        .iter()
        .zip(labels)
        .map(|(r, &l)| r[l].clamp(1e-15, 1.0 - 1e-15).ln())
        .sum::<f64>()
        / labels.len() as f64
}

pub fn brier(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let c = probs[0].len() as f64;
    probs
        .iter()
        .zip(labels)
        .map(|(r, &l)| {
            r.iter()
                .enumerate()
                .map(|(k, p)| (p - (k == l) as u8 as f64).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / (labels.len() as f64 * c)
}

/// Expands confusion counts (rows = truth) into label/prediction vectors.
pub fn expand(counts: &[Vec<u64>]) -> (Vec<usize>, Vec<usize>) {
    let (mut preds, mut labels) = (Vec::new(), Vec::new());
    for (t, row) in counts.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            labels.extend(std::iter::repeat_n(t, n as usize));
            preds.extend(std::iter::repeat_n(p, n as usize));
        }
    }
    (preds, labels)
}

// ------------------------------------------------------------- gradients

pub fn toy_config(vocab: usize, layers: usize, d: usize, heads: usize, kv: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        hidden_size: d,
        num_layers: layers,
        num_heads: heads,
        num_kv_heads: kv,
        intermediate_size: 4 * d,
        max_sequence_length: 16,
        num_labels: 2,
        attention_dropout: 0.0,
        hidden_dropout: 0.0,
        ..ModelConfig::default()
    }
}

pub fn left_padded(ids: &[u32], len: usize, pad: u32) -> TokenSequence {
    let pads = len - ids.len();
    TokenSequence {
        ids: std::iter::repeat_n(pad, pads)
            .chain(ids.iter().copied())
            .collect(),
        attention_mask: std::iter::repeat_n(0, pads)
            .chain(std::iter::repeat_n(1, ids.len()))
            .collect(),
        true_length: ids.len(),
    }
}

/// Per parameter group: `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
/// with central differences of step `h` on the eval-mode mean loss.
pub fn gradient_check(
    model: &mut Model,
    batch: &[Example],
    pad: u32,
    h: f64,
) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, analytic) = loss_and_grads(model, batch, pad, false, &mut rng).expect("backward");
    let mut out = Vec::new();
    for pi in 0..model.params().len() {
        let n = model.params()[pi].tensor.numel();
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = model.params()[pi].tensor.data()[j];
            model.params_mut()[pi].tensor.data_mut()[j] = orig + h;
            let up = loss_and_grads(model, batch, pad, false, &mut rng)
                .unwrap()
                .0;
            model.params_mut()[pi].tensor.data_mut()[j] = orig - h;
            let down = loss_and_grads(model, batch, pad, false, &mut rng)
                .unwrap()
                .0;
            model.params_mut()[pi].tensor.data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let a = analytic[pi].as_ref().expect("gradient");
        let diff = a
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = a
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|x| x * x).sum::<f64>().sqrt())
            .max(1e-12);
        out.push((model.params()[pi].name.clone(), diff / scale));
    }
    out
}

/// Two left-padded sequences of different lengths with opposite labels.
pub fn gradcheck_setup() -> (Model, Vec<Example>, u32) {
    let mut cfg = toy_config(32, 2, 16, 2, 1);
    cfg.initializer_range = 0.3;
    cfg.seed = 11;
    let model = Model::init(cfg).unwrap();
    let pad = 0;
    let batch = vec![
        Example {
            seq: left_padded(&[3, 7, 7, 12, 5], 6, pad),
            label: 1,
        },
        Example {
            seq: left_padded(&[9, 4, 1], 6, pad),
            label: 0,
        },
    ];
    (model, batch, pad)
}

// ------------------------------------------------------------------ rope

/// Rotates `x` (one head) at position `m` by the textbook formula.
pub fn rotate_reference(x: &[f64], m: usize, base: f64) -> Vec<f64> {
    let d = x.len();
    let mut out = x.to_vec();
    for i in 0..d / 2 {
        let theta = m as f64 * base.powf(-2.0 * i as f64 / d as f64);
        let (s, c) = theta.sin_cos();
        out[2 * i] = x[2 * i] * c - x[2 * i + 1] * s;
        out[2 * i + 1] = x[2 * i] * s + x[2 * i + 1] * c;
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Tokenizer plus encoded examples for `n` synthetic snippets.
pub fn synthetic_examples(n: usize, seed: u64) -> (vulnclf::tokenizer::Vocabulary, Vec<Example>) {
    use vulnclf::tokenizer::{train_bpe, SpecialRegistry};
    let corpus = vulnclf::training::synthetic_corpus(n, seed);
    let vocab = train_bpe(
        corpus.iter().map(|(t, _)| t.as_str()),
        1024,
        &SpecialRegistry::builtin(),
    )
    .unwrap();
    let examples = vulnclf::training::encode_examples(
        &vocab,
        corpus.iter().map(|(t, l)| (t.as_str(), *l)),
        64,
    )
    .unwrap();
    (vocab, examples)
}

/// Two layers, width 64, sized for the synthetic corpus.
pub fn overfit_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        max_sequence_length: 64,
        ..toy_config(vocab, 2, 64, 4, 1)
    }
}

/// 200-epoch budget at lr 2e-3 that stops once training accuracy reaches 0.99.
pub fn overfit_train_config() -> vulnclf::training::TrainConfig {
    vulnclf::training::TrainConfig {
        learning_rate: 2e-3,
        max_epochs: 200,
        early_stop_patience: 200,
        batch_size: 8,
        seed: 7,
        max_seq_len: 64,
        validation_fraction: 0.0,
        target_train_accuracy: Some(0.99),
        ..Default::default()
    }
}

/// Reference early-stopping rule: halt once `patience` epochs pass without
/// a strictly lower loss. Returns (stop epoch, best epoch), 1-based.
pub fn early_stop_reference(losses: &[f64], patience: usize) -> (usize, usize) {
    let mut best = 0;
    for i in 1..losses.len() {
        if losses[i] < losses[best] {
            best = i;
        }
        if i - best == patience {
            return (i + 1, best + 1);
        }
    }
    (losses.len(), best + 1)
}

/// Compares every metric op against the brute-force references for one
/// instance (1e-9), plus the accuracy identities (1e-12). Returns the
/// mismatches; empty means agreement.
pub fn oracle_mismatches(inst: &Instance) -> Vec<String> {
    use vulnclf::metrics::*;
    let (p, l, c) = (&inst.preds, &inst.labels, inst.c);
    let mut bad = Vec::new();
    let mut check = |what: String, got: f64, want: f64, tol: f64| {
        if !((got - want).abs() <= tol) {
            bad.push(format!("{what}: {got} vs {want}"));
        }
    };
    let cm = confusion(p, l, c).unwrap();
    for t in 0..c {
        for q in 0..c {
            let n = count(p, l, |pp, ll| pp == q && ll == t);
            check(
                format!("confusion[{t}][{q}]"),
                cm.counts()[t][q] as f64,
                n,
                0.0,
            );
        }
    }
    let r = report(&cm).unwrap();
    check("accuracy".into(), r.accuracy, accuracy(p, l), 1e-9);
    for k in 0..c {
        let (pr, rc, f1, sup) = per_class(p, l, k);
        let got = &r.classes[k];
        check(format!("precision_{k}"), got.precision, pr, 1e-9);
        check(format!("recall_{k}"), got.recall, rc, 1e-9);
        check(format!("f1_{k}"), got.f1, f1, 1e-9);
        check(format!("support_{k}"), got.support as f64, sup, 0.0);
    }
    let (mac, wei) = averages(p, l, c);
    let rm = [r.macro_avg.precision, r.macro_avg.recall, r.macro_avg.f1];
    let rw = [
        r.weighted_avg.precision,
        r.weighted_avg.recall,
        r.weighted_avg.f1,
    ];
    for i in 0..3 {
        check(format!("macro[{i}]"), rm[i], mac[i], 1e-9);
        check(format!("weighted[{i}]"), rw[i], wei[i], 1e-9);
    }
    check(
        "kappa".into(),
        cohen_kappa(&cm).unwrap().value,
        kappa(p, l, c),
        1e-9,
    );
    check(
        "specificity".into(),
        specificity_macro(&cm).unwrap().value,
        specificity(p, l, c),
        1e-9,
    );
    let hl = hamming_loss(p, l).unwrap();
    check("hamming".into(), hl, hamming(p, l), 1e-9);

    let bp: Vec<usize> = p.iter().map(|&x| (x > 0) as usize).collect();
    let bl: Vec<usize> = l.iter().map(|&x| (x > 0) as usize).collect();
    let m = mcc(&confusion(&bp, &bl, 2).unwrap()).unwrap().value;
    check("mcc".into(), m, pearson_mcc(&bp, &bl), 1e-9);

    let roc = roc_auc_macro(&inst.probs, l).unwrap().value;
    check(
        "roc_auc".into(),
        roc,
        macro_auc(&inst.probs, l, pairwise_auc),
        1e-9,
    );
    let pr = pr_auc_macro(&inst.probs, l).unwrap().value;
    check(
        "pr_auc".into(),
        pr,
        macro_auc(&inst.probs, l, threshold_pr_auc),
        1e-9,
    );
    check(
        "log_loss".into(),
        log_loss(&inst.probs, l).unwrap(),
        logloss(&inst.probs, l),
        1e-9,
    );
    check(
        "brier".into(),
        brier_score(&inst.probs, l).unwrap(),
        brier(&inst.probs, l),
        1e-9,
    );

    check("accuracy = 1 - hamming".into(), r.accuracy, 1.0 - hl, 1e-12);
    check(
        "weighted recall = accuracy".into(),
        r.weighted_avg.recall,
        r.accuracy,
        1e-12,
    );
    bad
}

// ---------------------------------------------------------------- tokenizer

const FILLER: [&str; 12] = [
    "buf",
    "x1",
    "len",
    "0x7f",
    "42",
    "_tmp",
    "ptr",
    "é",
    "漢字",
    "\"%s\\n\"",
    "'\\0'",
    "@",
];
const GAPS: [&str; 5] = [" ", "  ", "\n", "\t", ""];

/// Random C-flavoured text: domain tokens, identifiers, literals and
/// non-ASCII text glued with assorted whitespace (sometimes none).
pub fn random_snippet(rng: &mut ChaCha8Rng, domain: &[String]) -> String {
    let n = rng.random_range(0..40);
    let mut s = String::new();
    for _ in 0..n {
        if rng.random_bool(0.5) {
            s.push_str(rand::seq::IndexedRandom::choose(domain, rng).unwrap());
        } else {
            s.push_str(rand::seq::IndexedRandom::choose(&FILLER[..], rng).unwrap());
        }
        s.push_str(rand::seq::IndexedRandom::choose(&GAPS[..], rng).unwrap());
    }
    s
}

pub fn domain_texts() -> Vec<String> {
    vulnclf::tokenizer::SpecialRegistry::builtin()
        .domain
        .into_iter()
        .map(|t| t.text)
        .collect()
}
