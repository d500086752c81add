use super::Score;
use crate::error::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-6;
const CLIP: f64 = 1e-15;

/// Checks that `probs` is an `N × C` row-stochastic matrix matching `labels`
/// and returns `C`.
pub fn check_probabilities(probs: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if probs.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} probability rows but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let Some(first) = probs.first() else {
        return Err(Error::Usage("no samples to score".into()));
    };
    let c = first.len();
    if c < 2 {
        return Err(Error::Input(
            "probability rows need at least 2 classes".into(),
        ));
    }
    for (i, (row, &l)) in probs.iter().zip(labels).enumerate() {
        if row.len() != c {
            return Err(Error::Input(format!(
                "row {i} has {} columns, expected {c}",
                row.len()
            )));
        }
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Input(format!(
                "row {i} holds a negative or non-finite probability"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Input(format!("row {i} sums to {s}, not 1")));
        }
        if l >= c {
            return Err(Error::Index {
                what: "label",
                index: l,
                bound: c,
            });
        }
    }
    Ok(c)
}

/// One-vs-rest ROC AUC via the Mann–Whitney statistic; ties count ½.
/// `None` when the class lacks positives or negatives.
pub fn roc_auc_class(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Midranks, 1-based.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the precision–recall curve for one class: one point per
/// distinct score threshold (descending), joined by trapezoids, starting at
/// recall 0 with the precision of the highest threshold.
pub fn pr_auc_class(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 || n_pos == positive.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev: Option<(f64, f64)> = None;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        let (r0, p0) = prev.unwrap_or((0.0, precision));
        area += (recall - r0) * (precision + p0) / 2.0;
        prev = Some((recall, precision));
    }
    Some(area)
}

fn macro_over_classes(
    name: &str,
    probs: &[Vec<f64>],
    labels: &[usize],
    per_class: fn(&[f64], &[bool]) -> Option<f64>,
) -> Result<Score> {
    let c = check_probabilities(probs, labels)?;
    let mut flags = Vec::new();
    let mut values = Vec::with_capacity(c);
    for class in 0..c {
        let scores: Vec<f64> = probs.iter().map(|r| r[class]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        match per_class(&scores, &positive) {
            Some(v) => values.push(v),
            None => flags.push(format!(
                "{name}: class {class} lacks positives or negatives; excluded"
            )),
        }
    }
    if values.is_empty() {
        flags.push(format!("{name}: no class has both outcomes; reported 0"));
        return Ok(Score { value: 0.0, flags });
    }
    Ok(Score {
        value: values.iter().sum::<f64>() / values.len() as f64,
        flags,
    })
}

/// Macro-averaged one-vs-rest ROC AUC over classes with both outcomes present.
pub fn roc_auc_macro(probs: &[Vec<f64>], labels: &[usize]) -> Result<Score> {
    macro_over_classes("roc_auc", probs, labels, roc_auc_class)
}

pub fn pr_auc_macro(probs: &[Vec<f64>], labels: &[usize]) -> Result<Score> {
    macro_over_classes("pr_auc", probs, labels, pr_auc_class)
}

/// Mean negative log probability of the true class, clipped to
/// `[1e-15, 1 − 1e-15]`.
pub fn log_loss(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_probabilities(probs, labels)?;
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(row, &l)| -row[l].clamp(CLIP, 1.0 - CLIP).ln())
        .sum();
    Ok(sum / probs.len() as f64)
}

/// Squared distance to the one-hot target, averaged over samples and
/// divided by `C`. For two classes this is the usual `(p − y)²` mean.
pub fn brier_score(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let c = check_probabilities(probs, labels)?;
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(row, &l)| {
            row.iter()
                .enumerate()
                .map(|(k, &p)| {
                    let y = if k == l { 1.0 } else { 0.0 };
                    (p - y) * (p - y)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(sum / (probs.len() * c) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(p1: &[f64]) -> Vec<Vec<f64>> {
        p1.iter().map(|&p| vec![1.0 - p, p]).collect()
    }

    #[test]
    fn separated_scores() {
        let probs = binary(&[0.1, 0.2, 0.8, 0.9]);
        let labels = [0, 0, 1, 1];
        assert_eq!(roc_auc_macro(&probs, &labels).unwrap().value, 1.0);
        assert_eq!(pr_auc_macro(&probs, &labels).unwrap().value, 1.0);
    }

    #[test]
    fn constant_scores() {
        let probs = binary(&[0.5; 4]);
        let labels = [0, 1, 1, 1];
        assert_eq!(roc_auc_macro(&probs, &labels).unwrap().value, 0.5);
        let scores = [0.5; 4];
        let pos = [false, true, true, true];
        assert_eq!(pr_auc_class(&scores, &pos), Some(0.75));
    }

    #[test]
    fn missing_outcome_is_excluded() {
        let probs = vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.3, 0.5]];
        let s = roc_auc_macro(&probs, &[0, 2]).unwrap();
        assert_eq!(s.value, 1.0);
        assert_eq!(s.flags.len(), 1);
    }

    #[test]
    fn log_loss_cases() {
        let perfect = binary(&[1.0, 0.0]);
        assert!(log_loss(&perfect, &[1, 0]).unwrap() <= 1e-14);
        let uniform = vec![vec![0.25; 4]; 3];
        assert!((log_loss(&uniform, &[0, 1, 3]).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn brier_cases() {
        assert_eq!(brier_score(&binary(&[1.0, 0.0]), &[1, 0]).unwrap(), 0.0);
        assert_eq!(
            brier_score(&binary(&[0.5, 0.5, 0.5]), &[1, 0, 1]).unwrap(),
            0.25
        );
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(log_loss(&[vec![0.5, 0.6]], &[0]).is_err());
        assert!(log_loss(&[vec![0.5, 0.5]], &[2]).is_err());
        assert!(log_loss(&[], &[]).is_err());
    }
}
