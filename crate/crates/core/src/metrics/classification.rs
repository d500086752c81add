use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, Score};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Exact fraction `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Whether `self + other == 1` holds exactly.
    pub fn complements(self, other: Ratio) -> bool {
        self.den == other.den && self.num + other.num == self.den
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassScores>,
    pub accuracy: f64,
    pub accuracy_exact: Ratio,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub micro_avg: Averages,
    pub total: u64,
    pub flags: Vec<String>,
}

fn safe_div(num: f64, den: f64, flag: impl FnOnce() -> String, flags: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        flags.push(flag());
        0.0
    } else {
        num / den
    }
}

fn harmonic(p: f64, r: f64, flag: impl FnOnce() -> String, flags: &mut Vec<String>) -> f64 {
    safe_div(2.0 * p * r, p + r, flag, flags)
}

fn nonempty(cm: &ConfusionMatrix) -> Result<u64> {
    match cm.total() {
        0 => Err(Error::Usage("confusion matrix is empty".into())),
        n => Ok(n),
    }
}

/// Per-class precision, recall, F1 and support with macro, weighted and
/// micro averages.
pub fn report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = nonempty(cm)?;
    let mut flags = Vec::new();
    let mut classes = Vec::with_capacity(cm.num_classes());
    for (i, name) in cm.classes().iter().enumerate() {
        let tp = cm.tp(i) as f64;
        let precision = safe_div(
            tp,
            cm.predicted(i) as f64,
            || format!("precision undefined for class {name}; reported 0"),
            &mut flags,
        );
        let recall = safe_div(
            tp,
            cm.support(i) as f64,
            || format!("recall undefined for class {name}; reported 0"),
            &mut flags,
        );
        let f1 = harmonic(
            precision,
            recall,
            || format!("f1 undefined for class {name}; reported 0"),
            &mut flags,
        );
        classes.push(ClassScores {
            class: name.clone(),
            precision,
            recall,
            f1,
            support: cm.support(i),
        });
    }
    let c = classes.len() as f64;
    let mean = |f: fn(&ClassScores) -> f64| classes.iter().map(f).sum::<f64>() / c;
    let macro_avg = Averages {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
    };
    let weighted = |f: fn(&ClassScores) -> f64| {
        classes.iter().map(|s| f(s) * s.support as f64).sum::<f64>() / total as f64
    };
    let weighted_avg = Averages {
        precision: weighted(|s| s.precision),
        recall: weighted(|s| s.recall),
        f1: weighted(|s| s.f1),
    };
    let accuracy_exact = Ratio {
        num: cm.trace(),
        den: total,
    };
    let accuracy = accuracy_exact.value();
    // Single-label: pooled TP = trace, pooled FP = pooled FN = total − trace.
    let micro_avg = Averages {
        precision: accuracy,
        recall: accuracy,
        f1: accuracy,
    };
    Ok(ClassificationReport {
        classes,
        accuracy,
        accuracy_exact,
        macro_avg,
        weighted_avg,
        micro_avg,
        total,
        flags,
    })
}

pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<Score> {
    let total = nonempty(cm)? as f64;
    let p_o = cm.trace() as f64 / total;
    let p_e = (0..cm.num_classes())
        .map(|i| cm.support(i) as f64 * cm.predicted(i) as f64)
        .sum::<f64>()
        / (total * total);
    if p_e == 1.0 {
        let value = if p_o == 1.0 { 1.0 } else { 0.0 };
        return Ok(Score::flagged(
            value,
            "cohen_kappa: chance agreement is 1 (single class); defined by convention",
        ));
    }
    Ok(Score::new((p_o - p_e) / (1.0 - p_e)))
}

/// Matthews correlation for a 2×2 matrix with class 1 as positive.
pub fn mcc(cm: &ConfusionMatrix) -> Result<Score> {
    if cm.num_classes() != 2 {
        return Err(Error::Usage(format!(
            "mcc needs a binary confusion matrix, got {} classes",
            cm.num_classes()
        )));
    }
    let [tn, fp, fn_, tp] = [
        cm.counts()[0][0],
        cm.counts()[0][1],
        cm.counts()[1][0],
        cm.counts()[1][1],
    ];
    let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if factors.contains(&0) {
        return Ok(Score::flagged(
            0.0,
            "mcc: a marginal total is zero; reported 0",
        ));
    }
    let num = tp as i128 * tn as i128 - fp as i128 * fn_ as i128;
    let den = (factors[0] as f64 * factors[1] as f64).sqrt()
        * (factors[2] as f64 * factors[3] as f64).sqrt();
    Ok(Score::new(num as f64 / den))
}

/// Mean one-vs-rest specificity `TN_i / (TN_i + FP_i)`.
pub fn specificity_macro(cm: &ConfusionMatrix) -> Result<Score> {
    nonempty(cm)?;
    let mut flags = Vec::new();
    let mut sum = 0.0;
    for (i, name) in cm.classes().iter().enumerate() {
        let (tn, fp) = (cm.tn(i) as f64, cm.fp(i) as f64);
        sum += safe_div(
            tn,
            tn + fp,
            || format!("specificity undefined for class {name}; reported 0"),
            &mut flags,
        );
    }
    Ok(Score {
        value: sum / cm.num_classes() as f64,
        flags,
    })
}

/// Exact fraction of mismatched labels.
pub fn hamming_ratio(preds: &[usize], labels: &[usize]) -> Result<Ratio> {
    if preds.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Usage("no predictions to score".into()));
    }
    let wrong = preds.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(Ratio {
        num: wrong as u64,
        den: preds.len() as u64,
    })
}

pub fn hamming_loss(preds: &[usize], labels: &[usize]) -> Result<f64> {
    hamming_ratio(preds, labels).map(Ratio::value)
}
