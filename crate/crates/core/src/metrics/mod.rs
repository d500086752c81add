//! Confusion matrices, classification reports and scoring rules.

mod classification;
mod confusion;
mod probabilistic;

use serde::{Deserialize, Serialize};

pub use classification::{
    cohen_kappa, hamming_loss, hamming_ratio, mcc, report, specificity_macro, Averages,
    ClassScores, ClassificationReport, Ratio,
};
pub use confusion::{confusion, ConfusionMatrix};
pub use probabilistic::{
    brier_score, check_probabilities, log_loss, pr_auc_class, pr_auc_macro, roc_auc_class,
    roc_auc_macro,
};

use crate::error::Result;

/// A metric value plus any conventions applied while computing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub flags: Vec<String>,
}

impl Score {
    pub fn new(value: f64) -> Self {
        Score {
            value,
            flags: Vec::new(),
        }
    }

    pub fn flagged(value: f64, flag: impl Into<String>) -> Self {
        Score {
            value,
            flags: vec![flag.into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub brier_normalization: String,
    pub pr_auc_estimator: String,
    pub roc_auc_estimator: String,
    pub zero_division: String,
    pub averages: Vec<String>,
}

impl Default for ReportMetadata {
    fn default() -> Self {
        ReportMetadata {
            brier_normalization: "sum of squared errors over classes divided by num_classes".into(),
            pr_auc_estimator:
                "trapezoid over distinct thresholds, macro over classes with both outcomes".into(),
            roc_auc_estimator: "Mann-Whitney rank statistic, ties count 1/2".into(),
            zero_division: "0 with a flag".into(),
            averages: vec!["macro".into(), "weighted".into(), "micro".into()],
        }
    }
}

/// Full evaluation summary. Probability-based fields are `None` when only
/// hard predictions were available; `mcc` is `None` for more than two classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassScores>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub micro_avg: Averages,
    pub cohen_kappa: f64,
    pub mcc: Option<f64>,
    pub roc_auc_macro: Option<f64>,
    pub pr_auc_macro: Option<f64>,
    pub specificity_macro: f64,
    pub log_loss: Option<f64>,
    pub brier_score: Option<f64>,
    pub hamming_loss: f64,
    pub accuracy_exact: Ratio,
    pub hamming_exact: Ratio,
    pub total: u64,
    pub confusion: ConfusionMatrix,
    pub flags: Vec<String>,
    pub metadata: ReportMetadata,
}

impl MetricsReport {
    /// Scores hard predictions, plus probability metrics when `probs` is given.
    pub fn compute(
        preds: &[usize],
        labels: &[usize],
        probs: Option<&[Vec<f64>]>,
        class_names: &[String],
    ) -> Result<Self> {
        let cm =
            confusion(preds, labels, class_names.len())?.with_class_names(class_names.to_vec())?;
        let base = report(&cm)?;
        let mut flags = base.flags.clone();
        let mut take = |s: Score| {
            flags.extend(s.flags);
            s.value
        };
        let kappa = take(cohen_kappa(&cm)?);
        let mcc_value = if cm.num_classes() == 2 {
            Some(take(mcc(&cm)?))
        } else {
            None
        };
        let specificity = take(specificity_macro(&cm)?);
        let (roc, pr, ll, brier) = match probs {
            Some(p) => (
                Some(take(roc_auc_macro(p, labels)?)),
                Some(take(pr_auc_macro(p, labels)?)),
                Some(log_loss(p, labels)?),
                Some(brier_score(p, labels)?),
            ),
            None => {
                flags.push(
                    "no probabilities supplied; roc_auc, pr_auc, log_loss and brier omitted".into(),
                );
                (None, None, None, None)
            }
        };
        if cm.num_classes() != 2 {
            flags.push("mcc omitted for multiclass evaluation".into());
        }
        let hamming_exact = hamming_ratio(preds, labels)?;
        Ok(MetricsReport {
            classes: base.classes,
            accuracy: base.accuracy,
            macro_avg: base.macro_avg,
            weighted_avg: base.weighted_avg,
            micro_avg: base.micro_avg,
            cohen_kappa: kappa,
            mcc: mcc_value,
            roc_auc_macro: roc,
            pr_auc_macro: pr,
            specificity_macro: specificity,
            log_loss: ll,
            brier_score: brier,
            hamming_loss: hamming_exact.value(),
            accuracy_exact: base.accuracy_exact,
            hamming_exact,
            total: base.total,
            confusion: cm,
            flags,
            metadata: ReportMetadata::default(),
        })
    }

    /// Scores probability rows, predicting the arg-max (lowest index on ties).
    pub fn from_probabilities(
        probs: &[Vec<f64>],
        labels: &[usize],
        class_names: &[String],
    ) -> Result<Self> {
        check_probabilities(probs, labels)?;
        let preds: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
        Self::compute(&preds, labels, Some(probs), class_names)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Classification report in the familiar precision/recall/f1/support
    /// layout, followed by the extra metrics.
    pub fn to_text(&self) -> String {
        let w = self
            .classes
            .iter()
            .map(|c| c.class.len())
            .max()
            .unwrap_or(0)
            .max("weighted avg".len());
        let mut out = format!(
            "{:>w$} {:>9} {:>9} {:>9} {:>9}\n\n",
            "", "precision", "recall", "f1-score", "support"
        );
        for c in &self.classes {
            out.push_str(&format!(
                "{:>w$} {:>9.2} {:>9.2} {:>9.2} {:>9}\n",
                c.class, c.precision, c.recall, c.f1, c.support
            ));
        }
        out.push('\n');
        out.push_str(&format!(
            "{:>w$} {:>9} {:>9} {:>9.2} {:>9}\n",
            "accuracy", "", "", self.accuracy, self.total
        ));
        for (name, a) in [
            ("macro avg", self.macro_avg),
            ("weighted avg", self.weighted_avg),
            ("micro avg", self.micro_avg),
        ] {
            out.push_str(&format!(
                "{:>w$} {:>9.2} {:>9.2} {:>9.2} {:>9}\n",
                name, a.precision, a.recall, a.f1, self.total
            ));
        }
        out.push('\n');
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        out.push_str(&format!("cohen_kappa        {:.4}\n", self.cohen_kappa));
        out.push_str(&format!("mcc                {}\n", opt(self.mcc)));
        out.push_str(&format!("roc_auc_macro      {}\n", opt(self.roc_auc_macro)));
        out.push_str(&format!("pr_auc_macro       {}\n", opt(self.pr_auc_macro)));
        out.push_str(&format!(
            "specificity_macro  {:.4}\n",
            self.specificity_macro
        ));
        out.push_str(&format!("log_loss           {}\n", opt(self.log_loss)));
        out.push_str(&format!("brier_score        {}\n", opt(self.brier_score)));
        out.push_str(&format!("hamming_loss       {:.4}\n", self.hamming_loss));
        out
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
