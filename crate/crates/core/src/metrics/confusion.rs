use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class counts; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let c = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = classes.len();
        if counts.len() != c || counts.iter().any(|r| r.len() != c) {
            return Err(Error::Dimension {
                op: "confusion matrix",
                lhs: vec![c, c],
                rhs: vec![counts.len(), counts.first().map_or(0, Vec::len)],
            });
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    /// Builds a 2×2 matrix from binary outcome counts (class 1 = positive).
    pub fn binary(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        ConfusionMatrix {
            classes: vec!["0".into(), "1".into()],
            counts: vec![vec![tn, fp], vec![fn_, tp]],
        }
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.classes.len() {
            return Err(Error::Parameter(format!(
                "{} class names for a {}-class matrix",
                names.len(),
                self.classes.len()
            )));
        }
        self.classes = names;
        Ok(self)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let c = self.classes.len();
        for v in [truth, predicted] {
            if v >= c {
                return Err(Error::Index {
                    what: "class index",
                    index: v,
                    bound: c,
                });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn tp(&self, i: usize) -> u64 {
        self.counts[i][i]
    }

    /// True instances of class `i` (row sum).
    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Predictions of class `i` (column sum).
    pub fn predicted(&self, i: usize) -> u64 {
        self.counts.iter().map(|r| r[i]).sum()
    }

    pub fn fp(&self, i: usize) -> u64 {
        self.predicted(i) - self.tp(i)
    }

    pub fn fn_(&self, i: usize) -> u64 {
        self.support(i) - self.tp(i)
    }

    /// One-vs-rest true negatives for class `i`.
    pub fn tn(&self, i: usize) -> u64 {
        self.total() - self.tp(i) - self.fp(i) - self.fn_(i)
    }

    /// Aligned plain-text grid, true classes down, predictions across.
    pub fn to_table(&self) -> String {
        let label_w = self
            .classes
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(10);
        let cell_w = self
            .counts
            .iter()
            .flatten()
            .map(|v| v.to_string().len())
            .chain(self.classes.iter().map(String::len))
            .max()
            .unwrap_or(1)
            + 2;
        let mut out = format!("{:>label_w$}", "true\\pred");
        for c in &self.classes {
            out.push_str(&format!("{c:>cell_w$}"));
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(&format!("{name:>label_w$}"));
            for v in row {
                out.push_str(&format!("{v:>cell_w$}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies `(prediction, label)` pairs into a `c`-class matrix named `0..c`.
pub fn confusion(preds: &[usize], labels: &[usize], c: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::new((0..c).map(|i| i.to_string()).collect());
    for (&p, &l) in preds.iter().zip(labels) {
        cm.record(l, p)?;
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_is_diagonal() {
        let cm = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn swapped_is_anti_diagonal() {
        let cm = confusion(&[1, 0], &[0, 1], 2).unwrap();
        assert_eq!(cm.counts(), &[vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn errors() {
        assert!(matches!(confusion(&[0], &[0, 1], 2), Err(Error::Usage(_))));
        assert!(matches!(confusion(&[2], &[0], 2), Err(Error::Index { .. })));
    }

    #[test]
    fn one_vs_rest_counts() {
        let cm = ConfusionMatrix::binary(3788, 740, 483, 15050);
        assert_eq!(cm.total(), 20061);
        assert_eq!(
            (cm.tp(1), cm.fp(1), cm.fn_(1), cm.tn(1)),
            (15050, 740, 483, 3788)
        );
        assert_eq!(
            (cm.tp(0), cm.fp(0), cm.fn_(0), cm.tn(0)),
            (3788, 483, 740, 15050)
        );
        assert!(cm.to_table().contains("15050"));
    }
}
