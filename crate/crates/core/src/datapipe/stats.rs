use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CodeSample;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
    /// Samples per binary label (`0`, `1`).
    pub label_counts: BTreeMap<String, usize>,
    /// Vulnerable samples per CWE tag; untagged ones under `untagged`.
    pub cwe_counts: BTreeMap<String, usize>,
}

/// Linear interpolation between order statistics of a sorted slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Word-count distribution with sample (n − 1) standard deviation.
pub fn stats(samples: &[CodeSample]) -> Result<DistributionStats> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to summarize".into()));
    }
    let mut wc: Vec<f64> = samples.iter().map(|s| s.word_count as f64).collect();
    wc.sort_by(f64::total_cmp);
    let n = wc.len() as f64;
    let mean = wc.iter().sum::<f64>() / n;
    let std = if wc.len() > 1 {
        (wc.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut label_counts = BTreeMap::new();
    let mut cwe_counts = BTreeMap::new();
    for s in samples {
        *label_counts.entry(s.label_binary.to_string()).or_insert(0) += 1;
        if s.label_binary == 1 {
            if s.cwe_tags.is_empty() {
                *cwe_counts.entry("untagged".to_string()).or_insert(0) += 1;
            }
            for t in &s.cwe_tags {
                *cwe_counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
    }
    Ok(DistributionStats {
        count: wc.len(),
        mean,
        std,
        min: wc[0],
        p25: quantile(&wc, 0.25),
        p50: quantile(&wc, 0.5),
        p75: quantile(&wc, 0.75),
        max: wc[wc.len() - 1],
        label_counts,
        cwe_counts,
    })
}
