use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CodeSample;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitOutcome {
    pub train: Vec<CodeSample>,
    pub test: Vec<CodeSample>,
    pub warnings: Vec<String>,
}

fn test_size(n: usize, fraction: f64) -> usize {
    let k = (n as f64 * fraction).round() as usize;
    if n >= 2 {
        k.clamp(1, n - 1)
    } else {
        0
    }
}

/// Seeded train/test split. Both halves keep the input order. With
/// `stratify`, each class (encoded `label`, falling back to `label_binary`)
/// is split on its own; classes with fewer than two samples stay in train.
pub fn split(
    samples: Vec<CodeSample>,
    test_fraction: f64,
    seed: u64,
    stratify: bool,
) -> Result<SplitOutcome> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(
            "test_fraction",
            format!("must lie in (0, 1), got {test_fraction}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; samples.len()];
    let mut warnings = Vec::new();
    if stratify {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            by_class
                .entry(s.label.unwrap_or(s.label_binary as usize))
                .or_default()
                .push(i);
        }
        for (class, mut idx) in by_class {
            if idx.len() < 2 {
                let msg = format!("class {class} has {} sample(s); kept in train", idx.len());
                log::warn!("{msg}");
                warnings.push(msg);
                continue;
            }
            idx.shuffle(&mut rng);
            for &i in &idx[..test_size(idx.len(), test_fraction)] {
                in_test[i] = true;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..test_size(idx.len(), test_fraction)] {
            in_test[i] = true;
        }
    }
    let mut out = SplitOutcome {
        warnings,
        ..SplitOutcome::default()
    };
    for (s, t) in samples.into_iter().zip(in_test) {
        if t {
            out.test.push(s);
        } else {
            out.train.push(s);
        }
    }
    Ok(out)
}
