use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{CodeSample, LabelSchema, Task};
use crate::error::{Error, Result};

/// Canonical `CWE-<n>` form for `120`, `cwe120`, `CWE-120` and friends.
/// Non-numeric identifiers such as `NVD-CWE-Other` are upper-cased as-is.
pub fn normalize_cwe(tag: &str) -> Option<String> {
    let t = tag.trim();
    if t.is_empty() {
        return None;
    }
    let upper = t.to_ascii_uppercase();
    let digits = upper
        .strip_prefix("CWE")
        .map(|r| r.trim_start_matches(['-', '_', ' ', ':']))
        .unwrap_or(&upper);
    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
        let n: u64 = digits.parse().ok()?;
        return Some(format!("CWE-{n}"));
    }
    if upper
        .bytes()
        .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
    {
        Some(upper)
    } else {
        None
    }
}

fn cwe_number(tag: &str) -> Option<u64> {
    tag.strip_prefix("CWE-")?.parse().ok()
}

/// Numeric CWEs first in ascending order, then anything else lexically.
fn tag_order(tag: &str) -> (u64, &str) {
    (cwe_number(tag).unwrap_or(u64::MAX), tag)
}

pub(crate) fn sort_tags(tags: &mut Vec<String>) {
    tags.sort_by(|a, b| tag_order(a).cmp(&tag_order(b)));
    tags.dedup();
}

/// CVE → CWE reference snapshot. A CVE may map to several CWEs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CweTable {
    map: BTreeMap<String, Vec<String>>,
}

impl CweTable {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut t = CweTable::default();
        for (cve, cwe) in pairs {
            t.insert(cve, cwe)?;
        }
        Ok(t)
    }

    fn insert(&mut self, cve: &str, cwe: &str) -> Result<()> {
        let tag =
            normalize_cwe(cwe).ok_or_else(|| Error::Data(format!("bad CWE `{cwe}` for {cve}")))?;
        let e = self.map.entry(cve.trim().to_ascii_uppercase()).or_default();
        e.push(tag);
        sort_tags(e);
        Ok(())
    }

    /// Reads a headered `cve_id,cwe_id` CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::format(path, format!("missing `{name}` column")))
        };
        let (ci, wi) = (col("cve_id")?, col("cwe_id")?);
        let mut t = CweTable::default();
        for row in reader.records() {
            let row = row?;
            let (Some(cve), Some(cwe)) = (row.get(ci), row.get(wi)) else {
                return Err(Error::format(path, "short row"));
            };
            t.insert(cve, cwe)
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        Ok(t)
    }

    pub fn get(&self, cve: &str) -> Option<&[String]> {
        self.map
            .get(&cve.trim().to_ascii_uppercase())
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Fills in CWE tags for vulnerable samples that only carry CVE references.
/// Returns whether the sample gained tags.
pub fn map_cwe(sample: &mut CodeSample, table: &CweTable) -> bool {
    if sample.label_binary != 1 || !sample.cwe_tags.is_empty() || sample.cve_refs.is_empty() {
        return false;
    }
    let mut tags: Vec<String> = sample
        .cve_refs
        .iter()
        .filter_map(|c| table.get(c))
        .flatten()
        .cloned()
        .collect();
    sort_tags(&mut tags);
    let gained = !tags.is_empty();
    sample.cwe_tags = tags;
    gained
}

/// Number of vulnerable samples carrying each tag.
pub fn tag_frequencies(samples: &[CodeSample]) -> BTreeMap<String, usize> {
    let mut freq = BTreeMap::new();
    for s in samples.iter().filter(|s| s.label_binary == 1) {
        let distinct: BTreeSet<&String> = s.cwe_tags.iter().collect();
        for t in distinct {
            *freq.entry(t.clone()).or_insert(0) += 1;
        }
    }
    freq
}

/// The sample's most frequent tag across the corpus; ties go to the lowest
/// CWE number.
pub fn primary_cwe<'a>(tags: &'a [String], freq: &BTreeMap<String, usize>) -> Option<&'a str> {
    tags.iter()
        .min_by(|a, b| {
            let fa = freq.get(*a).copied().unwrap_or(0);
            let fb = freq.get(*b).copied().unwrap_or(0);
            fb.cmp(&fa).then_with(|| tag_order(a).cmp(&tag_order(b)))
        })
        .map(String::as_str)
}

/// Assigns every sample exactly one class index under `schema` and stores it
/// in `sample.label`. Frequencies come from the samples themselves.
pub fn encode_labels(samples: &mut [CodeSample], schema: &LabelSchema) -> Vec<usize> {
    let freq = tag_frequencies(samples);
    samples
        .iter_mut()
        .map(|s| {
            let class = match schema.task {
                Task::Binary => s.label_binary as usize,
                Task::Multiclass12 if s.label_binary == 0 => 0,
                Task::Multiclass12 => primary_cwe(&s.cwe_tags, &freq)
                    .and_then(|t| schema.index_of(t))
                    .filter(|&i| i != 0 && i != schema.other_index())
                    .unwrap_or(schema.other_index()),
            };
            s.label = Some(class);
            class
        })
        .collect()
}
