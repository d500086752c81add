use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use super::labels::sort_tags;
use super::{CodeSample, PatchStatus};
use crate::error::{Error, Result};

/// Collapses whitespace runs to a single space and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hex SHA-256 of the whitespace-normalized source.
pub fn dedup_key(text: &str) -> String {
    let digest = Sha256::digest(normalize_whitespace(text).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DedupOutcome {
    pub samples: Vec<CodeSample>,
    pub removed_count: usize,
    /// Groups whose members disagreed on labels and went through
    /// [`resolve_conflicts`].
    pub conflicts_resolved: usize,
}

fn label_view(s: &CodeSample) -> (u8, BTreeSet<&String>, PatchStatus, bool, Option<u64>) {
    (
        s.label_binary,
        s.cwe_tags.iter().collect(),
        s.patch_status,
        s.patch_evidence,
        s.severity.map(f64::to_bits),
    )
}

/// Keeps the first sample per normalized-text key. Groups whose members
/// disagree on labelling are merged by [`resolve_conflicts`]; the merged
/// sample takes the position of the group's first member.
pub fn dedup(samples: Vec<CodeSample>) -> DedupOutcome {
    let n = samples.len();
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<CodeSample>> = HashMap::new();
    for s in samples {
        let key = dedup_key(&s.source_text);
        let g = groups.entry(key.clone()).or_default();
        if g.is_empty() {
            order.push(key);
        }
        g.push(s);
    }
    let mut out = Vec::with_capacity(order.len());
    let mut conflicts = 0;
    for key in order {
        let mut group = groups.remove(&key).expect("group for key");
        let first = label_view(&group[0]);
        if group.iter().all(|s| label_view(s) == first) {
            out.push(group.swap_remove(0));
        } else {
            conflicts += 1;
            out.push(resolve_conflicts(&group).expect("non-empty group"));
        }
    }
    DedupOutcome {
        removed_count: n - out.len(),
        samples: out,
        conflicts_resolved: conflicts,
    }
}

/// Median with the even-count case averaged. `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Merges samples that share a dedup key into one record. The outcome does
/// not depend on the order of `group`:
///
/// 1. any member marked patched with authority evidence makes the result
///    patched and not vulnerable;
/// 2. otherwise any vulnerable member makes it vulnerable with the union of
///    CWE tags;
/// 3. severity is the median of every reported severity.
///
/// The text and id come from the member with the smallest id; every origin
/// and id is listed in the provenance.
pub fn resolve_conflicts(group: &[CodeSample]) -> Result<CodeSample> {
    let base = group
        .iter()
        .min_by(|a, b| {
            a.id.cmp(&b.id).then_with(|| {
                let ja = serde_json::to_string(a).unwrap_or_default();
                let jb = serde_json::to_string(b).unwrap_or_default();
                ja.cmp(&jb)
            })
        })
        .ok_or_else(|| Error::Usage("cannot resolve an empty conflict group".into()))?;
    let mut out = base.clone();
    let patched = group
        .iter()
        .any(|s| s.patch_status == PatchStatus::Patched && s.patch_evidence);
    let vulnerable = group
        .iter()
        .any(|s| s.label_binary == 1 || s.patch_status == PatchStatus::Vulnerable);
    if patched {
        out.patch_status = PatchStatus::Patched;
        out.patch_evidence = true;
        out.label_binary = 0;
        out.cwe_tags.clear();
    } else if vulnerable {
        out.patch_status = PatchStatus::Vulnerable;
        out.patch_evidence = false;
        out.label_binary = 1;
        let mut tags: Vec<String> = group
            .iter()
            .flat_map(|s| s.cwe_tags.iter().cloned())
            .collect();
        sort_tags(&mut tags);
        out.cwe_tags = tags;
    } else {
        out.label_binary = 0;
        out.cwe_tags.clear();
        out.patch_evidence = false;
        out.patch_status = if group.iter().any(|s| s.patch_status == PatchStatus::Patched) {
            PatchStatus::Patched
        } else {
            PatchStatus::Unknown
        };
    }
    let severities: Vec<f64> = group.iter().filter_map(|s| s.severity).collect();
    out.severity = median(&severities);
    let cves: BTreeSet<String> = group
        .iter()
        .flat_map(|s| s.cve_refs.iter().cloned())
        .collect();
    out.cve_refs = cves.into_iter().collect();
    out.cleaned = group.iter().all(|s| s.cleaned);
    out.label = None;
    let origins: BTreeSet<&str> = group.iter().map(|s| s.origin.as_str()).collect();
    let ids: BTreeSet<&str> = group.iter().map(|s| s.id.as_str()).collect();
    out.provenance
        .insert("origins".into(), serde_json::json!(origins));
    out.provenance
        .insert("merged_ids".into(), serde_json::json!(ids));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_reindented() {
        let a = CodeSample::new("1", "int x;\nint y;", 0);
        let b = CodeSample::new("2", "int x;\nint y;", 0);
        let c = CodeSample::new("3", "  int   x;\n\tint y;  ", 0);
        let d = CodeSample::new("4", "int z;", 0);
        let out = dedup(vec![a, b, c, d]);
        assert_eq!(out.removed_count, 2);
        let ids: Vec<&str> = out.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["1", "4"]);
    }

    #[test]
    fn disjoint_untouched() {
        let v = vec![CodeSample::new("b", "x", 0), CodeSample::new("a", "y", 0)];
        let out = dedup(v.clone());
        assert_eq!(out.removed_count, 0);
        assert_eq!(out.samples, v);
    }

    #[test]
    fn patched_beats_vulnerable() {
        let g = [
            CodeSample::new("1", "f();", 1)
                .with_tags(&["CWE-120"])
                .with_patch(PatchStatus::Vulnerable, false),
            CodeSample::new("2", "f();", 0).with_patch(PatchStatus::Patched, true),
        ];
        let r = resolve_conflicts(&g).unwrap();
        assert_eq!((r.patch_status, r.label_binary), (PatchStatus::Patched, 0));
        assert!(r.cwe_tags.is_empty());
    }

    #[test]
    fn unproven_patch_does_not_win() {
        let g = [
            CodeSample::new("1", "f();", 1).with_tags(&["CWE-787"]),
            CodeSample::new("2", "f();", 0).with_patch(PatchStatus::Patched, false),
            CodeSample::new("3", "f();", 1).with_tags(&["CWE-20"]),
        ];
        let r = resolve_conflicts(&g).unwrap();
        assert_eq!(r.label_binary, 1);
        assert_eq!(r.cwe_tags, vec!["CWE-20", "CWE-787"]);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[7.5, 9.8, 8.1]), Some(8.1));
        assert_eq!(median(&[7.0, 9.0]), Some(8.0));
        assert_eq!(median(&[]), None);
    }
}
