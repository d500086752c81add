//! Dataset integration: ingestion adapters, cleaning, identifier
//! obfuscation, deduplication with conflict resolution, CWE mapping, label
//! encoding, splitting and distribution statistics.

mod build;
mod clean;
mod dedup;
mod ingest;
mod labels;
mod obfuscate;
mod split;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use build::{
    build_dataset, BuildManifest, BuildOptions, InputManifest, InputSpec, StageCounts,
};
pub use clean::{clean, strip_c_comments, CleanProfile};
pub use dedup::{dedup, dedup_key, median, normalize_whitespace, resolve_conflicts, DedupOutcome};
pub use ingest::{ingest, Adapter, ColumnMap, IngestReport};
pub use labels::{encode_labels, map_cwe, normalize_cwe, primary_cwe, tag_frequencies, CweTable};
pub use obfuscate::obfuscate_identifiers;
pub use split::{split, SplitOutcome};
pub use stats::{quantile, stats, DistributionStats};

use crate::error::{Error, Result};

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum PatchStatus {
    #[default]
    Unknown,
    Vulnerable,
    Patched,
}

impl FromStr for PatchStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "unknown" => Ok(PatchStatus::Unknown),
            "vulnerable" => Ok(PatchStatus::Vulnerable),
            "patched" | "fixed" => Ok(PatchStatus::Patched),
            other => Err(format!("unknown patch status `{other}`")),
        }
    }
}

/// One source snippet in the unified schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeSample {
    pub id: String,
    pub source_text: String,
    pub origin: String,
    pub label_binary: u8,
    #[serde(default)]
    pub cwe_tags: Vec<String>,
    #[serde(default)]
    pub cve_refs: Vec<String>,
    #[serde(default)]
    pub severity: Option<f64>,
    #[serde(default)]
    pub patch_status: PatchStatus,
    /// Set when an authoritative source confirms the patch.
    #[serde(default)]
    pub patch_evidence: bool,
    #[serde(default)]
    pub word_count: usize,
    #[serde(default)]
    pub cleaned: bool,
    /// Encoded class index under the build's label schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, serde_json::Value>,
}

impl CodeSample {
    pub fn new(id: impl Into<String>, source_text: impl Into<String>, label_binary: u8) -> Self {
        let source_text = source_text.into();
        CodeSample {
            id: id.into(),
            word_count: word_count(&source_text),
            source_text,
            origin: String::new(),
            label_binary,
            cwe_tags: Vec::new(),
            cve_refs: Vec::new(),
            severity: None,
            patch_status: PatchStatus::Unknown,
            patch_evidence: false,
            cleaned: false,
            label: None,
            provenance: BTreeMap::new(),
        }
    }

    pub fn with_tags(mut self, tags: &[&str]) -> Self {
        self.cwe_tags = tags.iter().map(|t| t.to_string()).collect();
        self
    }

    pub fn with_origin(mut self, origin: impl Into<String>) -> Self {
        self.origin = origin.into();
        self
    }

    pub fn with_severity(mut self, severity: f64) -> Self {
        self.severity = Some(severity);
        self
    }

    pub fn with_patch(mut self, status: PatchStatus, evidence: bool) -> Self {
        self.patch_status = status;
        self.patch_evidence = evidence;
        self
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.label_binary > 1 {
            return Err(format!(
                "label_binary must be 0 or 1, got {}",
                self.label_binary
            ));
        }
        if self.label_binary == 0 && !self.cwe_tags.is_empty() {
            return Err("not-vulnerable sample carries CWE tags".into());
        }
        if let Some(s) = self.severity {
            if !s.is_finite() {
                return Err("severity is not finite".into());
            }
        }
        Ok(())
    }

    pub fn refresh_word_count(&mut self) {
        self.word_count = word_count(&self.source_text);
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Binary,
    Multiclass12,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Multiclass12 => 12,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Binary => "binary",
            Task::Multiclass12 => "multiclass12",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "multiclass12" | "multiclass" => Ok(Task::Multiclass12),
            other => Err(Error::config(
                "task",
                format!("expected binary or multiclass12, got `{other}`"),
            )),
        }
    }
}

pub const MULTICLASS_LABELS: [&str; 12] = [
    "Not-Vulnerable",
    "CWE-20",
    "CWE-78",
    "CWE-119",
    "CWE-120",
    "CWE-121",
    "CWE-122",
    "CWE-190",
    "CWE-476",
    "CWE-762",
    "CWE-787",
    "Other",
];

pub const BINARY_LABELS: [&str; 2] = ["NOT_VULNERABLE", "VULNERABLE"];

/// Class names and their dense indices for a task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub task: Task,
    pub classes: Vec<String>,
}

impl LabelSchema {
    pub fn new(task: Task) -> Self {
        let names: &[&str] = match task {
            Task::Binary => &BINARY_LABELS,
            Task::Multiclass12 => &MULTICLASS_LABELS,
        };
        LabelSchema {
            task,
            classes: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn other_index(&self) -> usize {
        self.classes.len() - 1
    }

    /// Index of the "vulnerable" verdict boundary: class 0 is clean, every
    /// other class is a finding.
    pub fn is_vulnerable_class(&self, index: usize) -> bool {
        index != 0
    }
}

/// Reads a canonical JSONL file strictly: any malformed line is an error.
pub fn read_jsonl(path: &Path) -> Result<Vec<CodeSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: CodeSample = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        s.check()
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, samples: &[CodeSample]) -> Result<()> {
    let mut buf = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut buf, s)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
