use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::labels::normalize_cwe;
use super::{CodeSample, PatchStatus};
use crate::error::{Error, Result};

const FIELDS: [&str; 9] = [
    "id",
    "source_text",
    "origin",
    "label_binary",
    "cwe_tags",
    "cve_refs",
    "severity",
    "patch_status",
    "patch_evidence",
];

const C_EXTENSIONS: [&str; 8] = ["c", "h", "cc", "cpp", "cxx", "hpp", "hh", "hxx"];

/// Maps canonical field names to the column names used by a source file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub columns: BTreeMap<String, String>,
}

impl ColumnMap {
    /// Parses `field=column` pairs separated by commas. `code` and `label`
    /// are accepted as aliases for `source_text` and `label_binary`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut columns = BTreeMap::new();
        for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (field, column) = pair.split_once('=').ok_or_else(|| {
                Error::Usage(format!("column mapping `{pair}` is not field=column"))
            })?;
            let field = match field.trim() {
                "code" => "source_text",
                "label" => "label_binary",
                f => f,
            };
            if !FIELDS.contains(&field) {
                return Err(Error::Usage(format!(
                    "unknown field `{field}` in column mapping"
                )));
            }
            columns.insert(field.to_string(), column.trim().to_string());
        }
        Ok(ColumnMap { columns })
    }

    pub fn column<'a>(&'a self, field: &'a str) -> &'a str {
        self.columns.get(field).map_or(field, String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Adapter {
    /// One JSON object per line.
    Jsonl {
        #[serde(default)]
        columns: ColumnMap,
    },
    /// Headered CSV; list fields are separated by `;`, `,` or `|`.
    Csv {
        #[serde(default)]
        columns: ColumnMap,
    },
    /// `root/<label>/[CWE-n/]…/file.c`, one function or snippet per file.
    /// Label directories: `0`, `safe`, `good`, `benign`, `not_vulnerable`
    /// and `1`, `bad`, `vulnerable`.
    Directory,
}

impl Adapter {
    pub fn jsonl() -> Self {
        Adapter::Jsonl {
            columns: ColumnMap::default(),
        }
    }

    pub fn csv(columns: ColumnMap) -> Self {
        Adapter::Csv { columns }
    }

    /// Picks an adapter from the path: directories use the layout adapter,
    /// `.csv` files the CSV adapter, anything else JSONL.
    pub fn detect(path: &Path) -> Self {
        if path.is_dir() {
            Adapter::Directory
        } else if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        {
            Adapter::csv(ColumnMap::default())
        } else {
            Adapter::jsonl()
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Adapter::Jsonl { .. } => "jsonl",
            Adapter::Csv { .. } => "csv",
            Adapter::Directory => "directory",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    pub samples: Vec<CodeSample>,
    pub skipped: usize,
    pub diagnostics: Vec<String>,
}

impl IngestReport {
    fn skip(&mut self, msg: String) {
        log::warn!("{msg}");
        self.skipped += 1;
        self.diagnostics.push(msg);
    }

    fn accept(&mut self, sample: CodeSample, seen: &mut HashSet<String>, where_: &str) {
        if let Err(e) = sample.check() {
            return self.skip(format!("{where_}: {e}"));
        }
        if !seen.insert(sample.id.clone()) {
            return self.skip(format!("{where_}: duplicate id `{}`", sample.id));
        }
        self.samples.push(sample);
    }
}

/// Reads every record at `path` into the unified schema. Malformed records
/// are skipped, logged and counted. `origin` defaults to the file stem.
pub fn ingest(adapter: &Adapter, path: &Path, origin: Option<&str>) -> Result<IngestReport> {
    let origin = origin.map(str::to_string).unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "input".into())
    });
    match adapter {
        Adapter::Jsonl { columns } => ingest_jsonl(path, columns, &origin),
        Adapter::Csv { columns } => ingest_csv(path, columns, &origin),
        Adapter::Directory => ingest_dir(path, &origin),
    }
}

fn ingest_jsonl(path: &Path, columns: &ColumnMap, origin: &str) -> Result<IngestReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    let mut record = 0;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        record += 1;
        let where_ = format!("{}:{}", path.display(), n + 1);
        let obj = match serde_json::from_str::<Value>(line) {
            Ok(Value::Object(m)) => m,
            Ok(_) => {
                report.skip(format!("{where_}: record is not a JSON object"));
                continue;
            }
            Err(e) => {
                report.skip(format!("{where_}: {e}"));
                continue;
            }
        };
        match from_record(obj, columns, origin, record) {
            Ok(s) => report.accept(s, &mut seen, &where_),
            Err(e) => report.skip(format!("{where_}: {e}")),
        }
    }
    Ok(report)
}

fn ingest_csv(path: &Path, columns: &ColumnMap, origin: &str) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader.headers()?.clone();
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let record = i + 1;
        let where_ = format!("{} record {record}", path.display());
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.skip(format!("{where_}: {e}"));
                continue;
            }
        };
        if row.len() != headers.len() {
            report.skip(format!(
                "{where_}: {} fields, header has {}",
                row.len(),
                headers.len()
            ));
            continue;
        }
        let obj: Map<String, Value> = headers
            .iter()
            .zip(row.iter())
            .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
            .collect();
        match from_record(obj, columns, origin, record) {
            Ok(s) => report.accept(s, &mut seen, &where_),
            Err(e) => report.skip(format!("{where_}: {e}")),
        }
    }
    Ok(report)
}

fn ingest_dir(root: &Path, origin: &str) -> Result<IngestReport> {
    let mut files = Vec::new();
    walk(root, &mut files)?;
    files.sort();
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    for file in files {
        let rel = file.strip_prefix(root).unwrap_or(&file);
        let parts: Vec<String> = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        let id = parts.join("/");
        let where_ = file.display().to_string();
        if !file
            .extension()
            .is_some_and(|e| C_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
        {
            report.skip(format!("{where_}: not a C/C++ source file"));
            continue;
        }
        let label = match parts.first().map(|s| s.to_ascii_lowercase()) {
            Some(d) if parts.len() >= 2 => match d.as_str() {
                "0" | "safe" | "good" | "benign" | "clean" | "not_vulnerable"
                | "not-vulnerable" => 0,
                "1" | "bad" | "vulnerable" => 1,
                _ => {
                    report.skip(format!("{where_}: `{d}` is not a label directory"));
                    continue;
                }
            },
            _ => {
                report.skip(format!("{where_}: file outside a label directory"));
                continue;
            }
        };
        let text = match std::fs::read(&file).map(String::from_utf8) {
            Ok(Ok(t)) => t,
            Ok(Err(_)) => {
                report.skip(format!("{where_}: not valid UTF-8"));
                continue;
            }
            Err(e) => {
                report.skip(format!("{where_}: {e}"));
                continue;
            }
        };
        if text.trim().is_empty() {
            report.skip(format!("{where_}: empty source text"));
            continue;
        }
        let mut s = CodeSample::new(id, text, label).with_origin(origin);
        if label == 1 && parts.len() >= 3 {
            if let Some(tag) = normalize_cwe(&parts[1]).filter(|t| t.starts_with("CWE-")) {
                s.cwe_tags = vec![tag];
            }
        }
        report.accept(s, &mut seen, &where_);
    }
    Ok(report)
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn from_record(
    mut obj: Map<String, Value>,
    columns: &ColumnMap,
    origin: &str,
    record: usize,
) -> std::result::Result<CodeSample, String> {
    let mut take = |field: &str| obj.remove(columns.column(field)).filter(|v| !v.is_null());
    let source = match take("source_text") {
        Some(Value::String(s)) if !s.trim().is_empty() => s,
        Some(Value::String(_)) => return Err("empty source text".into()),
        Some(_) => return Err("source text is not a string".into()),
        None => return Err("missing source text".into()),
    };
    let label = match take("label_binary") {
        Some(v) => parse_label(&v)?,
        None => return Err("missing label".into()),
    };
    let id = match take("id") {
        Some(Value::String(s)) if !s.is_empty() => s,
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err("id is not a string or number".into()),
        None => format!("{origin}-{record}"),
    };
    let origin = match take("origin") {
        Some(Value::String(s)) if !s.is_empty() => s,
        _ => origin.to_string(),
    };
    let mut cwe_tags = Vec::new();
    if let Some(v) = take("cwe_tags") {
        for t in list(&v)? {
            let tag = normalize_cwe(&t).ok_or_else(|| format!("unrecognized CWE tag `{t}`"))?;
            cwe_tags.push(tag);
        }
    }
    super::labels::sort_tags(&mut cwe_tags);
    let mut cve_refs: Vec<String> = match take("cve_refs") {
        Some(v) => list(&v)?
            .into_iter()
            .map(|c| c.to_ascii_uppercase())
            .collect(),
        None => Vec::new(),
    };
    cve_refs.sort();
    cve_refs.dedup();
    let severity = match take("severity") {
        Some(Value::Number(n)) => n.as_f64(),
        Some(Value::String(s)) if s.trim().is_empty() => None,
        Some(Value::String(s)) => Some(
            s.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad severity `{s}`"))?,
        ),
        Some(_) => return Err("severity is not a number".into()),
        None => None,
    };
    let patch_status = match take("patch_status") {
        Some(Value::String(s)) => s.parse::<PatchStatus>()?,
        Some(_) => return Err("patch_status is not a string".into()),
        None => PatchStatus::Unknown,
    };
    let patch_evidence = match take("patch_evidence") {
        Some(v) => parse_bool(&v)?,
        None => false,
    };
    // Canonical files may carry derived fields from an earlier build.
    obj.remove("word_count");
    obj.remove("label");
    let cleaned = matches!(obj.remove("cleaned"), Some(Value::Bool(true)));
    let mut provenance = BTreeMap::new();
    if let Some(Value::Object(p)) = obj.remove("provenance") {
        provenance.extend(p);
    }
    provenance.extend(obj);

    let mut s = CodeSample::new(id, source, label).with_origin(origin);
    s.cwe_tags = cwe_tags;
    s.cve_refs = cve_refs;
    s.severity = severity;
    s.patch_status = patch_status;
    s.patch_evidence = patch_evidence;
    s.cleaned = cleaned;
    s.provenance = provenance;
    Ok(s)
}

fn parse_label(v: &Value) -> std::result::Result<u8, String> {
    match v {
        Value::Bool(b) => Ok(*b as u8),
        Value::Number(n) => match n.as_u64() {
            Some(0) => Ok(0),
            Some(1) => Ok(1),
            _ => Err(format!("label must be 0 or 1, got {n}")),
        },
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "0" | "false" | "safe" | "benign" | "not_vulnerable" | "not-vulnerable" => Ok(0),
            "1" | "true" | "vulnerable" => Ok(1),
            other => Err(format!("unrecognized label `{other}`")),
        },
        _ => Err("label is not a scalar".into()),
    }
}

fn parse_bool(v: &Value) -> std::result::Result<bool, String> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::Number(n) => Ok(n.as_f64() != Some(0.0)),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "" | "0" | "false" | "no" => Ok(false),
            "1" | "true" | "yes" => Ok(true),
            other => Err(format!("unrecognized boolean `{other}`")),
        },
        _ => Err("expected a boolean".into()),
    }
}

fn list(v: &Value) -> std::result::Result<Vec<String>, String> {
    match v {
        Value::Array(items) => items
            .iter()
            .map(|i| match i {
                Value::String(s) => Ok(s.trim().to_string()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err("list entries must be strings or numbers".to_string()),
            })
            .filter(|r| !matches!(r, Ok(s) if s.is_empty()))
            .collect(),
        Value::String(s) => {
            let s = s.trim();
            if s.starts_with('[') {
                let inner: Value = serde_json::from_str(s).map_err(|e| e.to_string())?;
                return list(&inner);
            }
            Ok(s.split([';', ',', '|'])
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect())
        }
        Value::Number(n) => Ok(vec![n.to_string()]),
        _ => Err("expected a list".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_skips_missing_text() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        std::fs::write(
            &p,
            "{\"id\":\"1\",\"source_text\":\"int x;\",\"label_binary\":0}\n\
             {\"id\":\"2\",\"label_binary\":1}\n\
             not json\n\
             {\"id\":\"3\",\"source_text\":\"f();\",\"label_binary\":1,\"cwe_tags\":[\"120\"],\"extra\":5}\n",
        )
        .unwrap();
        let r = ingest(&Adapter::jsonl(), &p, None).unwrap();
        assert_eq!(r.samples.len(), 2);
        assert_eq!(r.skipped, 2);
        assert_eq!(r.samples[1].cwe_tags, vec!["CWE-120"]);
        assert_eq!(r.samples[1].provenance["extra"], serde_json::json!(5));
        assert_eq!(r.samples[0].origin, "a");
    }

    #[test]
    fn column_map_parsing() {
        let m = ColumnMap::parse("code=func, label=target").unwrap();
        assert_eq!(m.column("source_text"), "func");
        assert_eq!(m.column("label_binary"), "target");
        assert_eq!(m.column("id"), "id");
        assert!(ColumnMap::parse("bogus=x").is_err());
    }

    #[test]
    fn directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("vulnerable/CWE-787")).unwrap();
        std::fs::create_dir_all(root.join("safe")).unwrap();
        std::fs::write(root.join("vulnerable/CWE-787/f.c"), "void f(){}").unwrap();
        std::fs::write(root.join("safe/g.c"), "void g(){}").unwrap();
        std::fs::write(root.join("stray.c"), "x").unwrap();
        let r = ingest(&Adapter::Directory, root, Some("dirset")).unwrap();
        assert_eq!(r.samples.len(), 2);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.samples[0].id, "safe/g.c");
        assert_eq!(r.samples[1].cwe_tags, vec!["CWE-787"]);
    }
}
