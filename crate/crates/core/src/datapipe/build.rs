use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    clean, dedup, encode_labels, ingest, map_cwe, obfuscate_identifiers, split, stats, write_jsonl,
    Adapter, CleanProfile, CweTable, DistributionStats, LabelSchema, Task,
};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub path: PathBuf,
    pub adapter: Adapter,
    #[serde(default)]
    pub origin: Option<String>,
}

impl InputSpec {
    pub fn detect(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        InputSpec {
            adapter: Adapter::detect(&path),
            path,
            origin: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub inputs: Vec<InputSpec>,
    pub profile: CleanProfile,
    /// Defaults to `true` for the aggregated profile, `false` for formai.
    pub obfuscate: Option<bool>,
    pub cwe_table: Option<PathBuf>,
    pub task: Task,
    pub test_fraction: f64,
    pub seed: u64,
    pub stratify: bool,
    /// Free-form `key=value` overrides echoed into the manifest.
    pub overrides: Vec<String>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            inputs: Vec::new(),
            profile: CleanProfile::Formai,
            obfuscate: None,
            cwe_table: None,
            task: Task::Binary,
            test_fraction: 0.2,
            seed: 42,
            stratify: true,
            overrides: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputManifest {
    pub path: String,
    pub adapter: String,
    pub sha256: String,
    pub records: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub ingested: usize,
    pub skipped: usize,
    pub cleaned: usize,
    pub obfuscated: usize,
    pub obfuscation_flagged: usize,
    pub cwe_mapped: usize,
    pub after_dedup: usize,
    pub removed_count: usize,
    pub conflicts_resolved: usize,
    pub encoded: usize,
    pub train: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildManifest {
    pub version: u32,
    pub inputs: Vec<InputManifest>,
    pub profile: CleanProfile,
    pub obfuscate: bool,
    pub cwe_table: Option<String>,
    pub schema: LabelSchema,
    pub test_fraction: f64,
    pub seed: u64,
    pub stratify: bool,
    pub stages: StageCounts,
    pub class_counts: BTreeMap<String, usize>,
    pub train_class_counts: BTreeMap<String, usize>,
    pub test_class_counts: BTreeMap<String, usize>,
    pub stats_before: DistributionStats,
    pub stats_after: DistributionStats,
    pub warnings: Vec<String>,
    pub overrides: Vec<String>,
}

impl BuildManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        // Directory inputs hash their relative file names and contents.
        let mut files = Vec::new();
        collect(path, &mut files)?;
        files.sort();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(std::fs::read(&f).map_err(|e| Error::io(&f, e))?);
            h.update([0]);
        }
    } else {
        h.update(std::fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn class_counts(
    labels: impl Iterator<Item = usize>,
    schema: &LabelSchema,
) -> BTreeMap<String, usize> {
    let mut m: BTreeMap<String, usize> = schema.classes.iter().map(|c| (c.clone(), 0)).collect();
    for l in labels {
        *m.entry(schema.classes[l].clone()).or_insert(0) += 1;
    }
    m
}

/// Runs ingest → clean → obfuscate → map CWE → dedup/resolve → encode →
/// split → stats and writes `train.jsonl`, `test.jsonl` and
/// `manifest.json` under `out_dir`.
pub fn build_dataset(opts: &BuildOptions, out_dir: &Path) -> Result<BuildManifest> {
    if opts.inputs.is_empty() {
        return Err(Error::Usage("no dataset inputs given".into()));
    }
    if !(opts.test_fraction > 0.0 && opts.test_fraction < 1.0) {
        return Err(Error::config("test_fraction", "must lie in (0, 1)"));
    }
    let obfuscate = opts
        .obfuscate
        .unwrap_or(opts.profile == CleanProfile::Aggregated);
    let schema = LabelSchema::new(opts.task);
    let mut stages = StageCounts::default();
    let mut warnings = Vec::new();
    let mut inputs = Vec::new();
    let mut samples = Vec::new();
    let mut ids = HashSet::new();

    for spec in &opts.inputs {
        if !spec.path.exists() {
            return Err(Error::io(
                &spec.path,
                std::io::Error::from(std::io::ErrorKind::NotFound),
            ));
        }
        let report = ingest(&spec.adapter, &spec.path, spec.origin.as_deref())?;
        inputs.push(InputManifest {
            path: spec.path.to_string_lossy().into_owned(),
            adapter: spec.adapter.name().into(),
            sha256: file_digest(&spec.path)?,
            records: report.samples.len(),
            skipped: report.skipped,
        });
        stages.skipped += report.skipped;
        warnings.extend(report.diagnostics);
        for mut s in report.samples {
            if ids.contains(&s.id) {
                let base = format!("{}/{}", s.origin, s.id);
                let mut candidate = base.clone();
                let mut k = 2;
                while ids.contains(&candidate) {
                    candidate = format!("{base}#{k}");
                    k += 1;
                }
                warnings.push(format!(
                    "id `{}` from {} renamed to `{candidate}`",
                    s.id,
                    spec.path.display()
                ));
                s.id = candidate;
            }
            ids.insert(s.id.clone());
            samples.push(s);
        }
    }
    stages.ingested = samples.len();
    if samples.is_empty() {
        return Err(Error::Data("no samples survived ingestion".into()));
    }
    let stats_before = stats(&samples)?;

    let mut samples: Vec<_> = samples.iter().map(|s| clean(s, opts.profile)).collect();
    stages.cleaned = samples.len();

    if obfuscate {
        for s in samples.iter_mut() {
            let (o, flag) = obfuscate_identifiers(s);
            match flag {
                Some(f) => {
                    stages.obfuscation_flagged += 1;
                    warnings.push(f);
                }
                None => stages.obfuscated += 1,
            }
            *s = o;
        }
    }

    if let Some(path) = &opts.cwe_table {
        let table = CweTable::load(path)?;
        stages.cwe_mapped = samples
            .iter_mut()
            .map(|s| map_cwe(s, &table))
            .filter(|&g| g)
            .count();
    }

    let d = dedup(samples);
    stages.removed_count = d.removed_count;
    stages.conflicts_resolved = d.conflicts_resolved;
    let mut samples = d.samples;
    stages.after_dedup = samples.len();
    if samples.is_empty() {
        return Err(Error::Data("no samples survived preprocessing".into()));
    }

    let labels = encode_labels(&mut samples, &schema);
    stages.encoded = labels.len();
    let counts = class_counts(labels.iter().copied(), &schema);
    let stats_after = stats(&samples)?;

    let parts = split(samples, opts.test_fraction, opts.seed, opts.stratify)?;
    warnings.extend(parts.warnings.iter().cloned());
    stages.train = parts.train.len();
    stages.test = parts.test.len();

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_jsonl(&out_dir.join("train.jsonl"), &parts.train)?;
    write_jsonl(&out_dir.join("test.jsonl"), &parts.test)?;

    let label_of = |s: &super::CodeSample| s.label.expect("encoded");
    let manifest = BuildManifest {
        version: MANIFEST_VERSION,
        inputs,
        profile: opts.profile,
        obfuscate,
        cwe_table: opts
            .cwe_table
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned()),
        test_fraction: opts.test_fraction,
        seed: opts.seed,
        stratify: opts.stratify,
        stages,
        class_counts: counts,
        train_class_counts: class_counts(parts.train.iter().map(label_of), &schema),
        test_class_counts: class_counts(parts.test.iter().map(label_of), &schema),
        schema,
        stats_before,
        stats_after,
        warnings,
        overrides: opts.overrides.clone(),
    };
    let path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
