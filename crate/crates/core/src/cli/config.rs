use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datapipe::{CleanProfile, Task};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tokenizer::DEFAULT_VOCAB_SIZE;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSettings {
    /// Target vocabulary size for `train-tokenizer`.
    pub vocab_size: usize,
    /// Register the bundled C/C++ domain tokens.
    pub domain_tokens: bool,
    /// Custom domain-token list replacing the bundled one.
    pub specials_file: Option<PathBuf>,
    /// Vocabulary used by `train`, `eval` and `scan` when `--vocab` is absent.
    pub path: Option<PathBuf>,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        TokenizerSettings {
            vocab_size: DEFAULT_VOCAB_SIZE,
            domain_tokens: true,
            specials_file: None,
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    pub inputs: Vec<PathBuf>,
    pub profile: CleanProfile,
    pub obfuscate: Option<bool>,
    pub cwe_table: Option<PathBuf>,
    pub test_fraction: f64,
    pub stratify: bool,
    /// `field=column` pairs for CSV/JSONL inputs, e.g. `code=func,label=target`.
    pub columns: String,
    pub seed: u64,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        DatasetSettings {
            inputs: Vec::new(),
            profile: CleanProfile::Formai,
            obfuscate: None,
            cwe_table: None,
            test_fraction: 0.2,
            stratify: true,
            columns: String::new(),
            seed: 42,
        }
    }
}

/// Everything a command needs, loaded from JSON and patched by `--set`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub task: Task,
    /// When set, replaces the model, training and dataset seeds.
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tokenizer: TokenizerSettings,
    pub dataset: DatasetSettings,
}

impl ProjectConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }

    /// Loads `path` (or the defaults), applies `key=value` overrides with
    /// dotted keys such as `train.learning_rate=1e-3`, then `seed`.
    pub fn resolve(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let base = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        let mut value = serde_json::to_value(&base)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: ProjectConfig =
            serde_json::from_value(value).map_err(|e| Error::config("--set", e.to_string()))?;
        if seed.is_some() {
            cfg.seed = seed;
        }
        if let Some(s) = cfg.seed {
            cfg.model.seed = s;
            cfg.train.seed = s;
            cfg.dataset.seed = s;
        }
        cfg.model.num_labels = cfg.task.num_classes();
        Ok(cfg)
    }
}

/// Sets one dotted key. The value is parsed as JSON when possible and kept
/// as a string otherwise. Unknown keys surface when the result is decoded.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Usage(format!("override `{spec}` has an empty key")));
    }
    let value =
        serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::config(key, format!("`{}` is not a section", parts[..i].join(".")))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    Ok(())
}
