use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ProjectConfig;
use super::scan::{collect_snippets, scan_snippets};
use super::{AblateArgs, BuildDatasetArgs, EvalArgs, ScanArgs, TrainArgs, TrainTokenizerArgs};
use crate::datapipe::{
    build_dataset as build, clean, encode_labels, obfuscate_identifiers, read_jsonl, split,
    Adapter, BuildManifest, BuildOptions, CleanProfile, CodeSample, ColumnMap, InputSpec,
    LabelSchema, Task,
};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{load_checkpoint, Model, ModelConfig};
use crate::tokenizer::{train_bpe, SpecialRegistry, Vocabulary};
use crate::training::{
    self, ablate as ablation_variants, encode_examples, evaluate, RunState, TrainConfig,
};

pub(super) struct Context {
    pub cfg: ProjectConfig,
    /// `--set` and `--seed` values as given, echoed into manifests.
    pub overrides: Vec<String>,
}

/// Provenance written next to every trained run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectManifest {
    pub command: String,
    pub config: ProjectConfig,
    pub overrides: Vec<String>,
    pub dataset: String,
    pub dataset_sha256: BTreeMap<String, String>,
    pub vocab_sha256: String,
    pub train_examples: usize,
    pub val_examples: usize,
    pub test_examples: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop_reason: String,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

/// The task whose head has `n` outputs.
pub fn task_for_labels(n: usize) -> Option<Task> {
    [Task::Binary, Task::Multiclass12]
        .into_iter()
        .find(|t| t.num_classes() == n)
}

fn class_names(n: usize) -> Vec<String> {
    match task_for_labels(n) {
        Some(t) => LabelSchema::new(t).classes,
        None => (0..n).map(|i| format!("class_{i}")).collect(),
    }
}

pub(super) fn build_dataset(
    ctx: &Context,
    a: BuildDatasetArgs,
    out: &mut dyn Write,
) -> Result<i32> {
    let d = &ctx.cfg.dataset;
    let paths = if a.inputs.is_empty() {
        d.inputs.clone()
    } else {
        a.inputs
    };
    let columns = ColumnMap::parse(a.columns.as_deref().unwrap_or(&d.columns))?;
    let inputs = paths
        .into_iter()
        .map(|p| {
            let adapter = match a.adapter.as_deref() {
                Some("csv") => Adapter::csv(columns.clone()),
                Some("jsonl") => Adapter::Jsonl {
                    columns: columns.clone(),
                },
                Some(_) => Adapter::Directory,
                None => match Adapter::detect(&p) {
                    Adapter::Csv { .. } => Adapter::csv(columns.clone()),
                    Adapter::Jsonl { .. } => Adapter::Jsonl {
                        columns: columns.clone(),
                    },
                    other => other,
                },
            };
            InputSpec {
                path: p,
                adapter,
                origin: None,
            }
        })
        .collect();
    let obfuscate = if a.obfuscate {
        Some(true)
    } else if a.no_obfuscate {
        Some(false)
    } else {
        d.obfuscate
    };
    let opts = BuildOptions {
        inputs,
        profile: a.profile.unwrap_or(d.profile),
        obfuscate,
        cwe_table: a.cwe_table.or_else(|| d.cwe_table.clone()),
        task: a.task.unwrap_or(ctx.cfg.task),
        test_fraction: a.test_fraction.unwrap_or(d.test_fraction),
        seed: d.seed,
        stratify: d.stratify && !a.no_stratify,
        overrides: ctx.overrides.clone(),
    };
    let m = build(&opts, &a.out)?;
    let s = &m.stages;
    emit(
        out,
        &format!(
            "ingested {} (skipped {}), removed {} duplicates, resolved {} conflicts\ntrain {} / test {} -> {}\n",
            s.ingested,
            s.skipped,
            s.removed_count,
            s.conflicts_resolved,
            s.train,
            s.test,
            a.out.display()
        ),
    )?;
    Ok(0)
}

fn corpus_documents(paths: &[PathBuf]) -> Result<Vec<String>> {
    let mut docs = Vec::new();
    for p in paths {
        if p.extension().is_some_and(|e| e == "jsonl") {
            docs.extend(read_jsonl(p)?.into_iter().map(|s| s.source_text));
        } else {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            docs.push(String::from_utf8_lossy(&bytes).into_owned());
        }
    }
    Ok(docs)
}

fn registry(domain: bool, specials: Option<&Path>) -> Result<SpecialRegistry> {
    match (domain, specials) {
        (false, _) => Ok(SpecialRegistry::control_only()),
        (true, Some(p)) => SpecialRegistry::from_file(p),
        (true, None) => Ok(SpecialRegistry::builtin()),
    }
}

pub(super) fn train_tokenizer(
    ctx: &Context,
    a: TrainTokenizerArgs,
    out: &mut dyn Write,
) -> Result<i32> {
    let t = &ctx.cfg.tokenizer;
    let reg = registry(
        t.domain_tokens && !a.no_domain_tokens,
        a.specials.as_deref().or(t.specials_file.as_deref()),
    )?;
    let docs = corpus_documents(&a.corpus)?;
    let vocab = train_bpe(&docs, a.size.unwrap_or(t.vocab_size), &reg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    vocab.save(&a.out)?;
    emit(
        out,
        &format!(
            "{} tokens ({} special, {} merges) from {} documents -> {}\n",
            vocab.len(),
            vocab.special_count(),
            vocab.merges().len(),
            docs.len(),
            a.out.display()
        ),
    )?;
    Ok(0)
}

struct Dataset {
    train: Vec<CodeSample>,
    test: Vec<CodeSample>,
    digests: BTreeMap<String, String>,
}

fn ensure_labels(samples: &mut [CodeSample], schema: &LabelSchema) {
    if samples.iter().any(|s| s.label.is_none()) {
        encode_labels(samples, schema);
    }
}

fn check_task(dir: &Path, task: Task) -> Result<()> {
    let mpath = dir.join("manifest.json");
    if mpath.exists() {
        let m = BuildManifest::load(&mpath)?;
        if m.schema.task != task {
            return Err(Error::config(
                "task",
                format!(
                    "dataset {} was built for `{}`, config says `{task}`",
                    dir.display(),
                    m.schema.task
                ),
            ));
        }
    }
    Ok(())
}

fn load_dataset(dir: &Path, task: Task) -> Result<Dataset> {
    check_task(dir, task)?;
    let schema = LabelSchema::new(task);
    let mut digests = BTreeMap::new();
    let mut read = |name: &str| -> Result<Vec<CodeSample>> {
        let p = dir.join(name);
        digests.insert(name.to_string(), sha256_file(&p)?);
        let mut s = read_jsonl(&p)?;
        ensure_labels(&mut s, &schema);
        Ok(s)
    };
    let train = read("train.jsonl")?;
    let test = read("test.jsonl")?;
    if dir.join("manifest.json").exists() {
        digests.insert(
            "manifest.json".into(),
            sha256_file(&dir.join("manifest.json"))?,
        );
    }
    Ok(Dataset {
        train,
        test,
        digests,
    })
}

fn labeled(samples: &[CodeSample]) -> impl Iterator<Item = (&str, usize)> {
    samples
        .iter()
        .map(|s| (s.source_text.as_str(), s.label.expect("labels encoded")))
}

fn encode_len(model: &ModelConfig, train: &TrainConfig) -> usize {
    model.max_sequence_length.min(train.max_seq_len)
}

struct RunOutcome {
    state: RunState,
    report: Option<MetricsReport>,
    train_n: usize,
    val_n: usize,
}

/// Trains one model under `dir` and scores it on the test split.
fn run_training(
    task: Task,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    vocab: &Vocabulary,
    ds: &Dataset,
    dir: &Path,
) -> Result<RunOutcome> {
    let schema = LabelSchema::new(task);
    let model_cfg = ModelConfig {
        vocab_size: vocab.len(),
        num_labels: schema.num_classes(),
        ..model_cfg.clone()
    };
    let (fit, val) = if train_cfg.validation_fraction > 0.0 && ds.train.len() >= 2 {
        let parts = split(
            ds.train.clone(),
            train_cfg.validation_fraction,
            train_cfg.seed,
            true,
        )?;
        for w in &parts.warnings {
            log::warn!("validation split: {w}");
        }
        (parts.train, parts.test)
    } else {
        (ds.train.clone(), Vec::new())
    };
    let max_len = encode_len(&model_cfg, train_cfg);
    let fit_ex = encode_examples(vocab, labeled(&fit), max_len)?;
    let val_ex = encode_examples(vocab, labeled(&val), max_len)?;
    let mut model = Model::init(model_cfg)?;
    log::info!(
        "training {} parameters on {} examples ({} validation)",
        model.num_parameters(),
        fit_ex.len(),
        val_ex.len()
    );
    let state = training::train(
        &mut model,
        &fit_ex,
        &val_ex,
        train_cfg,
        vocab.pad_id(),
        Some(dir),
    )
    .map_err(|e| match e {
        Error::Training(m) => Error::Training(format!("{}: {m}", dir.display())),
        other => other,
    })?;
    vocab.save(&dir.join("vocab.txt"))?;
    let report = if ds.test.is_empty() {
        None
    } else {
        let test_ex = encode_examples(vocab, labeled(&ds.test), max_len)?;
        let ev = evaluate(&model, &test_ex, train_cfg.batch_size, vocab.pad_id())?;
        let labels: Vec<usize> = test_ex.iter().map(|e| e.label).collect();
        let r = MetricsReport::compute(
            &ev.predictions,
            &labels,
            Some(&ev.probabilities),
            &schema.classes,
        )?;
        write_report(&r, dir)?;
        Some(r)
    };
    Ok(RunOutcome {
        state,
        report,
        train_n: fit.len(),
        val_n: val.len(),
    })
}

fn write_report(r: &MetricsReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("metrics.json"), &(r.to_json()? + "\n"))?;
    write_text(&dir.join("report.txt"), &r.to_text())?;
    write_text(&dir.join("confusion.txt"), &r.confusion.to_table())
}

fn vocab_path(explicit: Option<PathBuf>, ctx: &Context) -> Result<PathBuf> {
    explicit
        .or_else(|| ctx.cfg.tokenizer.path.clone())
        .ok_or_else(|| Error::Usage("no vocabulary: pass --vocab or set tokenizer.path".into()))
}

pub(super) fn train(ctx: &Context, a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = &ctx.cfg;
    cfg.train.validate()?;
    let ds = load_dataset(&a.dataset, cfg.task)?;
    let vpath = vocab_path(a.vocab, ctx)?;
    let vocab = Vocabulary::load(&vpath)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let r = run_training(cfg.task, &cfg.model, &cfg.train, &vocab, &ds, &a.out)?;
    let manifest = ProjectManifest {
        command: "train".into(),
        config: cfg.clone(),
        overrides: ctx.overrides.clone(),
        dataset: a.dataset.display().to_string(),
        dataset_sha256: ds.digests.clone(),
        vocab_sha256: sha256_file(&vpath)?,
        train_examples: r.train_n,
        val_examples: r.val_n,
        test_examples: ds.test.len(),
        epochs_run: r.state.history.len(),
        best_epoch: r.state.stopper.best_epoch,
        stop_reason: r.state.stop_reason.clone(),
    };
    write_json(&a.out.join("manifest.json"), &manifest)?;
    let mut msg = format!(
        "{} epochs ({}), best epoch {}\n",
        manifest.epochs_run, manifest.stop_reason, manifest.best_epoch
    );
    if let Some(rep) = &r.report {
        msg.push_str(&rep.to_text());
    }
    emit(out, &msg)?;
    Ok(0)
}

/// Labels, predictions and optional per-class probabilities.
pub type Predictions = (Vec<usize>, Vec<usize>, Option<Vec<Vec<f64>>>);

/// Reads a `label,prediction[,p_0,...]` CSV of class indices.
pub fn read_predictions(path: &Path) -> Result<Predictions> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("label") || header.get(1) != Some("prediction") {
        return Err(Error::format(
            path,
            "header must start with `label,prediction`",
        ));
    }
    let with_probs = header.len() > 2;
    let (mut labels, mut preds, mut probs) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::format(path, format!("row {}: bad {what}", i + 2));
        labels.push(rec[0].trim().parse().map_err(|_| bad("label"))?);
        preds.push(rec[1].trim().parse().map_err(|_| bad("prediction"))?);
        if with_probs {
            let row: Vec<f64> = rec
                .iter()
                .skip(2)
                .map(|v| v.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("probability"))?;
            probs.push(row);
        }
    }
    Ok((labels, preds, with_probs.then_some(probs)))
}

fn dataset_split(path: &Path, task: Task) -> Result<Vec<CodeSample>> {
    let file = if path.is_dir() {
        check_task(path, task)?;
        path.join("test.jsonl")
    } else {
        path.to_path_buf()
    };
    let mut s = read_jsonl(&file)?;
    ensure_labels(&mut s, &LabelSchema::new(task));
    Ok(s)
}

fn sibling_vocab(checkpoint: &Path) -> PathBuf {
    checkpoint
        .parent()
        .unwrap_or(Path::new("."))
        .join("vocab.txt")
}

pub(super) fn eval(ctx: &Context, a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let task = a.task.unwrap_or(ctx.cfg.task);
    let schema = LabelSchema::new(task);
    let report = if let Some(p) = &a.predictions {
        let (labels, preds, probs) = read_predictions(p)?;
        if labels.is_empty() {
            return Err(Error::Data(format!("{} has no rows", p.display())));
        }
        MetricsReport::compute(&preds, &labels, probs.as_deref(), &schema.classes)?
    } else {
        let ckpt = a.checkpoint.as_deref().expect("clap requires a checkpoint");
        let dataset = a.dataset.as_deref().expect("clap requires a dataset");
        let model = load_checkpoint(ckpt)?;
        let heads = model.config().num_labels;
        if heads != schema.num_classes() {
            return Err(Error::config(
                "task",
                format!(
                    "checkpoint has a {heads}-way head but task `{task}` needs {}",
                    schema.num_classes()
                ),
            ));
        }
        let samples = dataset_split(dataset, task)?;
        if samples.is_empty() {
            return Err(Error::Data(format!("{} has no samples", dataset.display())));
        }
        let vocab = Vocabulary::load(&a.vocab.clone().unwrap_or_else(|| sibling_vocab(ckpt)))?;
        let max_len = encode_len(model.config(), &ctx.cfg.train);
        let ex = encode_examples(&vocab, labeled(&samples), max_len)?;
        let ev = evaluate(&model, &ex, ctx.cfg.train.batch_size, vocab.pad_id())?;
        let labels: Vec<usize> = ex.iter().map(|e| e.label).collect();
        MetricsReport::compute(
            &ev.predictions,
            &labels,
            Some(&ev.probabilities),
            &schema.classes,
        )?
    };
    if let Some(dir) = &a.out {
        write_report(&report, dir)?;
    }
    emit(
        out,
        &format!("{}\n{}", report.to_text(), report.confusion.to_table()),
    )?;
    Ok(0)
}

pub(super) fn scan(
    ctx: &Context,
    a: ScanArgs,
    out: &mut dyn Write,
    stdin: &mut dyn Read,
) -> Result<i32> {
    let model = load_checkpoint(&a.checkpoint)?;
    let vocab = Vocabulary::load(
        &a.vocab
            .clone()
            .unwrap_or_else(|| sibling_vocab(&a.checkpoint)),
    )?;
    if vocab.len() != model.config().vocab_size {
        return Err(Error::config(
            "vocab",
            format!(
                "vocabulary has {} tokens, checkpoint expects {}",
                vocab.len(),
                model.config().vocab_size
            ),
        ));
    }
    let names = class_names(model.config().num_labels);
    let max_len = a
        .max_len
        .unwrap_or_else(|| encode_len(model.config(), &ctx.cfg.train));
    if max_len == 0 {
        return Err(Error::Usage("--max-len must be positive".into()));
    }
    let (mut snippets, problems) = collect_snippets(&a.files, a.split_functions, stdin);
    // Snippets get the same preprocessing the training data went through.
    let d = &ctx.cfg.dataset;
    let obfuscate = d.obfuscate.unwrap_or(d.profile == CleanProfile::Aggregated);
    for s in snippets.iter_mut() {
        let mut sample = clean(
            &CodeSample::new(s.source.clone(), std::mem::take(&mut s.text), 0),
            d.profile,
        );
        if obfuscate {
            sample = obfuscate_identifiers(&sample).0;
        }
        s.text = sample.source_text;
    }
    snippets.retain(|s| !s.text.trim().is_empty());
    for p in &problems {
        eprintln!("warning: cannot read {p}");
    }
    let verdicts = scan_snippets(&model, &vocab, &snippets, max_len, a.jobs)?;
    let mut text = String::new();
    for v in &verdicts {
        let probs: Vec<String> = v.probabilities.iter().map(|p| format!("{p:.4}")).collect();
        text.push_str(&format!(
            "{}\t{}\t{}\t{:.2}ms\n",
            v.source,
            names[v.class],
            probs.join(","),
            v.millis
        ));
    }
    emit(out, &text)?;
    Ok(if verdicts.iter().any(|v| v.class != 0) {
        1
    } else if !problems.is_empty() {
        3
    } else {
        0
    })
}

#[derive(Serialize)]
struct SummaryRow {
    name: String,
    description: String,
    accuracy: Option<f64>,
    macro_f1: Option<f64>,
    delta_accuracy: Option<f64>,
    delta_f1: Option<f64>,
    malloc_tokens: usize,
}

pub(super) fn ablate(ctx: &Context, a: AblateArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = &ctx.cfg;
    let ds = load_dataset(&a.dataset, cfg.task)?;
    let variants = ablation_variants(&cfg.model, &cfg.train)?;
    let corpus: Vec<&str> = ds.train.iter().map(|s| s.source_text.as_str()).collect();
    let mut vocabs: BTreeMap<bool, Vocabulary> = BTreeMap::new();
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut rows = Vec::new();
    for v in &variants {
        let domain = v.domain_tokens && cfg.tokenizer.domain_tokens;
        if let std::collections::btree_map::Entry::Vacant(e) = vocabs.entry(domain) {
            let reg = registry(domain, cfg.tokenizer.specials_file.as_deref())?;
            e.insert(train_bpe(&corpus, cfg.tokenizer.vocab_size, &reg)?);
        }
        let vocab = &vocabs[&domain];
        let dir = a.out.join(&v.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_json(&dir.join("variant.json"), v)?;
        let malloc_tokens = vocab.tokenize("malloc").ids.len();
        let (accuracy, macro_f1) = if a.dry_run {
            vocab.save(&dir.join("vocab.txt"))?;
            (None, None)
        } else {
            let r = run_training(cfg.task, &v.model, &v.train, vocab, &ds, &dir)?;
            match r.report {
                Some(rep) => (Some(rep.accuracy), Some(rep.macro_avg.f1)),
                None => (None, None),
            }
        };
        rows.push(SummaryRow {
            name: v.name.clone(),
            description: v.description.clone(),
            accuracy,
            macro_f1,
            delta_accuracy: None,
            delta_f1: None,
            malloc_tokens,
        });
    }
    let (base_acc, base_f1) = (rows[0].accuracy, rows[0].macro_f1);
    for r in rows.iter_mut() {
        r.delta_accuracy = r.accuracy.zip(base_acc).map(|(x, b)| x - b);
        r.delta_f1 = r.macro_f1.zip(base_f1).map(|(x, b)| x - b);
    }
    let path = a.out.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(
        &a.out.join("manifest.json"),
        &serde_json::json!({
            "command": "ablate",
            "config": cfg,
            "overrides": ctx.overrides,
            "dataset": a.dataset.display().to_string(),
            "dataset_sha256": ds.digests,
            "dry_run": a.dry_run,
        }),
    )?;
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    let mut text = format!(
        "{:<24}{:>10}{:>10}{:>10}{:>10}{:>8}\n",
        "configuration", "accuracy", "f1", "d_acc", "d_f1", "malloc"
    );
    for r in &rows {
        text.push_str(&format!(
            "{:<24}{:>10}{:>10}{:>10}{:>10}{:>8}\n",
            r.name,
            fmt(r.accuracy),
            fmt(r.macro_f1),
            fmt(r.delta_accuracy),
            fmt(r.delta_f1),
            r.malloc_tokens
        ));
    }
    emit(out, &text)?;
    Ok(0)
}
