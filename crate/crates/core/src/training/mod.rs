//! Fine-tuning: AdamW with decoupled weight decay, learning-rate schedules,
//! global-norm clipping, early stopping on validation loss, checkpointing,
//! and the ablation variants.

mod ablation;
mod optim;
mod synthetic;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablation::{ablate, AblationVariant, ABLATION_NAMES};
pub use optim::{adamw_step, clip_grad_norm, schedule_lr, AdamState, Schedule};
pub use synthetic::synthetic_corpus;

use crate::error::{Error, Result};
use crate::model::{predict, save_checkpoint, Model, ModelConfig, Parameter};
use crate::tensor::Tape;
use crate::tokenizer::{collate, TokenSequence, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub max_grad_norm: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: Schedule,
    /// Longest token sequence fed to the model; longer inputs are truncated.
    pub max_seq_len: usize,
    /// Share of the training split held out for early stopping.
    pub validation_fraction: f64,
    /// Stop as soon as eval-mode training accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
    /// Load the best-validation weights back into the model at the end.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            max_epochs: 10,
            early_stop_patience: 3,
            max_grad_norm: 1.0,
            batch_size: 8,
            seed: 42,
            schedule: Schedule::Constant,
            max_seq_len: 512,
            validation_fraction: 0.1,
            target_train_accuracy: None,
            restore_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning_rate",
                "must be a non-negative finite number",
            ));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::config("early_stop_patience", "must be at least 1"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::config("max_grad_norm", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.max_seq_len == 0 {
            return Err(Error::config("max_seq_len", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam_beta1", "betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Early-stopping bookkeeping on a monitored loss (lower is better).
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
        }
    }

    /// Records the loss of 1-based `epoch`. A loss only counts as an
    /// improvement when strictly below the best so far.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
            return StopDecision::Improved;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

/// Epoch at which training halts for an injected loss sequence, with the
/// best epoch; both 1-based.
pub fn simulate_early_stop(losses: &[f64], patience: usize) -> (usize, usize) {
    let mut s = EarlyStopper::new(patience);
    for (i, &l) in losses.iter().enumerate() {
        if s.observe(i + 1, l) == StopDecision::Stop {
            return (i + 1, s.best_epoch);
        }
    }
    (losses.len(), s.best_epoch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunState {
    pub epoch: usize,
    pub optimizer: AdamState,
    pub stopper: EarlyStopper,
    pub history: Vec<EpochRecord>,
    pub stop_reason: String,
}

/// Tokenized sample with its class index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub seq: TokenSequence,
    pub label: usize,
}

/// Tokenizes `(text, label)` pairs, truncating to `max_len` tokens. Texts
/// that produce no tokens are rejected.
pub fn encode_examples<'a>(
    vocab: &Vocabulary,
    items: impl IntoIterator<Item = (&'a str, usize)>,
    max_len: usize,
) -> Result<Vec<Example>> {
    items
        .into_iter()
        .map(|(text, label)| {
            let seq = vocab.encode(text, max_len)?;
            if seq.true_length == 0 {
                return Err(Error::Input("sample produced no tokens".into()));
            }
            Ok(Example {
                seq: seq.repad(seq.true_length, vocab.pad_id())?,
                label,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub probabilities: Vec<Vec<f64>>,
    pub predictions: Vec<usize>,
}

fn log_softmax_at(row: &[f64], label: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[label] - lse
}

/// Eval-mode loss, accuracy and class probabilities.
pub fn evaluate(
    model: &Model,
    examples: &[Example],
    batch_size: usize,
    pad_id: u32,
) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Usage("cannot evaluate an empty dataset".into()));
    }
    let c = model.config().num_labels;
    if let Some(e) = examples.iter().find(|e| e.label >= c) {
        return Err(Error::Index {
            what: "class labels",
            index: e.label,
            bound: c,
        });
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut probabilities = Vec::with_capacity(examples.len());
    let mut predictions = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let seqs: Vec<TokenSequence> = chunk.iter().map(|e| e.seq.clone()).collect();
        let logits = model.logits(&collate(&seqs, pad_id)?)?;
        let pred = predict(&logits);
        for (i, e) in chunk.iter().enumerate() {
            loss -= log_softmax_at(logits.row(i), e.label);
            correct += (pred.classes[i] == e.label) as usize;
        }
        probabilities.extend(pred.probabilities);
        predictions.extend(pred.classes);
    }
    let n = examples.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        probabilities,
        predictions,
    })
}

/// SplitMix64 finalizer over `(seed, stream, epoch)`.
pub fn derive_seed(seed: u64, stream: u64, epoch: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One gradient computation on `batch`: mean cross-entropy loss and the
/// gradient of every parameter.
pub fn loss_and_grads(
    model: &Model,
    batch: &[Example],
    pad_id: u32,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let seqs: Vec<TokenSequence> = batch.iter().map(|e| e.seq.clone()).collect();
    let seqs = collate(&seqs, pad_id)?;
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &seqs, training, rng)?;
    let loss_var = tape.cross_entropy(fwd.logits, &labels)?;
    let loss = tape.value(loss_var).item();
    let mut grads = tape.backward(loss_var)?;
    let out = fwd.params.iter().map(|&v| grads.take(v)).collect();
    Ok((loss, out))
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record([
        "epoch",
        "train_loss",
        "train_acc",
        "val_loss",
        "val_acc",
        "lr",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            opt(r.val_loss),
            opt(r.val_acc),
            r.lr.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `history.csv` written by [`train`].
pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let f = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad value in column {i}")))
        };
        let o = |i: usize| {
            row.get(i)
                .filter(|s| !s.is_empty())
                .and_then(|s| s.parse().ok())
        };
        out.push(EpochRecord {
            epoch: f(0)? as usize,
            train_loss: f(1)?,
            train_acc: f(2)?,
            val_loss: o(3),
            val_acc: o(4),
            lr: f(5)?,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct RunConfig<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    train_examples: usize,
    val_examples: usize,
}

/// Fine-tunes `model` in place.
///
/// Each epoch visits `train_set` in a fresh permutation seeded by
/// `(cfg.seed, epoch)`, then scores the training and validation sets in
/// eval mode. Early stopping watches validation loss, or training loss when
/// `val_set` is empty. With `run_dir`, writes `config.json`, `history.csv`
/// (rewritten every epoch), `best.ckpt` and `last.ckpt`.
pub fn train(
    model: &mut Model,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    pad_id: u32,
    run_dir: Option<&Path>,
) -> Result<RunState> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let c = model.config().num_labels;
    if let Some(e) = train_set.iter().chain(val_set).find(|e| e.label >= c) {
        return Err(Error::Index {
            what: "class labels",
            index: e.label,
            bound: c,
        });
    }
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rc = RunConfig {
            model: model.config(),
            train: cfg,
            train_examples: train_set.len(),
            val_examples: val_set.len(),
        };
        let p = dir.join("config.json");
        std::fs::write(&p, serde_json::to_string_pretty(&rc)? + "\n")
            .map_err(|e| Error::io(&p, e))?;
    }
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size) as u64;
    let horizon = steps_per_epoch * cfg.max_epochs as u64;
    let mut state = RunState {
        epoch: 0,
        optimizer: AdamState::for_params(model.params()),
        stopper: EarlyStopper::new(cfg.early_stop_patience),
        history: Vec::new(),
        stop_reason: "max_epochs".into(),
    };
    let mut best: Option<Vec<Parameter>> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        state.epoch = epoch;
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0, epoch as u64));
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);
        let mut lr = schedule_lr(state.optimizer.step, cfg, horizon);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Example> = idx.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, mut grads) = loss_and_grads(model, &batch, pad_id, true, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {}, step {}",
                    b + 1,
                    state.optimizer.step + 1
                )));
            }
            let mut flat: Vec<Vec<f64>> = Vec::with_capacity(grads.len());
            for (g, p) in grads.iter_mut().zip(model.params()) {
                flat.push(
                    g.take().ok_or_else(|| {
                        Error::Usage(format!("missing gradient for `{}`", p.name))
                    })?,
                );
            }
            clip_grad_norm(&mut flat, cfg.max_grad_norm);
            let grads: Vec<Option<Vec<f64>>> = flat.into_iter().map(Some).collect();
            lr = schedule_lr(state.optimizer.step, cfg, horizon);
            adamw_step(model.params_mut(), &grads, &mut state.optimizer, cfg, lr)?;
        }
        let tr = evaluate(model, train_set, cfg.batch_size, pad_id)?;
        let va = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(model, val_set, cfg.batch_size, pad_id)?)
        };
        if !tr.loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite training loss after epoch {epoch}"
            )));
        }
        state.history.push(EpochRecord {
            epoch,
            train_loss: tr.loss,
            train_acc: tr.accuracy,
            val_loss: va.as_ref().map(|v| v.loss),
            val_acc: va.as_ref().map(|v| v.accuracy),
            lr,
        });
        log::info!(
            "epoch {epoch}: train loss {:.5} acc {:.4}{}",
            tr.loss,
            tr.accuracy,
            va.as_ref()
                .map(|v| format!(", val loss {:.5} acc {:.4}", v.loss, v.accuracy))
                .unwrap_or_default()
        );
        if let Some(dir) = run_dir {
            write_history(&dir.join("history.csv"), &state.history)?;
        }
        let monitored = va.as_ref().map_or(tr.loss, |v| v.loss);
        let decision = state.stopper.observe(epoch, monitored);
        if decision == StopDecision::Improved {
            best = Some(model.params().to_vec());
            if let Some(dir) = run_dir {
                save_checkpoint(model, &dir.join("best.ckpt"))?;
            }
        }
        if cfg.target_train_accuracy.is_some_and(|t| tr.accuracy >= t) {
            state.stop_reason = format!("target_train_accuracy reached at epoch {epoch}");
            break;
        }
        if decision == StopDecision::Stop {
            state.stop_reason = format!(
                "early stop at epoch {epoch}; best epoch {}",
                state.stopper.best_epoch
            );
            break;
        }
    }
    if let Some(dir) = run_dir {
        save_checkpoint(model, &dir.join("last.ckpt"))?;
    }
    if cfg.restore_best {
        if let Some(best) = best {
            model.params_mut().clone_from_slice(&best);
        }
    }
    Ok(state)
}
