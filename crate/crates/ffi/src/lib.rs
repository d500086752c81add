//! C ABI over `vulnclf`: load a vocabulary or a trained classifier through
//! opaque handles, encode and classify snippets, and score predictions.
//!
//! Every function returns a [`VcStatus`]. On failure the message is
//! available from [`vc_last_error`] on the same thread until the next call.
//! Strings handed out by the library are released with [`vc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use vulnclf::datapipe::{LabelSchema, Task};
use vulnclf::metrics::MetricsReport;
use vulnclf::model::{load_checkpoint, predict, Model};
use vulnclf::tokenizer::Vocabulary;
use vulnclf::Error;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VcStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad argument value or combination.
    Usage = 3,
    /// Configuration mismatch, e.g. checkpoint and vocabulary disagree.
    Config = 4,
    /// Unreadable or malformed input data.
    Data = 5,
    Io = 6,
    /// The caller's output buffer is too small.
    BufferTooSmall = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

/// Loaded tokenizer vocabulary.
pub struct VcVocab {
    vocab: Vocabulary,
}

/// Trained model plus the vocabulary it was trained with.
pub struct VcClassifier {
    model: Model,
    vocab: Vocabulary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> VcStatus {
    match err {
        Error::Usage(_) | Error::Parameter(_) | Error::Index { .. } | Error::Dimension { .. } => {
            VcStatus::Usage
        }
        Error::Config { .. } => VcStatus::Config,
        Error::Io { .. } => VcStatus::Io,
        _ => VcStatus::Data,
    }
}

struct Fail(VcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside vulnclf");
            VcStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(VcStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(VcStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn vc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn vc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a vocabulary file written by `train-tokenizer`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_vocab_load(path: *const c_char, out: *mut *mut VcVocab) -> VcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let vocab = Vocabulary::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(VcVocab { vocab }));
        Ok(())
    })
}

/// # Safety
/// `v` must come from [`vc_vocab_load`] (or be null).
#[no_mangle]
pub unsafe extern "C" fn vc_vocab_free(v: *mut VcVocab) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// Number of tokens, or 0 for a null handle.
///
/// # Safety
/// `v` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vc_vocab_len(v: *const VcVocab) -> usize {
    v.as_ref().map_or(0, |v| v.vocab.len())
}

/// Encodes `text` into exactly `max_len` ids, left-padded, truncating
/// longer inputs. `mask` (optional) receives 1 for real tokens and 0 for
/// padding. Both buffers need room for `max_len` entries.
///
/// # Safety
/// `ids` must hold `capacity` u32 values, `mask` (if non-null) `capacity`
/// bytes; `text` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vc_vocab_encode(
    v: *const VcVocab,
    text: *const c_char,
    max_len: usize,
    ids: *mut u32,
    mask: *mut u8,
    capacity: usize,
    true_length: *mut usize,
) -> VcStatus {
    guard(|| {
        let v = v.as_ref().ok_or_else(|| null("vocab"))?;
        let text = str_arg(text, "text")?;
        if ids.is_null() {
            return Err(null("ids"));
        }
        if capacity < max_len {
            return Err(Fail(
                VcStatus::BufferTooSmall,
                format!("need {max_len} slots, have {capacity}"),
            ));
        }
        let seq = v.vocab.encode(text, max_len)?;
        std::slice::from_raw_parts_mut(ids, max_len).copy_from_slice(&seq.ids);
        if !mask.is_null() {
            let m = std::slice::from_raw_parts_mut(mask, max_len);
            for (dst, &src) in m.iter_mut().zip(&seq.attention_mask) {
                *dst = src;
            }
        }
        if !true_length.is_null() {
            *true_length = seq.true_length;
        }
        Ok(())
    })
}

/// Loads a checkpoint and its vocabulary. A null `vocab_path` means
/// `vocab.txt` in the checkpoint's directory.
///
/// # Safety
/// String arguments must be NUL-terminated (or null where allowed); `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_classifier_load(
    checkpoint: *const c_char,
    vocab_path: *const c_char,
    out: *mut *mut VcClassifier,
) -> VcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = Path::new(str_arg(checkpoint, "checkpoint")?);
        let vpath = if vocab_path.is_null() {
            ckpt.parent().unwrap_or(Path::new(".")).join("vocab.txt")
        } else {
            PathBuf::from(str_arg(vocab_path, "vocab_path")?)
        };
        let model = load_checkpoint(ckpt)?;
        let vocab = Vocabulary::load(&vpath)?;
        if vocab.len() != model.config().vocab_size {
            return Err(Fail(
                VcStatus::Config,
                format!(
                    "vocabulary has {} tokens, checkpoint expects {}",
                    vocab.len(),
                    model.config().vocab_size
                ),
            ));
        }
        *out = Box::into_raw(Box::new(VcClassifier { model, vocab }));
        Ok(())
    })
}

/// # Safety
/// `c` must come from [`vc_classifier_load`] (or be null).
#[no_mangle]
pub unsafe extern "C" fn vc_classifier_free(c: *mut VcClassifier) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `c` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vc_classifier_num_labels(c: *const VcClassifier) -> usize {
    c.as_ref().map_or(0, |c| c.model.config().num_labels)
}

/// Classifies one snippet. `max_len` of 0 means the model's maximum
/// sequence length. Writes the predicted class and, when `probs` is
/// non-null, the softmax over classes.
///
/// # Safety
/// `probs` (if non-null) must hold `capacity` doubles; `text` must be
/// NUL-terminated; `class_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_classifier_classify(
    c: *const VcClassifier,
    text: *const c_char,
    max_len: usize,
    probs: *mut f64,
    capacity: usize,
    class_out: *mut usize,
) -> VcStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("classifier"))?;
        let text = str_arg(text, "text")?.trim();
        if class_out.is_null() {
            return Err(null("class_out"));
        }
        let k = c.model.config().num_labels;
        if !probs.is_null() && capacity < k {
            return Err(Fail(
                VcStatus::BufferTooSmall,
                format!("need {k} slots, have {capacity}"),
            ));
        }
        let limit = if max_len == 0 {
            c.model.config().max_sequence_length
        } else {
            max_len
        };
        let seq = c.vocab.encode(text, limit)?;
        let seq = seq.repad(seq.true_length.max(1), c.vocab.pad_id())?;
        let p = predict(&c.model.logits(std::slice::from_ref(&seq))?);
        *class_out = p.classes[0];
        if !probs.is_null() {
            std::slice::from_raw_parts_mut(probs, k).copy_from_slice(&p.probabilities[0]);
        }
        Ok(())
    })
}

/// Scores `n` predictions against labels and returns the metrics report as
/// a JSON string in `out` (free with [`vc_string_free`]). `probs`, when
/// non-null, is an `n × num_classes` row-major probability matrix. Class
/// names follow the binary or 12-way schema when `num_classes` matches one.
///
/// # Safety
/// `preds` and `labels` must hold `n` values, `probs` (if non-null)
/// `n * num_classes`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_metrics_report_json(
    preds: *const usize,
    labels: *const usize,
    n: usize,
    num_classes: usize,
    probs: *const f64,
    out: *mut *mut c_char,
) -> VcStatus {
    guard(|| {
        if preds.is_null() || labels.is_null() || out.is_null() {
            return Err(null("preds/labels/out"));
        }
        if n == 0 || num_classes == 0 {
            return Err(Fail(VcStatus::Usage, "empty input".into()));
        }
        let preds = std::slice::from_raw_parts(preds, n);
        let labels = std::slice::from_raw_parts(labels, n);
        let rows: Option<Vec<Vec<f64>>> = (!probs.is_null()).then(|| {
            std::slice::from_raw_parts(probs, n * num_classes)
                .chunks(num_classes)
                .map(<[f64]>::to_vec)
                .collect()
        });
        let names = [Task::Binary, Task::Multiclass12]
            .into_iter()
            .find(|t| t.num_classes() == num_classes)
            .map(|t| LabelSchema::new(t).classes)
            .unwrap_or_else(|| (0..num_classes).map(|i| format!("class_{i}")).collect());
        let report = MetricsReport::compute(preds, labels, rows.as_deref(), &names)?;
        let json = CString::new(report.to_json()?)
            .map_err(|_| Fail(VcStatus::Data, "report contains NUL".into()))?;
        *out = json.into_raw();
        Ok(())
    })
}
