#ifndef VULNCLF_H
#define VULNCLF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum VcStatus {
  VC_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  VC_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  VC_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad argument value or combination.
   */
  VC_STATUS_USAGE = 3,
  /**
   * Configuration mismatch, e.g. checkpoint and vocabulary disagree.
   */
  VC_STATUS_CONFIG = 4,
  /**
   * Unreadable or malformed input data.
   */
  VC_STATUS_DATA = 5,
  VC_STATUS_IO = 6,
  /**
   * The caller's output buffer is too small.
   */
  VC_STATUS_BUFFER_TOO_SMALL = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  VC_STATUS_PANIC = 8,
} VcStatus;

/**
 * Trained model plus the vocabulary it was trained with.
 */
typedef struct VcClassifier VcClassifier;

/**
 * Loaded tokenizer vocabulary.
 */
typedef struct VcVocab VcVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *vc_last_error(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void vc_string_free(char *s);

/**
 * Loads a vocabulary file written by `train-tokenizer`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum VcStatus vc_vocab_load(const char *path, struct VcVocab **out);

/**
 * # Safety
 * `v` must come from [`vc_vocab_load`] (or be null).
 */
void vc_vocab_free(struct VcVocab *v);

/**
 * Number of tokens, or 0 for a null handle.
 *
 * # Safety
 * `v` must be a live handle or null.
 */
size_t vc_vocab_len(const struct VcVocab *v);

/**
 * Encodes `text` into exactly `max_len` ids, left-padded, truncating
 * longer inputs. `mask` (optional) receives 1 for real tokens and 0 for
 * padding. Both buffers need room for `max_len` entries.
 *
 * # Safety
 * `ids` must hold `capacity` u32 values, `mask` (if non-null) `capacity`
 * bytes; `text` must be NUL-terminated.
 */
enum VcStatus vc_vocab_encode(const struct VcVocab *v,
                              const char *text,
                              size_t max_len,
                              uint32_t *ids,
                              uint8_t *mask,
                              size_t capacity,
                              size_t *true_length);

/**
 * Loads a checkpoint and its vocabulary. A null `vocab_path` means
 * `vocab.txt` in the checkpoint's directory.
 *
 * # Safety
 * String arguments must be NUL-terminated (or null where allowed); `out`
 * must be writable.
 */
enum VcStatus vc_classifier_load(const char *checkpoint,
                                 const char *vocab_path,
                                 struct VcClassifier **out);

/**
 * # Safety
 * `c` must come from [`vc_classifier_load`] (or be null).
 */
void vc_classifier_free(struct VcClassifier *c);

/**
 * Number of output classes, or 0 for a null handle.
 *
 * # Safety
 * `c` must be a live handle or null.
 */
size_t vc_classifier_num_labels(const struct VcClassifier *c);

/**
 * Classifies one snippet. `max_len` of 0 means the model's maximum
 * sequence length. Writes the predicted class and, when `probs` is
 * non-null, the softmax over classes.
 *
 * # Safety
 * `probs` (if non-null) must hold `capacity` doubles; `text` must be
 * NUL-terminated; `class_out` must be writable.
 */
enum VcStatus vc_classifier_classify(const struct VcClassifier *c,
                                     const char *text,
                                     size_t max_len,
                                     double *probs,
                                     size_t capacity,
                                     size_t *class_out);

/**
 * Scores `n` predictions against labels and returns the metrics report as
 * a JSON string in `out` (free with [`vc_string_free`]). `probs`, when
 * non-null, is an `n × num_classes` row-major probability matrix. Class
 * names follow the binary or 12-way schema when `num_classes` matches one.
 *
 * # Safety
 * `preds` and `labels` must hold `n` values, `probs` (if non-null)
 * `n * num_classes`; `out` must be writable.
 */
enum VcStatus vc_metrics_report_json(const size_t *preds,
                                     const size_t *labels,
                                     size_t n,
                                     size_t num_classes,
                                     const double *probs,
                                     char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VULNCLF_H */
