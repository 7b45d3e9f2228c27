#ifndef HTDS_H
#define HTDS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HtdsStatus {
  HTDS_STATUS_OK = 0,
  HTDS_STATUS_NULL_POINTER = 1,
  HTDS_STATUS_INVALID_ARGUMENT = 2,
  HTDS_STATUS_IO = 3,
  HTDS_STATUS_PARSE = 4,
  HTDS_STATUS_DATA = 5,
  HTDS_STATUS_CONFIG = 6,
  HTDS_STATUS_SHAPE = 7,
  HTDS_STATUS_NUMERIC = 8,
  HTDS_STATUS_CHECKPOINT = 9,
  HTDS_STATUS_PANIC = 10,
} HtdsStatus;

/**
 * A trained model with its preprocessing.
 */
typedef struct HtdsModel HtdsModel;

/**
 * The five evaluation metrics at one threshold.
 */
typedef struct HtdsMetrics {
  double micro_f1;
  double macro_f1;
  double micro_auc;
  double macro_auc;
  double p_at_5;
} HtdsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next htds call on the same thread.
 */
const char *htds_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *htds_version(void);

/**
 * Opens a run directory written by `htds train`.
 *
 * # Safety
 * `run_dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HtdsStatus htds_model_open(const char *run_dir, struct HtdsModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from `htds_model_open` and not be used afterwards.
 */
void htds_model_free(struct HtdsModel *model);

/**
 * Number of labels the model scores; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t htds_model_num_labels(const struct HtdsModel *model);

/**
 * Decision threshold selected on dev; NaN for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
double htds_model_threshold(const struct HtdsModel *model);

/**
 * Code of label `index`. The string lives as long as the model.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum HtdsStatus htds_model_label(const struct HtdsModel *model, size_t index, const char **out);

/**
 * Scores one stay given as notes-file lines (one JSON object per line with
 * `note_id`, `stay_id`, `category`, `charttime`, `text`). Writes one
 * probability per label into `probs`, which must hold `probs_len` values.
 *
 * # Safety
 * `model` must be a live handle, `notes_jsonl` NUL-terminated, and `probs`
 * valid for `probs_len` writes.
 */
enum HtdsStatus htds_model_predict(const struct HtdsModel *model,
                                   const char *notes_jsonl,
                                   double *probs,
                                   size_t probs_len);

/**
 * One-cycle learning rate at `step` of `total_steps` with the default
 * phases: warm-up over 30% from `peak/25`, cool-down over 30% back to
 * `peak/25`, then annealing over 40% to `peak/1000`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum HtdsStatus htds_onecycle_lr(size_t total_steps, double peak, size_t step, double *out);

/**
 * Evaluation metrics for row-major `n_stays x n_labels` probabilities and
 * 0/1 gold labels at `threshold`.
 *
 * # Safety
 * `probs` and `gold` must each be valid for `n_stays * n_labels` reads and
 * `out` a valid pointer.
 */
enum HtdsStatus htds_metrics(const double *probs,
                             const uint8_t *gold,
                             size_t n_stays,
                             size_t n_labels,
                             double threshold,
                             struct HtdsMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HTDS_H */
