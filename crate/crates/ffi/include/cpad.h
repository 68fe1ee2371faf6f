#ifndef CPAD_H
#define CPAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CpadBlackoutMode {
  CPAD_BLACKOUT_MODE_RANDOM = 0,
  CPAD_BLACKOUT_MODE_SEQUENTIAL = 1,
} CpadBlackoutMode;

typedef enum CpadStatus {
  CPAD_STATUS_OK = 0,
  CPAD_STATUS_NULL_POINTER = 1,
  CPAD_STATUS_INVALID_ARGUMENT = 2,
  CPAD_STATUS_IO = 3,
  CPAD_STATUS_PARSE = 4,
  CPAD_STATUS_SHAPE = 5,
  CPAD_STATUS_UNLABELED = 6,
  CPAD_STATUS_CONFIG = 7,
  CPAD_STATUS_PANIC = 8,
} CpadStatus;

/**
 * Scenarios held in memory.
 */
typedef struct CpadDataset CpadDataset;

/**
 * Trained model parameters.
 */
typedef struct CpadModel CpadModel;

/**
 * Optional blackout for a prediction.
 */
typedef struct CpadBlackout {
  enum CpadBlackoutMode mode;
  /**
   * Fraction in `[0, 1]`.
   */
  double pct;
  size_t max_block;
  uint64_t seed;
} CpadBlackout;

/**
 * Scalar metrics; `auc` is NaN when only one class is present.
 */
typedef struct CpadMetrics {
  size_t n_samples;
  double f1;
  double auc;
  double precision;
  double recall;
  double mcc;
  double accuracy;
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
  uint64_t tn;
} CpadMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t cpad_last_error(char *buf, size_t len);

/**
 * Loads model parameters from a JSON checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum CpadStatus cpad_model_load(const char *path, struct CpadModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`cpad_model_load`] not yet freed.
 */
void cpad_model_free(struct CpadModel *model);

/**
 * Number of scalar parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cpad_model_param_count(const struct CpadModel *model);

/**
 * Simulates `n` labeled scenarios with default settings.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum CpadStatus cpad_dataset_generate(size_t n,
                                      size_t n_agents,
                                      uint64_t seed,
                                      struct CpadDataset **out);

/**
 * Reads a JSONL dataset.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum CpadStatus cpad_dataset_load(const char *path, struct CpadDataset **out);

/**
 * # Safety
 * `ds` must be null or a dataset handle not yet freed.
 */
void cpad_dataset_free(struct CpadDataset *ds);

/**
 * Number of scenarios, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t cpad_dataset_len(const struct CpadDataset *ds);

/**
 * Agent count of scenario `index`, or 0 when out of range.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t cpad_dataset_agents(const struct CpadDataset *ds, size_t index);

/**
 * Rule label of one agent: 1 anomalous, 0 normal.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be valid for a write.
 */
enum CpadStatus cpad_dataset_label(const struct CpadDataset *ds,
                                   size_t scenario,
                                   size_t agent,
                                   uint8_t *out);

/**
 * Anomaly probability of agent `ego` in scenario `scenario`. Pass a null
 * `blackout` for full communication.
 *
 * # Safety
 * Handles must be live; `blackout` null or valid; `out` valid for a write.
 */
enum CpadStatus cpad_predict(const struct CpadModel *model,
                             const struct CpadDataset *ds,
                             size_t scenario,
                             size_t ego,
                             const struct CpadBlackout *blackout,
                             double *out);

/**
 * Metrics of probabilities against 0/1 labels at threshold 0.5.
 *
 * # Safety
 * `labels` and `probabilities` must hold `n` elements; `out` valid for a write.
 */
enum CpadStatus cpad_metrics(const uint8_t *labels,
                             const double *probabilities,
                             size_t n,
                             struct CpadMetrics *out);

/**
 * Area under the ROC curve of `scores` against 0/1 labels.
 *
 * # Safety
 * `labels` and `scores` must hold `n` elements; `out` valid for a write.
 */
enum CpadStatus cpad_roc_auc(const uint8_t *labels, const double *scores, size_t n, double *out);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cpad_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPAD_H */
