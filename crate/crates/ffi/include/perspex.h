#ifndef PERSPEX_H
#define PERSPEX_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of an API call.
 */
typedef enum {
  PERSPEX_STATUS_OK = 0,
  PERSPEX_STATUS_NULL_POINTER = 1,
  PERSPEX_STATUS_INVALID_UTF8 = 2,
  PERSPEX_STATUS_NOT_FOUND = 3,
  PERSPEX_STATUS_IO = 4,
  /**
   * Malformed CSV content or labels.
   */
  PERSPEX_STATUS_DATA = 5,
  PERSPEX_STATUS_INVALID_ARGUMENT = 6,
  PERSPEX_STATUS_RANK = 7,
  /**
   * The budget cannot satisfy the diversity bounds. The run handle is
   * still produced.
   */
  PERSPEX_STATUS_INFEASIBLE = 8,
  /**
   * The run failed after starting. The run handle is still produced.
   */
  PERSPEX_STATUS_RUN_FAILED = 9,
  /**
   * A caller buffer is too small; the needed length was written.
   */
  PERSPEX_STATUS_BUFFER_TOO_SMALL = 10,
  PERSPEX_STATUS_SERIALIZATION = 11,
  PERSPEX_STATUS_INTERNAL = 12,
} PerspexStatus;

/**
 * Lifecycle state of a run.
 */
typedef enum {
  PERSPEX_RUN_STATE_COMPLETED = 0,
  PERSPEX_RUN_STATE_INFEASIBLE = 1,
  PERSPEX_RUN_STATE_FAILED = 2,
} PerspexRunState;

/**
 * A loaded dataset with optional labels.
 */
typedef struct PerspexDataset PerspexDataset;

/**
 * Trained cost and utility models.
 */
typedef struct PerspexModels PerspexModels;

/**
 * A finished exploration run.
 */
typedef struct PerspexRun PerspexRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Valid until the next call
 * into the library from the same thread.
 */
const char *perspex_last_error(void);

/**
 * Library version as a static string.
 */
const char *perspex_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void perspex_string_free(char *s);

/**
 * Loads a CSV file. `label_column` may be null, in which case a column
 * named `label` is used as labels when present.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
PerspexStatus perspex_dataset_load_csv(const char *path,
                                       const char *label_column,
                                       PerspexDataset **out_dataset);

/**
 * Rows and columns of a dataset, and whether it carries labels.
 *
 * # Safety
 * `dataset` must be a live handle; out-pointers must be writable.
 */
PerspexStatus perspex_dataset_shape(const PerspexDataset *dataset,
                                    size_t *out_rows,
                                    size_t *out_columns,
                                    bool *out_has_labels);

/**
 * # Safety
 * `dataset` must be null or a live handle, freed at most once.
 */
void perspex_dataset_free(PerspexDataset *dataset);

/**
 * Loads a model bundle written by `perspex train-meta`.
 *
 * # Safety
 * `path` must be NUL-terminated; `out_models` must be writable.
 */
PerspexStatus perspex_models_load(const char *path, PerspexModels **out_models);

/**
 * # Safety
 * `models` must be null or a live handle, freed at most once.
 */
void perspex_models_free(PerspexModels *models);

/**
 * Runs one exploration. `config_json` may be null for defaults, or a JSON
 * object with any run configuration fields (`t_total`, `g`, `strategy`,
 * `lower_bounds`, `seeds`, ...); the `dataset` and `models` fields are
 * ignored. The run handle is produced for completed, infeasible and failed
 * runs alike; the status tells them apart.
 *
 * # Safety
 * Handles must be live; `config_json` null or NUL-terminated; `out_run`
 * writable.
 */
PerspexStatus perspex_explore(const PerspexDataset *dataset,
                              const PerspexModels *models,
                              const char *config_json,
                              PerspexRun **out_run);

/**
 * # Safety
 * `run` must be null or a live handle, freed at most once.
 */
void perspex_run_free(PerspexRun *run);

/**
 * # Safety
 * `run` must be a live handle; `out_state` writable.
 */
PerspexStatus perspex_run_state(const PerspexRun *run, PerspexRunState *out_state);

/**
 * Number of executed detectors (rows of the outlier matrix).
 *
 * # Safety
 * `run` must be a live handle; `out_count` writable.
 */
PerspexStatus perspex_run_detector_count(const PerspexRun *run, size_t *out_count);

/**
 * Copies the ensemble score of every point into `buffer`. `out_len`
 * receives the number of points; when `capacity` is smaller, nothing is
 * copied and `BufferTooSmall` is returned.
 *
 * # Safety
 * `buffer` must hold `capacity` doubles (may be null when `capacity` is 0).
 */
PerspexStatus perspex_run_scores(const PerspexRun *run,
                                 double *buffer,
                                 size_t capacity,
                                 size_t *out_len);

/**
 * Re-factorizes the run's stored scores into `g` perspectives. No detector
 * runs again.
 *
 * # Safety
 * `run` must be a live handle not used concurrently.
 */
PerspexStatus perspex_run_refactorize(PerspexRun *run, size_t g);

/**
 * The perspective set and its rank-1 components as a JSON object.
 *
 * # Safety
 * `run` must be a live handle; `out_json` writable. Free the string with
 * [`perspex_string_free`].
 */
PerspexStatus perspex_run_perspectives_json(const PerspexRun *run, char **out_json);

/**
 * The whole run record as JSON.
 *
 * # Safety
 * `run` must be a live handle; `out_json` writable. Free the string with
 * [`perspex_string_free`].
 */
PerspexStatus perspex_run_json(const PerspexRun *run, char **out_json);

/**
 * Precision, recall and F at `n` of the run's ensemble against the
 * dataset's labels. Any out-pointer may be null.
 *
 * # Safety
 * `run` must be a live handle; non-null out-pointers writable.
 */
PerspexStatus perspex_run_metrics(const PerspexRun *run,
                                  size_t n,
                                  double *out_precision,
                                  double *out_recall,
                                  double *out_f);

/**
 * Fraction of the top `n` scores that carry a nonzero label.
 *
 * # Safety
 * `scores` and `labels` must hold `len` elements; `out_value` writable.
 */
PerspexStatus perspex_precision_at_n(const double *scores,
                                     const uint8_t *labels,
                                     size_t len,
                                     size_t n,
                                     double *out_value);

/**
 * Fraction of the labeled outliers found in the top `n` scores.
 *
 * # Safety
 * As [`perspex_precision_at_n`].
 */
PerspexStatus perspex_recall_at_n(const double *scores,
                                  const uint8_t *labels,
                                  size_t len,
                                  size_t n,
                                  double *out_value);

/**
 * Harmonic mean of precision and recall at `n`.
 *
 * # Safety
 * As [`perspex_precision_at_n`].
 */
PerspexStatus perspex_f_at_n(const double *scores,
                             const uint8_t *labels,
                             size_t len,
                             size_t n,
                             double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERSPEX_H */
