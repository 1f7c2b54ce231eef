#ifndef HRT_H
#define HRT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum HrtStatus {
  HRT_STATUS_OK = 0,
  HRT_STATUS_NULL_POINTER = 1,
  HRT_STATUS_INVALID_ARGUMENT = 2,
  HRT_STATUS_DATA = 3,
  HRT_STATUS_NUMERICAL = 4,
  HRT_STATUS_EXTERNAL = 5,
  HRT_STATUS_IO = 6,
  HRT_STATUS_PANIC = 7,
} HrtStatus;

// A feature matrix with its response.
typedef struct HrtDataset HrtDataset;

// Completed per-feature test results.
typedef struct HrtRun HrtRun;

// Summary of one tested feature.
typedef struct HrtFeatureSummary {
  size_t feature;
  double p_value;
  // Observed risk.
  double t;
  // Null sample count.
  size_t k;
  double weight_sum;
} HrtFeatureSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next call.
const char *hrt_last_error(void);

// Library version as a static NUL-terminated string.
const char *hrt_version(void);

// Builds a dataset from a row-major `n × p` feature buffer and an `n`-vector response.
//
// # Safety
// `features` must point to `n * p` doubles, `response` to `n` doubles, and `out` must be writable.
enum HrtStatus hrt_dataset_new(const double *features,
                               size_t n,
                               size_t p,
                               const double *response,
                               struct HrtDataset **out);

// Loads a CSV with a header row; `response` names the target column.
//
// # Safety
// `path` and `response` must be NUL-terminated strings and `out` must be writable.
enum HrtStatus hrt_dataset_from_csv(const char *path,
                                    const char *response,
                                    struct HrtDataset **out);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle from this library.
size_t hrt_dataset_n_samples(const struct HrtDataset *ds);

// Number of feature columns, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle from this library.
size_t hrt_dataset_n_features(const struct HrtDataset *ds);

// Releases a dataset; null is ignored.
//
// # Safety
// `ds` must be null or a handle not yet freed.
void hrt_dataset_free(struct HrtDataset *ds);

// Tests every feature. `model_json` and `config_json` hold a serialized
// predictor spec and engine config; null selects the defaults (lasso, and
// the default engine config).
//
// # Safety
// `ds` must be a live dataset handle, the JSON pointers null or NUL-terminated, and `out` writable.
enum HrtStatus hrt_run(const struct HrtDataset *ds,
                       const char *model_json,
                       const char *config_json,
                       uint64_t seed,
                       struct HrtRun **out);

// Number of tested features, or 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle from this library.
size_t hrt_run_len(const struct HrtRun *run);

// Predictor r² on held-out rows, or NaN for a null handle.
//
// # Safety
// `run` must be null or a live handle from this library.
double hrt_run_r2(const struct HrtRun *run);

// Copies the summary of the `index`-th tested feature into `out`.
//
// # Safety
// `run` must be a live handle and `out` writable.
enum HrtStatus hrt_run_feature(const struct HrtRun *run,
                               size_t index,
                               struct HrtFeatureSummary *out);

// Releases a run; null is ignored.
//
// # Safety
// `run` must be null or a handle not yet freed.
void hrt_run_free(struct HrtRun *run);

// Importance-weighted p-value `(1 + Σ 1{t ≥ t̃}·W) / (1 + Σ W)` over `k` nulls.
//
// # Safety
// `nulls` and `weights` must point to `k` doubles and `out` must be writable.
enum HrtStatus hrt_weighted_pvalue(double t,
                                   const double *nulls,
                                   const double *weights,
                                   size_t k,
                                   double *out);

// Benjamini–Hochberg at level `alpha`; writes 1 into `selected[i]` for each discovery, 0 otherwise.
//
// # Safety
// `pvalues` must point to `m` doubles and `selected` to `m` writable bytes.
enum HrtStatus hrt_bh(const double *pvalues,
                      size_t m,
                      double alpha,
                      uint8_t *selected);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HRT_H */
