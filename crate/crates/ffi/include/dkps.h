/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef DKPS_H
#define DKPS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Marks a missing response in Rasch response matrices.
#define DKPS_RESPONSE_MISSING 255

// Result code of every fallible call.
typedef enum DkpsStatus {
  DKPS_STATUS_OK = 0,
  DKPS_STATUS_NULL_POINTER = 1,
  DKPS_STATUS_INVALID_ARGUMENT = 2,
  DKPS_STATUS_IO = 3,
  DKPS_STATUS_PARSE = 4,
  DKPS_STATUS_DATASET = 5,
  DKPS_STATUS_UNKNOWN_ID = 6,
  DKPS_STATUS_NUMERICAL = 7,
  DKPS_STATUS_CONFIG = 8,
  DKPS_STATUS_UTF8 = 9,
  DKPS_STATUS_PANIC = 10,
} DkpsStatus;

// Ensemble clipping order for [`DkpsPredictOptions`].
typedef enum DkpsClipOrder {
  DKPS_CLIP_ORDER_COMPONENTS_THEN_ENSEMBLE = 0,
  DKPS_CLIP_ORDER_ENSEMBLE_ONLY = 1,
} DkpsClipOrder;

// A loaded benchmark dataset.
typedef struct DkpsDataset DkpsDataset;

typedef struct DkpsShape {
  size_t num_models;
  size_t num_queries;
  size_t embedding_dim;
  size_t replicates;
  size_t num_families;
} DkpsShape;

typedef struct DkpsRaschDiagnostics {
  size_t iterations;
  bool converged;
  double log_likelihood;
} DkpsRaschDiagnostics;

typedef struct DkpsPredictOptions {
  size_t dim;
  // Ensemble weight; NaN selects m / M.
  double alpha;
  enum DkpsClipOrder clip_order;
  double irt_threshold;
  // Leave the target's whole family out of the references.
  bool exclude_family;
} DkpsPredictOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next library call on the same thread.
const char *dkps_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *dkps_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be null or a pointer returned by this library, freed once.
void dkps_string_free(char *s);

// Loads a dataset directory, detecting the embedding storage format.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer.
enum DkpsStatus dkps_dataset_load(const char *dir, struct DkpsDataset **out);

// Releases a dataset handle.
//
// # Safety
// `ds` must be null or a handle from this library, freed once.
void dkps_dataset_free(struct DkpsDataset *ds);

// Writes a dataset directory; `columnar` selects packed binary embeddings.
//
// # Safety
// `ds` must be a live handle and `dir` a NUL-terminated string.
enum DkpsStatus dkps_dataset_save(const struct DkpsDataset *ds, const char *dir, bool columnar);

// # Safety
// `ds` must be a live handle and `out` a valid pointer.
enum DkpsStatus dkps_dataset_shape(const struct DkpsDataset *ds, struct DkpsShape *out);

// Id of model `index`; release with [`dkps_string_free`].
//
// # Safety
// `ds` must be a live handle and `out` a valid pointer.
enum DkpsStatus dkps_dataset_model_id(const struct DkpsDataset *ds, size_t index, char **out);

// # Safety
// `ds` must be a live handle and `out` a valid pointer.
enum DkpsStatus dkps_dataset_benchmark_score(const struct DkpsDataset *ds,
                                             size_t index,
                                             double *out);

// Checks a dataset directory without loading it. `passed` is false when
// some model misses a query or a replicate; the reason is left in the last
// error message while the call still returns `Ok`.
//
// # Safety
// `dir` must be a NUL-terminated string and `passed` a valid pointer.
enum DkpsStatus dkps_dataset_validate(const char *dir, bool *passed);

// Classical MDS of a row-major `n x n` distance matrix into `dim`
// dimensions. Writes `n * dim` row-major coordinates, optionally the full
// descending spectrum (`n` values) and the count of clamped eigenvalues.
//
// # Safety
// `distances` must hold `n * n` values and `coordinates` room for
// `n * dim`; `eigenvalues` must be null or hold `n` values; `clamped` may
// be null.
enum DkpsStatus dkps_classical_mds(const double *distances,
                                   size_t n,
                                   size_t dim,
                                   double *coordinates,
                                   double *eigenvalues,
                                   size_t *clamped);

// Fits Rasch item difficulties to a row-major `rows x cols` matrix of
// responses (0, 1 or [`DKPS_RESPONSE_MISSING`]); writes `cols`
// mean-centred difficulties.
//
// # Safety
// `responses` must hold `rows * cols` bytes, `difficulties` room for
// `cols` values; `diagnostics` may be null.
enum DkpsStatus dkps_rasch_fit(const uint8_t *responses,
                               size_t rows,
                               size_t cols,
                               double *difficulties,
                               struct DkpsRaschDiagnostics *diagnostics);

// Maximum-likelihood ability for `n` binary responses to items of known
// difficulty. `standard_error` and `clamped` may be null.
//
// # Safety
// `responses` and `difficulties` must hold `n` values; `theta` must be valid.
enum DkpsStatus dkps_rasch_ability(const uint8_t *responses,
                                   const double *difficulties,
                                   size_t n,
                                   double *theta,
                                   double *standard_error,
                                   bool *clamped);

// Defaults: d = 8, alpha = m / M, components clipped before ensembling,
// IRT threshold 0.5, target family kept in the references.
struct DkpsPredictOptions dkps_predict_options_default(void);

// Predicts `target`'s benchmark score with `method` (a method name such as
// `"ensemble"` or `"dkps_knn1"`) from its responses to `queries`. Every
// other model is a reference. `options` may be null for the defaults.
//
// # Safety
// String arguments must be NUL-terminated; `queries` must hold
// `num_queries` strings; `out` must be valid.
enum DkpsStatus dkps_predict(const struct DkpsDataset *ds,
                             const char *target,
                             const char *const *queries,
                             size_t num_queries,
                             const char *method,
                             const struct DkpsPredictOptions *options,
                             double *out);

// Generates a synthetic population from TOML text with a `[population]`
// table (null for the defaults).
//
// # Safety
// `spec_toml` must be null or NUL-terminated; `out` must be valid.
enum DkpsStatus dkps_synth_generate(const char *spec_toml, struct DkpsDataset **out);

// Runs a leave-one-family-out evaluation described by TOML text (the
// `dkps evaluate` file format) and returns the summary CSV and, when
// `report_csv` is non-null, the per-cell report CSV. `workers = 0` uses
// every logical core. Release both strings with [`dkps_string_free`].
//
// # Safety
// `ds` must be a live handle, `config_toml` NUL-terminated, `summary_csv`
// valid and `report_csv` null or valid.
enum DkpsStatus dkps_evaluate(const struct DkpsDataset *ds,
                              const char *config_toml,
                              size_t workers,
                              char **summary_csv,
                              char **report_csv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DKPS_H */
