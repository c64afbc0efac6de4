#ifndef GPMNET_H
#define GPMNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GpmPenalty {
  GPM_PENALTY_L1 = 0,
  GPM_PENALTY_ADAPTIVE_L1 = 1,
  GPM_PENALTY_SCAD = 2,
  GPM_PENALTY_MCP = 3,
} GpmPenalty;

typedef enum GpmStatus {
  GPM_STATUS_OK = 0,
  GPM_STATUS_NULL_POINTER = 1,
  GPM_STATUS_INVALID_ARGUMENT = 2,
  GPM_STATUS_PARSE = 3,
  GPM_STATUS_IO = 4,
  GPM_STATUS_NUMERIC = 5,
  GPM_STATUS_BUFFER_TOO_SMALL = 6,
  GPM_STATUS_PANIC = 7,
} GpmStatus;

typedef struct GpmDataset GpmDataset;

typedef struct GpmFit GpmFit;

typedef struct GpmGraph GpmGraph;

/**
 * Fit options; fill with [`gpm_fit_options_default`] before editing.
 */
typedef struct GpmFitOptions {
  enum GpmPenalty penalty;
  double lambda;
  uint32_t max_iters;
  double lr;
  /**
   * Number of RBF centers; 0 picks the default.
   */
  uint32_t k;
  /**
   * Minibatch size; 0 is full batch.
   */
  uint32_t batch;
  uint64_t seed;
  /**
   * Absolute edge threshold; negative selects the gap rule.
   */
  double tau;
} GpmFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes of the last error message on this thread, excluding the
 * terminating NUL; 0 when there is none.
 */
size_t gpm_last_error_length(void);

/**
 * Copies the last error message (NUL-terminated) into `buf`. Returns the
 * number of bytes written excluding the NUL, or -1 if `buf` is null or too
 * small.
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes.
 */
int64_t gpm_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gpm_version(void);

/**
 * Loads a dataset from a CSV or JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GpmStatus gpm_dataset_load(const char *path, struct GpmDataset **out);

/**
 * Builds an all-continuous dataset from `n × d` row-major values.
 *
 * # Safety
 * `values` must point to `n * d` doubles; `out` must be writable.
 */
enum GpmStatus gpm_dataset_from_continuous(const double *values,
                                           size_t n,
                                           size_t d,
                                           struct GpmDataset **out);

/**
 * Generates a synthetic dataset and its true graph. `family` is one of
 * `butterfly-c`, `butterfly-d`, `butterfly-m`, `random-c`, `random-d`,
 * `random-m`.
 *
 * # Safety
 * `family` must be NUL-terminated; `out_data` and `out_truth` writable.
 */
enum GpmStatus gpm_generate(const char *family,
                            size_t d,
                            size_t n,
                            uint64_t seed,
                            struct GpmDataset **out_data,
                            struct GpmGraph **out_truth);

/**
 * # Safety
 * `ds` must be null or a handle from this library, not yet freed.
 */
void gpm_dataset_free(struct GpmDataset *ds);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t gpm_dataset_rows(const struct GpmDataset *ds);

/**
 * Number of variables, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t gpm_dataset_cols(const struct GpmDataset *ds);

/**
 * # Safety
 * `opts` must be writable.
 */
enum GpmStatus gpm_fit_options_default(struct GpmFitOptions *opts);

/**
 * Fits a model to `ds` and extracts its graph.
 *
 * # Safety
 * `ds` must be a live handle; `opts` readable; `out` writable.
 */
enum GpmStatus gpm_fit(const struct GpmDataset *ds,
                       const struct GpmFitOptions *opts,
                       struct GpmFit **out);

/**
 * # Safety
 * `f` must be null or a live handle.
 */
void gpm_fit_free(struct GpmFit *f);

/**
 * # Safety
 * `f` must be null or a live handle.
 */
size_t gpm_fit_iterations(const struct GpmFit *f);

/**
 * 1 when training met the convergence rule, 0 otherwise.
 *
 * # Safety
 * `f` must be null or a live handle.
 */
int32_t gpm_fit_converged(const struct GpmFit *f);

/**
 * Copies the `d × d` GPM (row-major) into `buf`. `rooted` nonzero selects
 * the rooted convention.
 *
 * # Safety
 * `f` must be a live handle; `buf` must hold `len` doubles.
 */
enum GpmStatus gpm_fit_omega(const struct GpmFit *f, int32_t rooted, double *buf, size_t len);

/**
 * New graph handle holding the fitted graph.
 *
 * # Safety
 * `f` must be a live handle; `out` writable.
 */
enum GpmStatus gpm_fit_graph(const struct GpmFit *f, struct GpmGraph **out);

/**
 * # Safety
 * `g` must be null or a live handle.
 */
void gpm_graph_free(struct GpmGraph *g);

/**
 * # Safety
 * `g` must be null or a live handle.
 */
size_t gpm_graph_edge_count(const struct GpmGraph *g);

/**
 * Writes edges as `(i, j)` pairs with `i < j`, in ascending order, into
 * `buf` (`2 * edge_count` entries).
 *
 * # Safety
 * `g` must be a live handle; `buf` must hold `len` values.
 */
enum GpmStatus gpm_graph_edges(const struct GpmGraph *g, uint32_t *buf, size_t len);

/**
 * Hamming distance between two graphs over the same variables.
 *
 * # Safety
 * `a`, `b` must be live handles; `out` writable.
 */
enum GpmStatus gpm_graph_hamming(const struct GpmGraph *a, const struct GpmGraph *b, size_t *out);

/**
 * Runs the exact oracle battery; `*passed` is 1 iff every check passed.
 *
 * # Safety
 * `passed` must be writable.
 */
enum GpmStatus gpm_verify(size_t trials, uint64_t seed, int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPMNET_H */
