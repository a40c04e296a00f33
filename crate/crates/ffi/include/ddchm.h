#ifndef DDCHM_H
#define DDCHM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum DdchmStatus {
  DDCHM_STATUS_OK = 0,
  DDCHM_STATUS_NULL_POINTER = 1,
  DDCHM_STATUS_INVALID_ARGUMENT = 2,
  DDCHM_STATUS_CONFIG = 3,
  DDCHM_STATUS_IO = 4,
  DDCHM_STATUS_FORMAT = 5,
  DDCHM_STATUS_NUMERICAL = 6,
  DDCHM_STATUS_VERSION = 7,
  DDCHM_STATUS_PANIC = 8,
} DdchmStatus;

/**
 * Opaque trainer: model parameters, recognition network, readouts and
 * optimiser state.
 */
typedef struct DdchmTrainer DdchmTrainer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ddchm_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *ddchm_version(void);

/**
 * Builds a trainer from TOML with `[model]`, optional `observed_dim`,
 * `[recognition]` and `[train]` sections, using the same keys as the
 * experiment config.
 *
 * # Safety
 * `spec_toml` must be a nul-terminated string and `out` a valid pointer.
 */
enum DdchmStatus ddchm_trainer_new(const char *spec_toml, struct DdchmTrainer **out);

/**
 * Releases a trainer; null is ignored.
 *
 * # Safety
 * `trainer` must come from this library and not be used afterwards.
 */
void ddchm_trainer_free(struct DdchmTrainer *trainer);

/**
 * Width of the observed layer.
 *
 * # Safety
 * `trainer` must be a live handle and `out` a valid pointer.
 */
enum DdchmStatus ddchm_trainer_observed_dim(const struct DdchmTrainer *trainer, size_t *out);

/**
 * Trains for `epochs` epochs on `rows × cols` row-major data. Training
 * that hits a non-finite value stops, keeps the last good state and
 * returns `Numerical`; `epochs_done` (may be null) receives the count of
 * completed epochs either way.
 *
 * # Safety
 * `data` must hold `rows × cols` doubles; `trainer` must be a live handle.
 */
enum DdchmStatus ddchm_trainer_train(struct DdchmTrainer *trainer,
                                     const double *data,
                                     size_t rows,
                                     size_t cols,
                                     size_t epochs,
                                     size_t *epochs_done);

/**
 * Writes `n` ancestral samples of x, row-major, into `out` which must hold
 * `n × observed_dim` doubles (`out_len`).
 *
 * # Safety
 * `out` must be writable for `out_len` doubles.
 */
enum DdchmStatus ddchm_trainer_sample(const struct DdchmTrainer *trainer,
                                      size_t n,
                                      uint64_t seed,
                                      double *out,
                                      size_t out_len);

/**
 * Saves a versioned JSON checkpoint.
 *
 * # Safety
 * `path` must be a nul-terminated string; `trainer` a live handle.
 */
enum DdchmStatus ddchm_trainer_save(const struct DdchmTrainer *trainer, const char *path);

/**
 * Restores a trainer saved by [`ddchm_trainer_save`] or the CLI.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum DdchmStatus ddchm_trainer_load(const char *path, struct DdchmTrainer **out);

/**
 * Unbiased MMD² between row-major samples `x` (`nx × dim`) and `y`
 * (`ny × dim`) under a Gaussian kernel. A `bandwidth` ≤ 0 selects the
 * median heuristic on `x`.
 *
 * # Safety
 * Buffers must hold the stated number of doubles.
 */
enum DdchmStatus ddchm_mmd2_unbiased(const double *x,
                                     size_t nx,
                                     const double *y,
                                     size_t ny,
                                     size_t dim,
                                     double bandwidth,
                                     double *out);

/**
 * Relative three-sample test: is `y` significantly closer to the reference
 * `x` than `z` is? Writes `MMD²_u(x,y) − MMD²_u(x,z)` and the p-value for
 * the null that it is not.
 *
 * # Safety
 * Buffers must hold the stated number of doubles.
 */
enum DdchmStatus ddchm_relative_mmd_test(const double *x,
                                         size_t nx,
                                         const double *y,
                                         size_t ny,
                                         const double *z,
                                         size_t nz,
                                         size_t dim,
                                         double bandwidth,
                                         double *statistic,
                                         double *p_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDCHM_H */
