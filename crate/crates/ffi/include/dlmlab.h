#ifndef DLMLAB_H
#define DLMLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DlmStatus {
  DLM_STATUS_OK = 0,
  DLM_STATUS_NULL_POINTER = 1,
  DLM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Bad config, checkpoint or dataset contents.
   */
  DLM_STATUS_VALIDATION = 3,
  /**
   * Non-finite values during a computation.
   */
  DLM_STATUS_NUMERICAL = 4,
  DLM_STATUS_IO = 5,
  DLM_STATUS_PANIC = 6,
} DlmStatus;

/**
 * A loaded training checkpoint.
 */
typedef struct DlmCheckpoint DlmCheckpoint;

/**
 * A mean-field Gaussian posterior.
 */
typedef struct DlmPosterior DlmPosterior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The calling thread's last error message; never NULL.
 */
const char *dlm_last_error(void);

/**
 * Creates a posterior from means and raw scales `rho` (`σ = softplus(ρ)`).
 *
 * # Safety
 * `mu` and `rho` must point to `dim` readable doubles; `out` must be
 * writable.
 */
enum DlmStatus dlm_posterior_new(const double *mu,
                                 const double *rho,
                                 size_t dim,
                                 struct DlmPosterior **out);

/**
 * Creates a posterior from means and variances.
 *
 * # Safety
 * As for [`dlm_posterior_new`].
 */
enum DlmStatus dlm_posterior_from_mean_variance(const double *mu,
                                                const double *variance,
                                                size_t dim,
                                                struct DlmPosterior **out);

/**
 * Releases a posterior. NULL is ignored.
 *
 * # Safety
 * `q` must come from this library and not be used afterwards.
 */
void dlm_posterior_free(struct DlmPosterior *q);

/**
 * Number of parameters; 0 for NULL.
 *
 * # Safety
 * `q` must be NULL or a live posterior.
 */
size_t dlm_posterior_dim(const struct DlmPosterior *q);

/**
 * Copies `μ` into `out[0..len]`; `len` must equal the dimension.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum DlmStatus dlm_posterior_mean(const struct DlmPosterior *q, double *out, size_t len);

/**
 * Copies `σ²` into `out[0..len]`; `len` must equal the dimension.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum DlmStatus dlm_posterior_variance(const struct DlmPosterior *q, double *out, size_t len);

/**
 * `KL(q ‖ N(0, prior_variance·I))`.
 *
 * # Safety
 * `q` must be a live posterior and `out` writable.
 */
enum DlmStatus dlm_kl_to_prior(const struct DlmPosterior *q, double prior_variance, double *out);

/**
 * Projects onto `‖μ‖₂ ≤ b_m`, `σ² ≤ b_v` and returns a new posterior.
 *
 * # Safety
 * `q` must be a live posterior and `out` writable.
 */
enum DlmStatus dlm_project(const struct DlmPosterior *q,
                           double b_m,
                           double b_v,
                           struct DlmPosterior **out);

/**
 * `(1−α)·a + α·b` in mean and variance.
 *
 * # Safety
 * `a`, `b` must be live posteriors and `out` writable.
 */
enum DlmStatus dlm_interpolate(const struct DlmPosterior *a,
                               const struct DlmPosterior *b,
                               double alpha,
                               struct DlmPosterior **out);

/**
 * `ln((1−a)·exp(logp) + a)` for `0 ≤ a < 1`.
 *
 * # Safety
 * `out` must be writable.
 */
enum DlmStatus dlm_smoothed_log(double logp, double a, double *out);

/**
 * Exact DLM and ELBO per-example losses of `q` on the Gaussian-mean model
 * `y = θ + N(0, noise_variance·I)`.
 *
 * # Safety
 * `y` must point to `dim` doubles matching the posterior's dimension; the
 * out pointers must be writable.
 */
enum DlmStatus dlm_conjugate_exact_losses(const struct DlmPosterior *q,
                                          const double *y,
                                          size_t dim,
                                          double noise_variance,
                                          double *dlm_out,
                                          double *elbo_out);

/**
 * The reference regularized-versus-constrained grid check at `eta`.
 * Writes `A_η` and whether the two problems agree (1) or not (0).
 *
 * # Safety
 * The out pointers must be writable.
 */
enum DlmStatus dlm_prop1_check(double eta, double *a_eta_out, int32_t *pass_out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` writable.
 */
enum DlmStatus dlm_checkpoint_load(const char *path_str, struct DlmCheckpoint **out);

/**
 * Releases a checkpoint. NULL is ignored.
 *
 * # Safety
 * `c` must come from this library and not be used afterwards.
 */
void dlm_checkpoint_free(struct DlmCheckpoint *c);

/**
 * A copy of the checkpoint's posterior, owned by the caller.
 *
 * # Safety
 * `c` must be a live checkpoint and `out` writable.
 */
enum DlmStatus dlm_checkpoint_posterior(const struct DlmCheckpoint *c, struct DlmPosterior **out);

/**
 * Seed and completed epochs of a checkpoint.
 *
 * # Safety
 * `c` must be a live checkpoint; the out pointers writable.
 */
enum DlmStatus dlm_checkpoint_info(const struct DlmCheckpoint *c,
                                   uint64_t *seed_out,
                                   size_t *epochs_out);

/**
 * Trains as described by the config file and writes the run directory
 * (`config.cfg`, `trajectory.csv`, `timing.csv`, `checkpoint.json`).
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
enum DlmStatus dlm_train(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLMLAB_H */
