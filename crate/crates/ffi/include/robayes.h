#ifndef ROBAYES_H
#define ROBAYES_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes shared by every entry point.
 */
typedef enum RobayesStatus {
  ROBAYES_STATUS_OK = 0,
  ROBAYES_STATUS_NULL_POINTER = 1,
  /**
   * Invalid configuration or unparsable JSON.
   */
  ROBAYES_STATUS_CONFIG = 2,
  /**
   * Training aborted on a non-finite objective.
   */
  ROBAYES_STATUS_TRAINING = 3,
  /**
   * A precondition on the arguments was violated.
   */
  ROBAYES_STATUS_CONTRACT = 4,
  ROBAYES_STATUS_SHAPE_MISMATCH = 5,
  ROBAYES_STATUS_IO = 6,
  /**
   * A string argument was not valid UTF-8.
   */
  ROBAYES_STATUS_INVALID_UTF8 = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  ROBAYES_STATUS_PANIC = 8,
} RobayesStatus;

/**
 * Opaque handle to a mean-field Gaussian posterior.
 */
typedef struct RobayesPosterior RobayesPosterior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next call that fails.
 */
const char *robayes_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *robayes_version(void);

/**
 * Loads a `checkpoint.json` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RobayesStatus robayes_posterior_load(const char *path, struct RobayesPosterior **out);

/**
 * Parses checkpoint JSON from memory.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RobayesStatus robayes_posterior_from_json(const char *json, struct RobayesPosterior **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `handle` must come from this library and not be used afterwards.
 */
void robayes_posterior_free(struct RobayesPosterior *handle);

/**
 * Number of coordinates, or 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or a live handle.
 */
size_t robayes_posterior_dim(const struct RobayesPosterior *handle);

/**
 * Copies the means into `out[0..len]`; `len` must equal the dimension.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum RobayesStatus robayes_posterior_mu(const struct RobayesPosterior *handle,
                                        double *out,
                                        size_t len);

/**
 * Copies the standard deviations `softplus(rho)`.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum RobayesStatus robayes_posterior_sigma(const struct RobayesPosterior *handle,
                                           double *out,
                                           size_t len);

/**
 * Writes `mu + sigma * eps` for caller-supplied standard-normal `eps`.
 *
 * # Safety
 * `eps` and `out` must each hold `len` doubles.
 */
enum RobayesStatus robayes_posterior_draw(const struct RobayesPosterior *handle,
                                          const double *eps,
                                          double *out,
                                          size_t len);

/**
 * `KL(q || prior)` using the prior stored in the checkpoint.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum RobayesStatus robayes_posterior_kl(const struct RobayesPosterior *handle, double *out);

/**
 * `KL(N(mu, diag sigma^2) || N(prior_mean, prior_variance I))`.
 *
 * # Safety
 * `mu` and `sigma` must hold `d` doubles.
 */
enum RobayesStatus robayes_kl_gaussian(const double *mu,
                                       const double *sigma,
                                       size_t d,
                                       double prior_mean,
                                       double prior_variance,
                                       double *out);

/**
 * `-log_t(p)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum RobayesStatus robayes_t_log_loss(double p, double t, double *out);

/**
 * (m, t) training loss from an `m × n` row-major matrix of per-model probabilities.
 *
 * # Safety
 * `probs` must hold `m * n` doubles.
 */
enum RobayesStatus robayes_mt_loss(const double *probs, size_t m, size_t n, double t, double *out);

/**
 * Expected calibration error of `n × k` predictive probabilities with `bins` bins.
 *
 * # Safety
 * `probs` must hold `n * k` doubles and `labels` `n` entries.
 */
enum RobayesStatus robayes_ece(const double *probs,
                               size_t n,
                               size_t k,
                               const size_t *labels,
                               size_t bins,
                               double *out);

/**
 * Fraction of rows whose argmax matches the label.
 *
 * # Safety
 * `probs` must hold `n * k` doubles and `labels` `n` entries.
 */
enum RobayesStatus robayes_accuracy(const double *probs,
                                    size_t n,
                                    size_t k,
                                    const size_t *labels,
                                    double *out);

/**
 * AUROC with in-distribution scores expected to be higher.
 *
 * # Safety
 * `id` and `ood` must hold `n_id` and `n_ood` doubles.
 */
enum RobayesStatus robayes_auroc(const double *id,
                                 size_t n_id,
                                 const double *ood,
                                 size_t n_ood,
                                 double *out);

/**
 * Squared MMD between `nx × dim` and `ny × dim` samples.
 *
 * # Safety
 * `x` and `y` must hold `nx * dim` and `ny * dim` doubles.
 */
enum RobayesStatus robayes_mmd(const double *x,
                               size_t nx,
                               const double *y,
                               size_t ny,
                               size_t dim,
                               double *out);

/**
 * Mean negative log of predictive densities.
 *
 * # Safety
 * `densities` must hold `n` doubles.
 */
enum RobayesStatus robayes_nll(const double *densities, size_t n, double *out);

/**
 * Mean error norm between `n × dim` predictions and targets; squared norms when `squared`.
 *
 * # Safety
 * `pred` and `targets` must each hold `n * dim` doubles.
 */
enum RobayesStatus robayes_mse(const double *pred,
                               const double *targets,
                               size_t n,
                               size_t dim,
                               bool squared,
                               double *out);

/**
 * Runs every cell and seed of a config file, writing outputs under `out_dir`.
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
enum RobayesStatus robayes_run_experiment(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBAYES_H */
