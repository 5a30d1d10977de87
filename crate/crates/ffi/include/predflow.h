#ifndef PREDFLOW_H
#define PREDFLOW_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_DIMENSION_MISMATCH = 2,
  PF_STATUS_NOT_POSITIVE_DEFINITE = 3,
  PF_STATUS_SINGULAR_SCALE = 4,
  PF_STATUS_DEGENERATE_DATA = 5,
  PF_STATUS_MODEL_NOT_LINEAR = 6,
  PF_STATUS_DIVERGED = 7,
  PF_STATUS_INVALID_ARGUMENT = 8,
  PF_STATUS_BAD_FORMAT = 9,
  PF_STATUS_CONFIG_INVALID = 10,
  PF_STATUS_IO = 11,
  PF_STATUS_PANIC = 12,
} PfStatus;

/**
 * Affine flow `v = shift + scale·u`, e.g. a fitted whitening transform.
 */
typedef struct PfFlow PfFlow;

/**
 * Linear-Gaussian generative model.
 */
typedef struct PfModel PfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len` bytes) and returns the full message length. Pass a
 * null `buf` to query the length.
 */
size_t pf_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pf_version(void);

/**
 * New identity-link linear model with `latent_dim` latents and `obs_dim`
 * observations. `weight` is `obs_dim × latent_dim`.
 */
enum PfStatus pf_model_linear_new(size_t latent_dim,
                                  size_t obs_dim,
                                  const double *weight,
                                  const double *bias,
                                  const double *obs_std,
                                  const double *prior_mean,
                                  const double *prior_std,
                                  struct PfModel **model_out);

/**
 * Loads a linear model checkpoint written by the `predflow` CLI.
 */
enum PfStatus pf_model_load(const char *path, struct PfModel **model_out);

/**
 * Writes the model as a checkpoint file.
 */
enum PfStatus pf_model_save(const struct PfModel *model, const char *path);

void pf_model_free(struct PfModel *model);

/**
 * Latent and observation dimensions.
 */
enum PfStatus pf_model_dims(const struct PfModel *model, size_t *latent_dim, size_t *obs_dim);

/**
 * Exact Gaussian posterior `p(z | x)`: mean (`latent_dim`) and covariance
 * (`latent_dim²`, row-major).
 */
enum PfStatus pf_exact_posterior(const struct PfModel *model,
                                 const double *x,
                                 size_t x_len,
                                 double *mean_out,
                                 double *cov_out);

/**
 * `log p(x)` under the model.
 */
enum PfStatus pf_exact_log_marginal(const struct PfModel *model,
                                    const double *x,
                                    size_t x_len,
                                    double *value_out);

/**
 * Gradient-ascent MAP inference from `init` (`latent_dim` values). Writes
 * the estimate to `z_out` and the number of accepted steps to `steps_out`
 * (which may be null). Non-positive `step`, `tol` or zero `max_steps`
 * select the defaults (0.05, 1e-8, 10000).
 */
enum PfStatus pf_pc_inference(const struct PfModel *model,
                              const double *x,
                              size_t x_len,
                              const double *init,
                              double step,
                              size_t max_steps,
                              double tol,
                              double *z_out,
                              size_t *steps_out);

/**
 * Closed-form ELBO of the diagonal Gaussian `q = N(mean, exp(log_std)²)`.
 */
enum PfStatus pf_elbo_analytic(const struct PfModel *model,
                               const double *x,
                               size_t x_len,
                               const double *mean,
                               const double *log_std,
                               double beta,
                               double *value_out);

/**
 * Affine flow with `dim`-vector `shift` and invertible `dim × dim` `scale`.
 */
enum PfStatus pf_flow_new(size_t dim,
                          const double *shift,
                          const double *scale,
                          struct PfFlow **flow_out);

/**
 * Fits ZCA whitening to `rows × cols` data. The flow maps white noise to
 * data; its inverse whitens.
 */
enum PfStatus pf_fit_zca(const double *data, size_t rows, size_t cols, struct PfFlow **flow_out);

/**
 * Fits Cholesky (lower-triangular) whitening; see [`pf_fit_zca`].
 */
enum PfStatus pf_fit_cholesky(const double *data,
                              size_t rows,
                              size_t cols,
                              struct PfFlow **flow_out);

size_t pf_flow_dim(const struct PfFlow *flow);

/**
 * `v = shift + scale·u` and `log|det scale|`.
 */
enum PfStatus pf_flow_forward(const struct PfFlow *flow,
                              const double *u,
                              double *v_out,
                              double *logdet_out);

/**
 * `u = scale⁻¹(v − shift)` and `−log|det scale|`.
 */
enum PfStatus pf_flow_inverse(const struct PfFlow *flow,
                              const double *v,
                              double *u_out,
                              double *logdet_out);

/**
 * The whitening matrix `scale⁻¹` (`dim²`, row-major).
 */
enum PfStatus pf_flow_whitening_matrix(const struct PfFlow *flow, double *matrix_out);

void pf_flow_free(struct PfFlow *flow);

/**
 * Runs a CLI sub-command (`"train"`, `"infer"`, `"whiten"`,
 * `"compare-inference"`, `"eval-elbo"`, `"gen-data"`) on a config file.
 * `out_dir` may be null to use the config's output directory.
 */
enum PfStatus pf_run_experiment(const char *command, const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PREDFLOW_H */
