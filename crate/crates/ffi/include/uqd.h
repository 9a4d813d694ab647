#ifndef UQD_H
#define UQD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UqdStatus {
  UQD_STATUS_OK = 0,
  UQD_STATUS_NULL_POINTER = 1,
  UQD_STATUS_DIMENSION = 2,
  UQD_STATUS_DOMAIN = 3,
  UQD_STATUS_CONTRACT = 4,
  UQD_STATUS_PARAMETER = 5,
  UQD_STATUS_EMPTY_SAMPLES = 6,
  UQD_STATUS_METHOD_MISMATCH = 7,
  UQD_STATUS_CONFIG = 8,
  UQD_STATUS_FORMAT = 9,
  UQD_STATUS_IO = 10,
  UQD_STATUS_DIVERGED = 11,
  UQD_STATUS_STATE = 12,
  UQD_STATUS_PANIC = 99,
} UqdStatus;

typedef enum UqdTask {
  UQD_TASK_REGRESSION = 0,
  UQD_TASK_CLASSIFICATION = 1,
} UqdTask;

// Loaded model plus the configuration it was trained with.
typedef struct UqdModel UqdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty if none. The
// pointer stays valid until the next failing call on the same thread.
const char *uqd_last_error_message(void);

// NUL-terminated library version.
const char *uqd_version(void);

// Mixture mean and variance of `m` Gaussian samples.
//
// # Safety
// `means` and `variances` must point to `m` readable doubles; the outputs
// must be valid for writes.
enum UqdStatus uqd_combine_gaussian_mixture(const double *means,
                                            const double *variances,
                                            size_t m,
                                            double *out_mean,
                                            double *out_variance);

// Aleatoric and epistemic variance of `m` Gaussian samples.
//
// # Safety
// As for [`uqd_combine_gaussian_mixture`].
enum UqdStatus uqd_decompose_variance(const double *means,
                                      const double *variances,
                                      size_t m,
                                      double *out_aleatoric,
                                      double *out_epistemic);

// Sampling softmax of one logit distribution with `n_samples` draws from
// the stream `(seed, stream_id)`.
//
// # Safety
// `mu`, `var` and `out_probs` must each hold `classes` doubles.
enum UqdStatus uqd_sampling_softmax(const double *mu,
                                    const double *var,
                                    size_t classes,
                                    size_t n_samples,
                                    uint64_t seed,
                                    uint64_t stream_id,
                                    double *out_probs);

// Shannon entropy in nats.
//
// # Safety
// `p` must hold `n` doubles; `out` must be valid for writes.
enum UqdStatus uqd_entropy(const double *p, size_t n, double *out);

// Disentangles `m` logit samples of `classes` classes.
//
// Writes `p_pred`, `p_ale`, `p_epi` (each `classes` long) and the entropies
// `[h_pred, h_ale, h_epi]`.
//
// # Safety
// `logit_means` and `logit_vars` must hold `m * classes` doubles; the
// probability outputs `classes` doubles each and `out_entropies` three.
enum UqdStatus uqd_classification_uncertainty(const double *logit_means,
                                              const double *logit_vars,
                                              size_t m,
                                              size_t classes,
                                              size_t n_samples,
                                              uint64_t seed,
                                              double *out_p_pred,
                                              double *out_p_ale,
                                              double *out_p_epi,
                                              double *out_entropies);

// Loads a model directory written by `uqd train`.
//
// # Safety
// `dir` must be a NUL-terminated path; `out_model` must be valid for writes.
enum UqdStatus uqd_model_load(const char *dir, struct UqdModel **out_model);

// Releases a model; `NULL` is ignored.
//
// # Safety
// `model` must come from [`uqd_model_load`] and not have been freed.
void uqd_model_free(struct UqdModel *model);

// # Safety
// `model` must be a live handle; `out_task` valid for writes.
enum UqdStatus uqd_model_task(const struct UqdModel *model, enum UqdTask *out_task);

// Number of member networks (ensemble size, or 1).
//
// # Safety
// `model` must be a live handle; `out_count` valid for writes.
enum UqdStatus uqd_model_member_count(const struct UqdModel *model, size_t *out_count);

// Evaluates a regression model at `n` inputs and writes `n` rows of
// `[mu, sigma, sigma_ale, sigma_epi]`.
//
// # Safety
// `model` must be a live handle; `xs` must hold `n` doubles and `out_rows`
// `4 * n`.
enum UqdStatus uqd_model_eval_regression(const struct UqdModel *model,
                                         const double *xs,
                                         size_t n,
                                         uint64_t seed,
                                         double *out_rows);

// Evaluates a classification model on `n` inputs of dimension `dim` and
// writes `n` rows of `[h_pred, h_ale, h_epi]`.
//
// # Safety
// `model` must be a live handle; `inputs` must hold `n * dim` doubles and
// `out_entropies` `3 * n`.
enum UqdStatus uqd_model_eval_classification(const struct UqdModel *model,
                                             const double *inputs,
                                             size_t n,
                                             size_t dim,
                                             uint64_t seed,
                                             double *out_entropies);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UQD_H */
