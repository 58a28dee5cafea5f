#ifndef BSNMANI_H
#define BSNMANI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BsnSampler {
  BSN_SAMPLER_JOINT = 0,
  BSN_SAMPLER_TWO_STAGE = 1,
} BsnSampler;

typedef enum BsnStatus {
  BSN_STATUS_OK = 0,
  BSN_STATUS_NULL_POINTER = 1,
  BSN_STATUS_INVALID_ARGUMENT = 2,
  BSN_STATUS_DIMENSION = 3,
  BSN_STATUS_CONFIG = 4,
  BSN_STATUS_NUMERICAL = 5,
  BSN_STATUS_IO = 6,
  BSN_STATUS_PANIC = 7,
} BsnStatus;

// Opaque set of subjects.
typedef struct BsnDataset BsnDataset;

// Opaque set of posterior draws.
typedef struct BsnPosterior BsnPosterior;

// Sampler settings; start from [`bsn_fit_options_default`].
typedef struct BsnFitOptions {
  size_t iters;
  size_t burn_in;
  size_t thin;
  uint64_t seed;
  size_t q;
  enum BsnSampler sampler;
} BsnFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *bsn_version(void);

// Copies the last error message of this thread into `buf` (truncated and
// NUL-terminated). Returns the full message length excluding the NUL.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t bsn_last_error(char *buf, size_t len);

struct BsnFitOptions bsn_fit_options_default(void);

// Builds a dataset from `n_subjects` networks on `n_nodes` nodes. `edges`
// holds one strict-lower-triangle vector (column-major order) per subject;
// `covariates` is `n_subjects x n_covariates` and may be null when
// `n_covariates` is 0.
//
// # Safety
// Buffers must hold the stated number of values; `out` must be writable.
enum BsnStatus bsn_dataset_new(size_t n_nodes,
                               size_t n_subjects,
                               size_t n_covariates,
                               const double *edges,
                               const double *outcomes,
                               const double *covariates,
                               struct BsnDataset **out);

// # Safety
// `data` must be null or a handle from [`bsn_dataset_new`] not yet freed.
void bsn_dataset_free(struct BsnDataset *data);

// Runs the selected sampler.
//
// # Safety
// `data` and `options` must be valid; `out` must be writable.
enum BsnStatus bsn_fit(const struct BsnDataset *data,
                       const struct BsnFitOptions *options,
                       struct BsnPosterior **out);

// # Safety
// `post` must be null or a handle from [`bsn_fit`] not yet freed.
void bsn_posterior_free(struct BsnPosterior *post);

// # Safety
// `post` must be valid and `out` writable.
enum BsnStatus bsn_posterior_draw_count(const struct BsnPosterior *post, size_t *out);

// Posterior means of the network coefficients (`beta_len` = q) and of the
// covariate coefficients (`alpha_len` = number of covariates).
//
// # Safety
// Output buffers must hold the stated number of values.
enum BsnStatus bsn_posterior_mean_coefficients(const struct BsnPosterior *post,
                                               double *beta,
                                               size_t beta_len,
                                               double *alpha,
                                               size_t alpha_len);

// Posterior mean of the subnetwork frame after aligning draws to the first,
// written row-major as `n_nodes x q`.
//
// # Safety
// `out` must hold `len` values.
enum BsnStatus bsn_posterior_mean_frame(const struct BsnPosterior *post, double *out, size_t len);

// Acceptance rate of the independence correction; two-stage fits only.
//
// # Safety
// `post` must be valid and `out` writable.
enum BsnStatus bsn_posterior_imh_acceptance(const struct BsnPosterior *post, double *out);

// Point predictions for every subject of `test`; `len` must equal its size.
//
// # Safety
// Handles must be valid; `out` must hold `len` values.
enum BsnStatus bsn_predict(const struct BsnPosterior *post,
                           const struct BsnDataset *test,
                           uint64_t seed,
                           double *out,
                           size_t len);

// `1 - SSE/SST` of `predictions` against `truths`.
//
// # Safety
// Both inputs must hold `len` values; `out` must be writable.
enum BsnStatus bsn_predictive_r2(const double *predictions,
                                 const double *truths,
                                 size_t len,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BSNMANI_H */
