#ifndef CRMH_H
#define CRMH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CrmhStatus {
  CRMH_STATUS_OK = 0,
  CRMH_STATUS_NULL_POINTER = 1,
  CRMH_STATUS_INVALID_PARAMETER = 2,
  CRMH_STATUS_DEGENERATE = 3,
  CRMH_STATUS_CORRUPT_STATE = 4,
  CRMH_STATUS_TOO_LARGE = 5,
  CRMH_STATUS_BUFFER_TOO_SMALL = 6,
  CRMH_STATUS_PANIC = 7,
  CRMH_STATUS_OTHER = 8,
} CrmhStatus;

// Opaque sampler handle.
typedef struct CrmhSampler CrmhSampler;

// Per-iteration summary written by [`crmh_sampler_step`]. Optional values
// are NaN when the model does not define them.
typedef struct CrmhMetrics {
  double train_ll;
  double test_ll;
  size_t num_components;
  double b_star;
  double extra;
} CrmhMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Hybrid Dirichlet-process mixture with a Gaussian base measure
// `N(0, prior_var·I)` and isotropic noise `obs_var`. `test` may be null
// when `n_test` is 0.
//
// # Safety
// `train` must hold `n·dim` doubles, `test` `n_test·dim`, and `out` must be
// writable.
enum CrmhStatus crmh_dpmm_new(const double *train,
                              size_t n,
                              const double *test,
                              size_t n_test,
                              size_t dim,
                              double alpha,
                              double prior_var,
                              double obs_var,
                              uint64_t seed,
                              struct CrmhSampler **out);

// Pitman-Yor version of [`crmh_dpmm_new`] with discount `sigma` in [0, 1).
//
// # Safety
// As for [`crmh_dpmm_new`].
enum CrmhStatus crmh_pymm_new(const double *train,
                              size_t n,
                              const double *test,
                              size_t n_test,
                              size_t dim,
                              double alpha,
                              double sigma,
                              double prior_var,
                              double obs_var,
                              uint64_t seed,
                              struct CrmhSampler **out);

// Hybrid linear-Gaussian latent feature model under a beta-Bernoulli
// process with mass `alpha` and concentration `c`. Every row starts with
// one shared feature.
//
// # Safety
// As for [`crmh_dpmm_new`].
enum CrmhStatus crmh_ibp_new(const double *train,
                             size_t n,
                             const double *test,
                             size_t n_test,
                             size_t dim,
                             double alpha,
                             double c,
                             double feature_var,
                             double noise_var,
                             uint64_t seed,
                             struct CrmhSampler **out);

// Hybrid HDP mixture; `groups[i]` is the restaurant of row `i`.
//
// # Safety
// As for [`crmh_dpmm_new`]; `groups` must hold `n` values.
enum CrmhStatus crmh_hdp_new(const double *train,
                             const uint32_t *groups,
                             size_t n,
                             const double *test,
                             size_t n_test,
                             size_t dim,
                             double alpha,
                             double gamma,
                             double prior_var,
                             double obs_var,
                             uint64_t seed,
                             struct CrmhSampler **out);

// One sweep plus one global step. `metrics` may be null.
//
// # Safety
// `sampler` must be a live handle; `metrics`, if non-null, writable.
enum CrmhStatus crmh_sampler_step(struct CrmhSampler *sampler, struct CrmhMetrics *metrics);

// Number of instantiated clusters, dishes or features.
//
// # Safety
// `sampler` must be a live handle and `out` writable.
enum CrmhStatus crmh_sampler_num_components(const struct CrmhSampler *sampler, size_t *out);

// Cluster (or dish) of every training row, written to `out[0..n]`.
// Feature models return `InvalidParameter`; use
// [`crmh_sampler_features`].
//
// # Safety
// `sampler` must be a live handle and `out` must hold `len` values.
enum CrmhStatus crmh_sampler_labels(const struct CrmhSampler *sampler, size_t *out, size_t len);

// Binary feature matrix of a feature model, row-major `n × K` with `K`
// from [`crmh_sampler_num_components`].
//
// # Safety
// `sampler` must be a live handle and `out` must hold `len` bytes.
enum CrmhStatus crmh_sampler_features(const struct CrmhSampler *sampler, uint8_t *out, size_t len);

// Release a handle. Null is ignored.
//
// # Safety
// `sampler` must be null or a handle not yet freed.
void crmh_sampler_free(struct CrmhSampler *sampler);

// Message for the last failed call on this thread, or null. Valid until
// the next call into the library from the same thread.
const char *crmh_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *crmh_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRMH_H */
