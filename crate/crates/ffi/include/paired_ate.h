#ifndef PAIRED_ATE_H
#define PAIRED_ATE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PA_OK 0

// A required pointer argument was null.
#define PA_ERR_NULL_POINTER 1

// An argument was out of range or inconsistent.
#define PA_ERR_INVALID_ARGUMENT 2

// The data do not form a valid matched-pairs experiment.
#define PA_ERR_INVALID_DATA 3

// The estimator could not be computed (singular design, non-finite values).
#define PA_ERR_NUMERICAL 4

// An internal error; the library state is unaffected.
#define PA_ERR_PANIC 5

#define PA_KIND_UNADJUSTED 0

#define PA_KIND_NAIVE 1

#define PA_KIND_INTERACTED 2

#define PA_KIND_PFE 3

#define PA_KIND_INT_PFE 4

#define PA_KIND_LASSO_INTERMEDIATE 5

#define PA_KIND_REFIT 6

#define PA_PSI_W 0

#define PA_PSI_X 1

#define PA_PSI_XW 2

#define PA_PSI_EXPANDED 3

// A matched-pairs experiment: outcomes, arms, covariates and pairing.
typedef struct PaExperiment PaExperiment;

// Monte Carlo results for one model configuration.
typedef struct PaSimulation PaSimulation;

// Result of one estimator.
typedef struct PaEstimate {
  double delta_hat;
  double sigma_hat;
  double std_error;
  double ci_lower;
  double ci_upper;
  double alpha;
  double delta_null;
  // 1 when the null hypothesis is rejected, else 0.
  int32_t reject_h0;
  // 1 when a LASSO-based estimator fell back to the unadjusted one.
  int32_t fallback_unadjusted;
  uint64_t n_pairs;
} PaEstimate;

// Summary of one estimator over all replications.
typedef struct PaKindSummary {
  uint64_t replications;
  uint64_t failures;
  double rejection_rate;
  double mean_std_error;
  // NaN when the menu has no unadjusted estimator.
  double se_reduction_pct;
  double mean_delta_hat;
  double sd_delta_hat;
  double median_sigma_hat;
  double coverage;
} PaKindSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pa_version(void);

// Message of the last failure on this thread. The pointer stays valid until
// the next failing call on the same thread.
const char *pa_last_error_message(void);

// Builds an experiment of `n_units = 2 * n_pairs` units.
//
// `x` is `n_units x kx` (kx >= 1) and `w` is `n_units x kw`, both
// row-major; `w` may be null when `kw` is 0. `d` holds 0/1 arms. `pairs` holds
// `2 * n_pairs` unit indices, pair `j` being `(pairs[2j], pairs[2j+1])`;
// null means consecutive units form pairs.
//
// # Safety
// Every non-null pointer must be valid for the stated number of reads;
// `out` must be valid for one write.
int32_t pa_experiment_new(size_t n_pairs,
                          const double *y,
                          const uint8_t *d,
                          const double *x,
                          size_t kx,
                          const double *w,
                          size_t kw,
                          const uint64_t *pairs,
                          struct PaExperiment **out);

// # Safety
// `exp` must be null or a handle from `pa_experiment_new` not yet freed.
void pa_experiment_free(struct PaExperiment *exp);

// Number of pairs in `exp`, or 0 when `exp` is null.
//
// # Safety
// `exp` must be null or a live handle.
uint64_t pa_experiment_n_pairs(const struct PaExperiment *exp);

// Estimates the average treatment effect with estimator `kind` (a
// `PA_KIND_*` value) on regressors `psi` (a `PA_PSI_*` value), and tests
// `H0: Delta = delta0` at level `alpha`.
//
// # Safety
// `exp` must be a live handle; `out` must be valid for one write.
int32_t pa_estimate(const struct PaExperiment *exp,
                    int32_t kind,
                    int32_t psi,
                    int32_t include_intercept,
                    double alpha,
                    double delta0,
                    struct PaEstimate *out);

// Pairs `n_units` units on the row-major `n_units x kx` covariates `x`.
// A single covariate is matched by sorting; several use greedy
// nearest-neighbour matching on standardized covariates with pairs
// re-ordered so consecutive pairs are close. Writes `n_units` indices to
// `out_pairs` as in `pa_experiment_new`.
//
// # Safety
// `x` must be valid for `n_units * kx` reads and `out_pairs` for `n_units`
// writes.
int32_t pa_match_pairs(const double *x, size_t n_units, size_t kx, uint64_t *out_pairs);

// Randomizes treatment within each of `n_pairs` pairs (layout as in
// `pa_experiment_new`), writing 0/1 arms for `2 * n_pairs` units.
//
// # Safety
// `pairs` must be valid for `2 * n_pairs` reads and `out_d` for
// `2 * n_pairs` writes.
int32_t pa_assign_within_pairs(const uint64_t *pairs,
                               size_t n_pairs,
                               uint64_t seed,
                               uint8_t *out_d);

// Runs `replications` Monte Carlo replications of model `model_id` (1-15)
// with the model's default estimator menu.
//
// # Safety
// `out` must be valid for one write.
int32_t pa_simulate(uint32_t model_id,
                    size_t n_pairs,
                    double delta,
                    uint64_t seed,
                    size_t replications,
                    struct PaSimulation **out);

// # Safety
// `sim` must be null or a handle from `pa_simulate` not yet freed.
void pa_simulation_free(struct PaSimulation *sim);

// Number of estimators in `sim`, or 0 when `sim` is null.
//
// # Safety
// `sim` must be null or a live handle.
uint64_t pa_simulation_kind_count(const struct PaSimulation *sim);

// Label of estimator `index`, owned by `sim`; null when out of range.
//
// # Safety
// `sim` must be null or a live handle.
const char *pa_simulation_kind_label(const struct PaSimulation *sim, uint64_t index);

// Summary of estimator `index`.
//
// # Safety
// `sim` must be a live handle; `out` must be valid for one write.
int32_t pa_simulation_kind(const struct PaSimulation *sim,
                           uint64_t index,
                           struct PaKindSummary *out);

// Parses an estimator name such as `"pfe"` into a `PA_KIND_*` value;
// returns -1 for unknown names or a null pointer.
//
// # Safety
// `name` must be null or a NUL-terminated string.
int32_t pa_kind_from_name(const char *name);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAIRED_ATE_H */
