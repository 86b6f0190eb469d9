#ifndef UQ_RETRIEVAL_H
#define UQ_RETRIEVAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum UqStatus {
  UqStatus_Ok = 0,
  UqStatus_NullPointer = 1,
  UqStatus_InvalidInput = 2,
  UqStatus_DimensionMismatch = 3,
  /**
   * Cholesky failure, singular or rank-deficient system.
   */
  UqStatus_Numerical = 4,
  UqStatus_Infeasible = 5,
  UqStatus_Unbounded = 6,
  /**
   * Solver stall, missing certificate or failure budget.
   */
  UqStatus_SolverFailure = 7,
  UqStatus_Io = 8,
  UqStatus_Panic = 9,
} UqStatus;

typedef enum UqMode {
  UqMode_OneAtATime = 0,
  UqMode_Simultaneous = 1,
} UqMode;

/**
 * Opaque constraint set `A x <= b`.
 */
typedef struct UqConstraints UqConstraints;

/**
 * Opaque Gaussian prior.
 */
typedef struct UqPrior UqPrior;

/**
 * Opaque forward problem, whitened once at construction.
 */
typedef struct UqProblem UqProblem;

typedef struct UqBayesInterval {
  double theta_hat;
  double posterior_sd;
  double standard_error;
  double lower;
  double upper;
} UqBayesInterval;

typedef struct UqInterval {
  double lower;
  double upper;
  double slack_sq;
  double radius_sq;
  double relative_gap;
  /**
   * 1 when both dual certificates re-verified.
   */
  int32_t certified;
} UqInterval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes) and returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t uq_last_error(char *buf, uintptr_t len);

/**
 * Problem from a row-major `n x p` operator, diagonal noise variances and
 * functional weights.
 *
 * # Safety
 * `k` must hold `n * p` doubles, `noise_var` `n` and `h` `p`; `out` must
 * be writable.
 */
enum UqStatus uq_problem_new(uintptr_t n,
                             uintptr_t p,
                             const double *k,
                             const double *noise_var,
                             const double *h,
                             struct UqProblem **out);

/**
 * Problem read from a JSON problem file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UqStatus uq_problem_from_json(const char *path, struct UqProblem **out);

/**
 * # Safety
 * `problem` must be null or a live handle; writes to null outputs are skipped.
 */
enum UqStatus uq_problem_dims(const struct UqProblem *problem, uintptr_t *n, uintptr_t *p);

/**
 * # Safety
 * `problem` must be null or a handle not yet freed.
 */
void uq_problem_free(struct UqProblem *problem);

/**
 * Empty constraint set over `p` variables.
 *
 * # Safety
 * `out` must be writable.
 */
enum UqStatus uq_constraints_new(uintptr_t p, struct UqConstraints **out);

/**
 * Adds `x[index] >= 0`.
 *
 * # Safety
 * `c` must be null or a live handle.
 */
enum UqStatus uq_constraints_add_nonnegative(struct UqConstraints *c, uintptr_t index);

/**
 * Adds `lo <= x[index] <= hi`; pass an infinity to leave a side open.
 *
 * # Safety
 * `c` must be null or a live handle.
 */
enum UqStatus uq_constraints_add_box(struct UqConstraints *c,
                                     uintptr_t index,
                                     double lo,
                                     double hi);

/**
 * Adds `row . x <= bound` for a dense row of length `p`.
 *
 * # Safety
 * `c` must be null or a live handle and `row` must hold `p` doubles.
 */
enum UqStatus uq_constraints_add_general(struct UqConstraints *c, const double *row, double bound);

/**
 * # Safety
 * `c` must be null or a handle not yet freed.
 */
void uq_constraints_free(struct UqConstraints *c);

/**
 * Prior with mean `mu` and row-major covariance `sigma`.
 *
 * # Safety
 * `mu` must hold `p` doubles and `sigma` `p * p`; `out` must be writable.
 */
enum UqStatus uq_prior_new(uintptr_t p,
                           const double *mu,
                           const double *sigma,
                           struct UqPrior **out);

/**
 * # Safety
 * `prior` must be null or a handle not yet freed.
 */
void uq_prior_free(struct UqPrior *prior);

/**
 * Frequentist coverage of the Bayesian credible interval.
 *
 * # Safety
 * `out` must be writable.
 */
enum UqStatus uq_bayes_coverage(double bias,
                                double standard_error,
                                double posterior_sd,
                                double alpha,
                                double *out);

/**
 * Bayesian estimate and credible interval from raw observations `y`.
 *
 * # Safety
 * Handles must be live, `y` must hold `n` doubles and `out` be writable.
 */
enum UqStatus uq_retrieve_bayes(const struct UqProblem *problem,
                                const struct UqPrior *prior,
                                const double *y,
                                uintptr_t n,
                                double alpha,
                                struct UqBayesInterval *out);

/**
 * Constrained frequentist interval from raw observations `y`.
 * `constraints` may be null for the unconstrained problem.
 *
 * # Safety
 * Handles must be null or live, `y` must hold `n` doubles and `out` be
 * writable.
 */
enum UqStatus uq_retrieve_freq(const struct UqProblem *problem,
                               const struct UqConstraints *constraints,
                               const double *y,
                               uintptr_t n,
                               double alpha,
                               enum UqMode mode,
                               struct UqInterval *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UQ_RETRIEVAL_H */
