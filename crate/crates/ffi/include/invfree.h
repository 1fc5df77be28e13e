#ifndef INVFREE_H
#define INVFREE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum InvfreeMethod {
  INVFREE_METHOD_INVERSE_FREE = 0,
  INVFREE_METHOD_NEWTON = 1,
} InvfreeMethod;

typedef enum InvfreeStatus {
  INVFREE_STATUS_OK = 0,
  INVFREE_STATUS_NULL_POINTER = 1,
  INVFREE_STATUS_INVALID_UTF8 = 2,
  INVFREE_STATUS_PARSE_ERROR = 3,
  INVFREE_STATUS_SOLVER_ERROR = 4,
  INVFREE_STATUS_CERTIFICATE_ERROR = 5,
  INVFREE_STATUS_INVALID_ARGUMENT = 6,
  INVFREE_STATUS_PANIC = 7,
} InvfreeStatus;

typedef enum InvfreeTheorem {
  INVFREE_THEOREM_T1 = 1,
  INVFREE_THEOREM_T2 = 2,
  INVFREE_THEOREM_T3 = 3,
  INVFREE_THEOREM_NEWTON_KANTOROVICH = 4,
} InvfreeTheorem;

typedef enum InvfreeVerdict {
  INVFREE_VERDICT_CONVERGED = 0,
  INVFREE_VERDICT_MAX_ITERATIONS = 1,
  INVFREE_VERDICT_DIVERGED = 2,
  INVFREE_VERDICT_SINGULAR_AT_START = 3,
} InvfreeVerdict;

/**
 * Opaque problem handle.
 */
typedef struct InvfreeProblem InvfreeProblem;

/**
 * Opaque solve trace handle.
 */
typedef struct InvfreeTrace InvfreeTrace;

/**
 * Cost counters of a solve.
 */
typedef struct InvfreeCounters {
  size_t inversions;
  size_t linear_solves;
  size_t jacobian_evaluations;
  size_t residual_evaluations;
  size_t matrix_multiplications;
} InvfreeCounters;

/**
 * Scalar summary of a certificate. The ball center is the problem's
 * initial point.
 */
typedef struct InvfreeCertificate {
  enum InvfreeTheorem theorem;
  bool passed;
  double b;
  double eta;
  double k;
  double h;
  double a;
  double s;
  double n1;
  /**
   * NaN when undefined.
   */
  double ball_radius;
  /**
   * Second-derivative bound used for `k`.
   */
  double l;
} InvfreeCertificate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread, or null. The
 * pointer stays valid until the next call into this library on the same
 * thread.
 */
const char *invfree_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void invfree_string_free(char *s);

/**
 * The constant `a` bounding the certificate quantity `h`.
 */
double invfree_kogan_constant(void);

/**
 * Parses a JSON problem document.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum InvfreeStatus invfree_problem_from_json(const char *json, struct InvfreeProblem **out);

/**
 * Looks up a built-in problem by name.
 *
 * # Safety
 * `name` must be a nul-terminated string; `out` must be writable.
 */
enum InvfreeStatus invfree_problem_builtin(const char *name, struct InvfreeProblem **out);

/**
 * # Safety
 * `p` must come from this library and not have been freed already.
 */
void invfree_problem_free(struct InvfreeProblem *p);

/**
 * Number of unknowns, or 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live problem handle.
 */
size_t invfree_problem_dim(const struct InvfreeProblem *p);

/**
 * Solves from the problem's initial point. `tolerance <= 0` and
 * `max_iterations == 0` select the problem's (or the default) settings.
 *
 * # Safety
 * `p` must be a live problem handle; `out` must be writable.
 */
enum InvfreeStatus invfree_solve(const struct InvfreeProblem *p,
                                 enum InvfreeMethod method,
                                 double tolerance,
                                 size_t max_iterations,
                                 struct InvfreeTrace **out);

/**
 * # Safety
 * `t` must come from this library and not have been freed already.
 */
void invfree_trace_free(struct InvfreeTrace *t);

/**
 * Number of steps taken (iterates minus one), or 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live trace handle.
 */
size_t invfree_trace_steps(const struct InvfreeTrace *t);

/**
 * # Safety
 * `t` must be a live trace handle; `out` must be writable.
 */
enum InvfreeStatus invfree_trace_verdict(const struct InvfreeTrace *t, enum InvfreeVerdict *out);

/**
 * # Safety
 * `t` must be a live trace handle; `out` must be writable.
 */
enum InvfreeStatus invfree_trace_counters(const struct InvfreeTrace *t,
                                          struct InvfreeCounters *out);

/**
 * Copies iterate `k` (0 is the initial point) into `x`, which must hold
 * `len` doubles, `len` equal to the problem dimension.
 *
 * # Safety
 * `t` must be a live trace handle; `x` must point to `len` writable doubles.
 */
enum InvfreeStatus invfree_trace_iterate(const struct InvfreeTrace *t,
                                         size_t k,
                                         double *x,
                                         size_t len);

/**
 * Full trace as CSV text.
 *
 * # Safety
 * `t` must be a live trace handle; `out` must be writable.
 */
enum InvfreeStatus invfree_trace_csv(const struct InvfreeTrace *t, char **out);

/**
 * Certifies at the problem's initial point. `grid` is the number of grid
 * points per axis for the second-derivative bound (0 for the default).
 * `json_out` may be null; otherwise it receives the JSON report.
 *
 * # Safety
 * `p` must be a live problem handle; `out` must be writable; `json_out`
 * must be null or writable.
 */
enum InvfreeStatus invfree_certify(const struct InvfreeProblem *p,
                                   enum InvfreeTheorem theorem,
                                   size_t grid,
                                   struct InvfreeCertificate *out,
                                   char **json_out);

/**
 * Runs both methods with the same options and returns the comparison
 * report as JSON. `tolerance <= 0` selects the problem's setting.
 *
 * # Safety
 * `p` must be a live problem handle; `json_out` must be writable.
 */
enum InvfreeStatus invfree_compare_json(const struct InvfreeProblem *p,
                                        double tolerance,
                                        char **json_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INVFREE_H */
