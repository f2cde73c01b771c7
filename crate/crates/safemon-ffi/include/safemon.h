#ifndef SAFEMON_H
#define SAFEMON_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum SafemonStatus {
  SAFEMON_STATUS_OK = 0,
  SAFEMON_STATUS_NULL_ARGUMENT = 1,
  SAFEMON_STATUS_UTF8 = 2,
  SAFEMON_STATUS_PARSE_ERROR = 3,
  SAFEMON_STATUS_EVAL_ERROR = 4,
  SAFEMON_STATUS_INVALID_ARGUMENT = 5,
  SAFEMON_STATUS_CALIBRATION_TOO_SMALL = 6,
} SafemonStatus;

/**
 * Opaque adaptive conformal significance-level state.
 */
typedef struct SafemonAcp SafemonAcp;

/**
 * Opaque parsed STL formula.
 */
typedef struct SafemonFormula SafemonFormula;

/**
 * Opaque sorted non-conformity score set.
 */
typedef struct SafemonNcsSet SafemonNcsSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses an STL formula over `state_dim`-dimensional states.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string; `out` must be a valid
 * pointer.
 */
enum SafemonStatus safemon_formula_parse(const char *text,
                                         uintptr_t state_dim,
                                         struct SafemonFormula **out);

/**
 * Frees a formula handle; null is a no-op.
 *
 * # Safety
 * `f` must be null or a pointer from `safemon_formula_parse`.
 */
void safemon_formula_free(struct SafemonFormula *f);

/**
 * Number of future steps the formula needs beyond the evaluation instant.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SafemonStatus safemon_formula_horizon(const struct SafemonFormula *f, uintptr_t *out);

/**
 * Quantitative robustness of the formula at time `t` of a row-major
 * `steps x dim` signal sampled every `dt` seconds.
 *
 * # Safety
 * `data` must point to `steps * dim` doubles; other pointers must be valid.
 */
enum SafemonStatus safemon_formula_robustness(const struct SafemonFormula *f,
                                              const double *data,
                                              uintptr_t steps,
                                              uintptr_t dim,
                                              double dt,
                                              uintptr_t t,
                                              double *out);

/**
 * Builds a score set from `n` doubles (`n = 0` gives an empty set).
 *
 * # Safety
 * `scores` must point to `n` doubles (or be null when `n = 0`); `out` must
 * be valid.
 */
enum SafemonStatus safemon_ncs_new(const double *scores, uintptr_t n, struct SafemonNcsSet **out);

/**
 * Frees a score-set handle; null is a no-op.
 *
 * # Safety
 * `s` must be null or a pointer from `safemon_ncs_new`.
 */
void safemon_ncs_free(struct SafemonNcsSet *s);

/**
 * Inserts one score, keeping the set sorted.
 *
 * # Safety
 * `s` must be a valid score-set handle.
 */
enum SafemonStatus safemon_ncs_insert(struct SafemonNcsSet *s, double score);

/**
 * Number of scores in the set.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SafemonStatus safemon_ncs_len(const struct SafemonNcsSet *s, uintptr_t *out);

/**
 * Inductive conformal threshold at miscoverage `delta`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SafemonStatus safemon_icp_threshold(const struct SafemonNcsSet *s, double delta, double *out);

/**
 * Robust conformal threshold under a total-variation shift bound `epsilon`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SafemonStatus safemon_rcp_threshold(const struct SafemonNcsSet *s,
                                         double delta,
                                         double epsilon,
                                         double *out);

/**
 * New adaptive conformal state targeting miscoverage `delta` with learning
 * rate `gamma`.
 *
 * # Safety
 * `out` must be valid.
 */
enum SafemonStatus safemon_acp_new(double delta, double gamma, struct SafemonAcp **out);

/**
 * Frees an adaptive conformal state handle; null is a no-op.
 *
 * # Safety
 * `a` must be null or a pointer from `safemon_acp_new`.
 */
void safemon_acp_free(struct SafemonAcp *a);

/**
 * Current (adapted) significance level.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SafemonStatus safemon_acp_delta(const struct SafemonAcp *a, double *out);

/**
 * One online step: computes the threshold from the score set at the current
 * significance level, appends the new score, scores the coverage error, and
 * updates the significance level. Writes the threshold used for the
 * decision; alarm handling (comparing a predicted robustness against it) is
 * the caller's.
 *
 * # Safety
 * Pointers must be valid; `set` is mutated.
 */
enum SafemonStatus safemon_acp_step(struct SafemonAcp *a,
                                    struct SafemonNcsSet *set,
                                    double score,
                                    double *out_threshold);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SAFEMON_H */
