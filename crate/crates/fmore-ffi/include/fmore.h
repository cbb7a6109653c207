#ifndef FMORE_H
#define FMORE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Quality aggregation families for the scoring rule.
 */
typedef enum FmScoreKind {
  /**
   * `s = sum_i alpha_i q_i`; needs coefficients.
   */
  FM_SCORE_KIND_ADDITIVE = 0,
  /**
   * `s = min_i alpha_i q_i`; needs coefficients.
   */
  FM_SCORE_KIND_MIN_WEIGHTED = 1,
  /**
   * `s = prod_i q_i^(alpha_i)`; needs coefficients.
   */
  FM_SCORE_KIND_COBB_DOUGLAS = 2,
  /**
   * `s = alpha prod_i q_i`; needs the scalar `alpha` only.
   */
  FM_SCORE_KIND_SCALED_PRODUCT = 3,
} FmScoreKind;

/**
 * Call outcome. Anything other than `Ok` leaves the outputs untouched;
 * `fm_last_error` then describes the failure.
 */
typedef enum FmStatus {
  FM_STATUS_OK = 0,
  FM_STATUS_NULL_POINTER = 1,
  FM_STATUS_INVALID_ARGUMENT = 2,
  FM_STATUS_NUMERICAL_ERROR = 3,
  FM_STATUS_BUFFER_TOO_SMALL = 4,
} FmStatus;

/**
 * Winning-probability formula used by the equilibrium solver.
 */
typedef enum FmWinningProbMode {
  /**
   * Top-K order statistics with binomial rank multiplicities (default).
   */
  FM_WINNING_PROB_MODE_ORDER_STATISTICS = 0,
  /**
   * The plain geometric sum without multiplicities; kept for
   * comparison, known to undercount for K >= 2.
   */
  FM_WINNING_PROB_MODE_VERBATIM = 1,
} FmWinningProbMode;

/**
 * Opaque auction round configuration handle.
 */
typedef struct FmAuction FmAuction;

/**
 * Opaque tabulated symmetric equilibrium handle.
 */
typedef struct FmEquilibrium FmEquilibrium;

/**
 * Opaque quasi-linear scoring rule handle.
 */
typedef struct FmScoringRule FmScoringRule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the library version as a static NUL-terminated string.
 */
const char *fm_version(void);

/**
 * Returns the message of the most recent failure on this thread. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *fm_last_error(void);

/**
 * Creates a scoring rule.
 *
 * `coeffs`/`n_coeffs` supply the per-dimension coefficients for the
 * additive, min-weighted, and Cobb-Douglas kinds and are ignored for
 * the scaled product, which reads `alpha` instead. Optional min-max
 * normalization is enabled by passing `n_bounds > 0` with per-dimension
 * lower bounds in `bounds_lo` and upper bounds in `bounds_hi`;
 * `normalize_payment` selects whether the payment is mapped through the
 * same transform (the walkthrough convention is `false`).
 *
 * # Safety
 * Array arguments must point to at least the stated number of doubles;
 * `out` must be a valid pointer. On success the caller owns the handle
 * and must release it with `fm_scoring_rule_free`.
 */
enum FmStatus fm_scoring_rule_new(enum FmScoreKind kind,
                                  const double *coeffs,
                                  uintptr_t n_coeffs,
                                  double alpha,
                                  const double *bounds_lo,
                                  const double *bounds_hi,
                                  uintptr_t n_bounds,
                                  bool normalize_payment,
                                  struct FmScoringRule **out);

/**
 * Releases a scoring rule handle. A null pointer is a no-op.
 *
 * # Safety
 * `rule` must come from `fm_scoring_rule_new` and not be freed twice.
 */
void fm_scoring_rule_free(struct FmScoringRule *rule);

/**
 * Evaluates `S(q, p) = s(q) - p` (after normalization when configured).
 *
 * # Safety
 * `rule` must be a live handle, `q` must point to `dim` doubles, and
 * `out` must be a valid pointer.
 */
enum FmStatus fm_scoring_rule_score(const struct FmScoringRule *rule,
                                    const double *q,
                                    uintptr_t dim,
                                    double payment,
                                    double *out);

/**
 * Probability that a score at quantile `h` of the score distribution
 * places in the top `k` of `n` bidders.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FmStatus fm_winning_probability(double h,
                                     uintptr_t n,
                                     uintptr_t k,
                                     enum FmWinningProbMode mode,
                                     double *out);

/**
 * Creates an auction round configuration. The rule is copied; the
 * caller keeps ownership of `rule`.
 *
 * # Safety
 * `rule` must be a live handle and `out` a valid pointer. On success
 * the caller owns the handle and must release it with `fm_auction_free`.
 */
enum FmStatus fm_auction_new(uintptr_t n_nodes,
                             uintptr_t n_winners,
                             double psi,
                             enum FmWinningProbMode mode,
                             const struct FmScoringRule *rule,
                             struct FmAuction **out);

/**
 * Releases an auction handle. A null pointer is a no-op.
 *
 * # Safety
 * `auction` must come from `fm_auction_new` and not be freed twice.
 */
void fm_auction_free(struct FmAuction *auction);

/**
 * Runs one selection round over `n_bids` sealed bids and reports the
 * winners as indices into the input arrays, in descending score order.
 *
 * `qualities` is row-major `n_bids x dim`; `payments` holds one asked
 * payment per bid. `out_n` carries the capacity of `out_indices` and
 * `out_payments` on input (at least the configured winner count) and
 * the number of winners written on output.
 *
 * # Safety
 * `auction` must be a live handle; the arrays must match the stated
 * sizes; `out_indices`, `out_payments`, and `out_n` must be valid.
 */
enum FmStatus fm_auction_run(const struct FmAuction *auction,
                             const double *qualities,
                             const double *payments,
                             uintptr_t n_bids,
                             uintptr_t dim,
                             uint64_t seed,
                             uintptr_t *out_indices,
                             double *out_payments,
                             uintptr_t *out_n);

/**
 * Tabulates the symmetric equilibrium for the bidding game where the
 * quality value is the rule's `s(.)`, the cost is
 * `theta * sum_i beta_i q_i`, and types are uniform on
 * `[theta_lo, theta_hi]`. Qualities range over the box
 * `[q_lo_i, q_hi_i]` per dimension.
 *
 * # Safety
 * `rule` must be a live handle; `cost_betas`, `q_lo`, and `q_hi` must
 * point to `dim` doubles; `out` must be valid. On success the caller
 * owns the handle and must release it with `fm_equilibrium_free`.
 */
enum FmStatus fm_equilibrium_new(const struct FmScoringRule *rule,
                                 const double *cost_betas,
                                 uintptr_t dim,
                                 double theta_lo,
                                 double theta_hi,
                                 const double *q_lo,
                                 const double *q_hi,
                                 uintptr_t n_nodes,
                                 uintptr_t n_winners,
                                 enum FmWinningProbMode mode,
                                 struct FmEquilibrium **out);

/**
 * Releases an equilibrium handle. A null pointer is a no-op.
 *
 * # Safety
 * `eq` must come from `fm_equilibrium_new` and not be freed twice.
 */
void fm_equilibrium_free(struct FmEquilibrium *eq);

/**
 * Equilibrium asked payment for type `theta` (clamped to the support).
 *
 * # Safety
 * `eq` must be a live handle and `out` a valid pointer.
 */
enum FmStatus fm_equilibrium_payment_at(const struct FmEquilibrium *eq, double theta, double *out);

/**
 * Equilibrium markup (payment minus cost) for type `theta`.
 *
 * # Safety
 * `eq` must be a live handle and `out` a valid pointer.
 */
enum FmStatus fm_equilibrium_markup_at(const struct FmEquilibrium *eq, double theta, double *out);

/**
 * The type's maximal attainable score `u(theta) = max_q s(q) - c(q, theta)`.
 *
 * # Safety
 * `eq` must be a live handle and `out` a valid pointer.
 */
enum FmStatus fm_equilibrium_max_score_at(const struct FmEquilibrium *eq,
                                          double theta,
                                          double *out);

/**
 * Returns the quality dimension of an equilibrium handle, or 0 for null.
 *
 * # Safety
 * `eq` must be a live handle or null.
 */
uintptr_t fm_equilibrium_dim(const struct FmEquilibrium *eq);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* FMORE_H */
