#ifndef ADVTRAIN_H
#define ADVTRAIN_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Attack norms.
 */
typedef enum {
  ADVT_NORM_L2 = 0,
  ADVT_NORM_LINF = 1,
} AdvtNorm;

/**
 * Status codes returned by every FFI call.
 */
typedef enum {
  ADVT_STATUS_OK = 0,
  ADVT_STATUS_NULL_POINTER = 1,
  ADVT_STATUS_INVALID_ARGUMENT = 2,
  ADVT_STATUS_NOT_SPD = 3,
  ADVT_STATUS_ATTACK_UNDEFINED = 4,
  ADVT_STATUS_SINGULAR_GRAM = 5,
  ADVT_STATUS_DIVERGED = 6,
  ADVT_STATUS_INTERNAL_ERROR = 7,
} AdvtStatus;

/**
 * Opaque generating-model handle.
 */
typedef struct AdvtModel AdvtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * ABI version of this header/library pair.
 */
uint32_t advt_abi_version(void);

/**
 * Message for the most recent error on this thread (empty string if none).
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *advt_last_error_message(void);

/**
 * Creates a model with identity covariance.
 *
 * # Safety
 * `theta0` must point to `d` readable doubles; `out` must be a valid
 * destination for one pointer.
 */
AdvtStatus advt_model_new_identity(const double *theta0,
                                   uintptr_t d,
                                   double noise_var,
                                   AdvtModel **out);

/**
 * Creates a model with diagonal covariance (`diag` may be NULL for the
 * identity).
 *
 * # Safety
 * `theta0` (and `diag` when non-NULL) must point to `d` readable doubles;
 * `out` must be a valid destination for one pointer.
 */
AdvtStatus advt_model_new_diagonal(const double *theta0,
                                   uintptr_t d,
                                   const double *diag,
                                   double noise_var,
                                   AdvtModel **out);

/**
 * Creates a model with a dense SPD covariance (row-major d x d).
 *
 * # Safety
 * `theta0` must point to `d` doubles and `sigma` to `d*d` doubles; `out`
 * must be a valid destination for one pointer.
 */
AdvtStatus advt_model_new_dense(const double *theta0,
                                uintptr_t d,
                                const double *sigma,
                                double noise_var,
                                AdvtModel **out);

/**
 * Releases a model handle (NULL is a no-op).
 *
 * # Safety
 * `model` must be NULL or a pointer returned by a constructor and not yet
 * freed.
 */
void advt_model_free(AdvtModel *model);

/**
 * Model dimension d (0 for NULL).
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
uintptr_t advt_model_dim(const AdvtModel *model);

/**
 * v^2 = theta0' Sigma theta0 + sigma^2 (NaN for NULL).
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
double advt_model_v_squared(const AdvtModel *model);

/**
 * Closed-form population adversarial risk of `theta` under the given norm;
 * writes the value and the value normalized by v^2.
 *
 * # Safety
 * `model` must be a live handle; `theta` must point to `model`'s dimension
 * worth of doubles; output pointers must be valid or NULL (skipped).
 */
AdvtStatus advt_population_risk(const AdvtModel *model,
                                const double *theta,
                                double epsilon,
                                AdvtNorm norm,
                                double *out_value,
                                double *out_normalized);

/**
 * Robust optimum under the L2 attack: writes theta* into `out_theta`
 * (length d) and R* into `out_r_star`.
 *
 * # Safety
 * `model` must be a live handle; `out_theta` must hold d doubles;
 * `out_r_star` must be valid or NULL.
 */
AdvtStatus advt_optimal_theta(const AdvtModel *model,
                              double epsilon,
                              double *out_theta,
                              double *out_r_star);

/**
 * Smoothed (surrogate) attack on a linear model; `xi = 0` gives the exact
 * attack, except at theta = 0 with a nonzero residual where the exact L2
 * attack is undefined and `AttackUndefined` is returned.
 *
 * # Safety
 * `theta`, `x`, and `out_delta` must each point to `d` doubles.
 */
AdvtStatus advt_linear_attack(const double *theta,
                              const double *x,
                              uintptr_t d,
                              double y,
                              double epsilon,
                              double xi,
                              AdvtNorm norm,
                              double *out_delta);

/**
 * Minimum-norm interpolator theta(y) = X'(X X')^-1 y for row-major X
 * (n x d, n <= d); writes theta into `out_theta` (length d).
 *
 * # Safety
 * `x` must point to `n*d` doubles, `y` to `n`, `out_theta` to `d`.
 */
AdvtStatus advt_min_norm_interpolator(const double *x,
                                      uintptr_t n,
                                      uintptr_t d,
                                      const double *y,
                                      double *out_theta);

/**
 * Samples a dataset from the model into row-major `out_x` (n x d) and
 * `out_y` (n). Identical (model, n, seed) produce identical bytes.
 *
 * # Safety
 * `model` must be a live handle; `out_x` must hold `n*d` doubles and
 * `out_y` `n` doubles.
 */
AdvtStatus advt_sample_dataset(const AdvtModel *model,
                               uintptr_t n,
                               uint64_t seed,
                               double *out_x,
                               double *out_y);

/**
 * Adversarial training of a linear model on caller-provided data; writes
 * the final coefficients and, optionally, the final surrogate training
 * loss. `lambda_l1 > 0` adds the proximal soft-threshold step.
 *
 * # Safety
 * `x` must point to `n*d` doubles, `y` to `n`, `out_theta` to `d`;
 * `out_final_loss` must be valid or NULL.
 */
AdvtStatus advt_adv_train_linear(const double *x,
                                 uintptr_t n,
                                 uintptr_t d,
                                 const double *y,
                                 AdvtNorm norm,
                                 double epsilon,
                                 double xi,
                                 double eta,
                                 uintptr_t max_iters,
                                 double lambda_l1,
                                 double *out_theta,
                                 double *out_final_loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADVTRAIN_H */
