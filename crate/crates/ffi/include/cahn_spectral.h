#ifndef CAHN_SPECTRAL_H
#define CAHN_SPECTRAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Noise covariance family codes.
 */
#define CS_FAMILY_POWER_LAW 0

#define CS_FAMILY_TRACE_CLASS 1

typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_INVALID_ARGUMENT = 1,
  CS_STATUS_DIMENSION_MISMATCH = 2,
  CS_STATUS_NON_FINITE = 3,
  CS_STATUS_ASSUMPTION = 4,
  CS_STATUS_NON_CONVERGENCE = 5,
  CS_STATUS_PATH_FAILURE = 6,
  CS_STATUS_NO_SIGNAL = 7,
  CS_STATUS_CONFIG = 8,
  CS_STATUS_FORMAT = 9,
  CS_STATUS_IO = 10,
  CS_STATUS_NULL_POINTER = 11,
  CS_STATUS_PANIC = 12,
} CsStatus;

/**
 * Opaque noise table.
 */
typedef struct CsNoiseTable CsNoiseTable;

/**
 * Opaque implicit step solver.
 */
typedef struct CsStepper CsStepper;

typedef struct CsRateFit {
  double slope;
  double intercept;
  /**
   * NaN when fewer than three points were used.
   */
  double ci95;
  double residual;
  uintptr_t used_points;
  uintptr_t excluded_points;
} CsRateFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *cs_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cs_version(void);

/**
 * Builds a noise table of `m_ref` steps and `n_ref` modes on `[0, t_end]`.
 */
enum CsStatus cs_noise_table_new(uint64_t seed,
                                 double t_end,
                                 uintptr_t m_ref,
                                 uintptr_t n_ref,
                                 uint32_t family_code,
                                 double family_param,
                                 struct CsNoiseTable **out);

void cs_noise_table_free(struct CsNoiseTable *table);

/**
 * Writes `m * n` increments, step-major, summed down to `m` steps and
 * truncated to `n` modes.
 */
enum CsStatus cs_noise_table_coarsen(const struct CsNoiseTable *table,
                                     uintptr_t m,
                                     uintptr_t n,
                                     double *out,
                                     uintptr_t out_len);

enum CsStatus cs_noise_table_write(const struct CsNoiseTable *table, const char *path);

enum CsStatus cs_noise_table_read(const char *path, struct CsNoiseTable **out);

/**
 * Backward Euler solver for `n` modes and step `tau`. `tol <= 0` selects the
 * default tolerance; `linear != 0` drops the nonlinearity.
 */
enum CsStatus cs_stepper_new(uintptr_t n,
                             double tau,
                             double tol,
                             int32_t linear,
                             struct CsStepper **out);

void cs_stepper_free(struct CsStepper *stepper);

/**
 * One step from `x_prev` with increment `dw`, all arrays of length `n`.
 * `iterations` and `residual` may be NULL.
 */
enum CsStatus cs_stepper_step(struct CsStepper *stepper,
                              const double *x_prev,
                              const double *dw,
                              double *out,
                              uintptr_t n,
                              uintptr_t *iterations,
                              double *residual);

/**
 * Integrates one path with `n` modes and `m` steps driven by `table`, from
 * the initial coefficients `x0[0..n]`. Writes the final state to `out[0..n]`.
 */
enum CsStatus cs_simulate_path(const struct CsNoiseTable *table,
                               uintptr_t n,
                               uintptr_t m,
                               int32_t linear,
                               const double *x0,
                               double *out);

/**
 * Log-log rate fit. `std_errors` may be NULL.
 */
enum CsStatus cs_fit_rate(const double *h,
                          const double *errors,
                          const double *std_errors,
                          uintptr_t len,
                          struct CsRateFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAHN_SPECTRAL_H */
