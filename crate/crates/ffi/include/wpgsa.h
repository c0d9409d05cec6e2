/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef WPGSA_H
#define WPGSA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum {
  WP_STATUS_OK = 0,
  WP_STATUS_NULL_POINTER = 1,
  WP_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad configuration, parameters or unsupported input.
   */
  WP_STATUS_CONFIG = 3,
  /**
   * A numerical routine failed or a hypothesis check did not hold.
   */
  WP_STATUS_NUMERICAL = 4,
  /**
   * Index outside the valid range or a buffer that is too small.
   */
  WP_STATUS_OUT_OF_RANGE = 5,
  /**
   * The requested report cell holds an error instead of a value.
   */
  WP_STATUS_CELL_ERROR = 6,
  WP_STATUS_PANIC = 7,
} WpStatus;

/**
 * Eigenvalues and eigenfunctions of the weighted operator.
 */
typedef struct WpBasis WpBasis;

/**
 * A probability measure on an interval.
 */
typedef struct WpMeasure WpMeasure;

/**
 * A full sensitivity report for a built-in model.
 */
typedef struct WpReport WpReport;

/**
 * A weight curve together with its Poincaré constant.
 */
typedef struct WpWeight WpWeight;

/**
 * Plain-data mirror of the report configuration.
 */
typedef struct {
  size_t n;
  size_t fit_n;
  size_t ref_n;
  size_t boot;
  size_t nodes;
  uint64_t seed;
  bool reference;
} WpConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL when none failed.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *wp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *wp_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void wp_string_free(char *s);

/**
 * Parses a measure from its JSON spec, e.g. `{"family":"uniform","params":{"a":0,"b":1}}`.
 *
 * # Safety
 * `json` must be NUL-terminated and `out` writable.
 */
WpStatus wp_measure_from_json(const char *json, WpMeasure **out);

/**
 * # Safety
 * `m` must be NULL or a live handle from [`wp_measure_from_json`].
 */
void wp_measure_free(WpMeasure *m);

/**
 * Support endpoints (possibly infinite).
 *
 * # Safety
 * Pointers must be valid.
 */
WpStatus wp_measure_support(const WpMeasure *m, double *a, double *b);

/**
 * Normalized density at `x`.
 *
 * # Safety
 * Pointers must be valid.
 */
WpStatus wp_measure_density(const WpMeasure *m, double x, double *out);

/**
 * Mean and variance by quadrature.
 *
 * # Safety
 * Pointers must be valid.
 */
WpStatus wp_measure_moments(const WpMeasure *m, double *mean, double *variance);

/**
 * Builds a weight of kind `unit`, `lin`, `gauss_ref` or `uniform_ref` on `nodes` nodes.
 *
 * # Safety
 * `m` must be a live handle, `kind` NUL-terminated and `out` writable.
 */
WpStatus wp_weight_new(const WpMeasure *m, const char *kind, size_t nodes, WpWeight **out);

/**
 * # Safety
 * `w` must be NULL or a live handle from [`wp_weight_new`].
 */
void wp_weight_free(WpWeight *w);

/**
 * Weight value at `x`.
 *
 * # Safety
 * Pointers must be valid.
 */
WpStatus wp_weight_eval(const WpWeight *w, double x, double *out);

/**
 * Poincaré constant attached to the weight: the FEM value for `unit`, 1 otherwise.
 *
 * # Safety
 * Pointers must be valid.
 */
WpStatus wp_weight_poincare_constant(const WpWeight *w, double *out);

/**
 * Solves for the first `num_eig` non-trivial eigenpairs on `cells` cells.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
WpStatus wp_basis_solve(const WpMeasure *m,
                        const WpWeight *w,
                        size_t num_eig,
                        size_t cells,
                        WpBasis **out);

/**
 * # Safety
 * `b` must be NULL or a live handle from [`wp_basis_solve`].
 */
void wp_basis_free(WpBasis *b);

/**
 * Number of eigenpairs held by the basis.
 *
 * # Safety
 * Pointers must be valid.
 */
WpStatus wp_basis_num_eig(const WpBasis *b, size_t *out);

/**
 * Eigenvalue `λ_n`, `n ≥ 1`.
 *
 * # Safety
 * Pointers must be valid.
 */
WpStatus wp_basis_eigenvalue(const WpBasis *b, size_t n, double *out);

/**
 * Eigenfunction `e_n(x)` and its derivative.
 *
 * # Safety
 * Pointers must be valid; `derivative` may be NULL.
 */
WpStatus wp_basis_eval(const WpBasis *b, size_t n, double x, double *value, double *derivative);

/**
 * Library defaults for [`wp_report_build`].
 */
WpConfig wp_config_default(void);

/**
 * Runs bounds and PoinCE approximations on a built-in model (`toy1`, `toy2`,
 * `flood_s`, `flood_c`). `weights` and `poince` are comma-separated kind
 * lists; NULL means none. Per-cell failures are recorded in the report.
 *
 * # Safety
 * Strings must be NUL-terminated or NULL, `config` readable and `out` writable.
 */
WpStatus wp_report_build(const char *model,
                         const WpConfig *config,
                         const char *weights,
                         const char *poince,
                         WpReport **out);

/**
 * # Safety
 * `r` must be NULL or a live handle from [`wp_report_build`].
 */
void wp_report_free(WpReport *r);

/**
 * Number of inputs and number of failed cells.
 *
 * # Safety
 * Pointers must be valid; either output may be NULL.
 */
WpStatus wp_report_summary(const WpReport *r, size_t *inputs, size_t *failures);

/**
 * Reference (Jansen) total index of input `i`.
 *
 * # Safety
 * Pointers must be valid.
 */
WpStatus wp_report_reference(const WpReport *r, size_t i, double *out);

/**
 * Upper bound on the total index of input `i` for weight kind `kind`.
 *
 * # Safety
 * Pointers must be valid.
 */
WpStatus wp_report_bound(const WpReport *r, size_t i, const char *kind, double *out);

/**
 * PoinCE approximations of the total index of input `i`. `der_based` is NaN
 * when the sample carries no gradients.
 *
 * # Safety
 * Pointers must be valid.
 */
WpStatus wp_report_poince(const WpReport *r,
                          size_t i,
                          const char *kind,
                          double *der_free,
                          double *der_based);

/**
 * Report as a JSON string; release it with [`wp_string_free`].
 *
 * # Safety
 * Pointers must be valid.
 */
WpStatus wp_report_to_json(const WpReport *r, char **out);

/**
 * Jansen total indices of a built-in model written into `values[0..len]`.
 * `len` must be at least the model dimension, which is stored in `dim`.
 *
 * # Safety
 * `values` must point to `len` writable doubles.
 */
WpStatus wp_sobol_total(const char *model,
                        size_t n,
                        uint64_t seed,
                        double *values,
                        size_t len,
                        size_t *dim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WPGSA_H */
