#ifndef MSRISK_H
#define MSRISK_H

/* Generated by cbindgen from crates/ffi/src; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsrStatus {
  MSR_STATUS_OK = 0,
  MSR_STATUS_NULL_POINTER = 1,
  MSR_STATUS_INVALID_ARGUMENT = 2,
  MSR_STATUS_IO = 3,
  MSR_STATUS_DATA = 4,
  MSR_STATUS_NUMERICAL = 5,
  MSR_STATUS_ESTIMATION = 6,
  MSR_STATUS_BUFFER_TOO_SMALL = 7,
  MSR_STATUS_PANIC = 8,
} MsrStatus;

typedef enum MsrRiskField {
  MSR_RISK_FIELD_VAR = 0,
  MSR_RISK_FIELD_ES = 1,
  MSR_RISK_FIELD_COVAR = 2,
  MSR_RISK_FIELD_COES = 3,
  MSR_RISK_FIELD_DELTA_COVAR = 4,
  MSR_RISK_FIELD_DELTA_COES = 5,
} MsrRiskField;

typedef enum MsrMeasure {
  MSR_MEASURE_COVAR = 0,
  MSR_MEASURE_COES = 1,
} MsrMeasure;

/**
 * Opaque fitted model together with the panel it was filtered on.
 */
typedef struct MsrFit MsrFit;

/**
 * Opaque return panel.
 */
typedef struct MsrPanel MsrPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *msr_last_error_message(void);

/**
 * Reads a dated CSV (first column dates, remaining columns series). With
 * `prices` nonzero the values are converted to log returns.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MsrStatus msr_panel_from_csv(const char *path, bool prices, struct MsrPanel **out);

/**
 * Builds a panel from a row-major `n_obs x n_series` array; series are
 * named `s1..sp` and dates are synthetic.
 *
 * # Safety
 * `data` must point to `n_obs * n_series` readable doubles.
 */
enum MsrStatus msr_panel_from_array(const double *data,
                                    uintptr_t n_obs,
                                    uintptr_t n_series,
                                    struct MsrPanel **out);

/**
 * # Safety
 * `panel` must be a live handle; the out pointers may be NULL.
 */
enum MsrStatus msr_panel_dims(const struct MsrPanel *panel, uintptr_t *n_obs, uintptr_t *n_series);

/**
 * # Safety
 * `panel` must be NULL or a handle not yet freed.
 */
void msr_panel_free(struct MsrPanel *panel);

/**
 * Fits an `n_states` model with `restarts` EM runs.
 *
 * # Safety
 * `panel` must be a live handle and `out` a valid pointer.
 */
enum MsrStatus msr_fit(const struct MsrPanel *panel,
                       uintptr_t n_states,
                       uintptr_t restarts,
                       uint64_t seed,
                       struct MsrFit **out);

/**
 * Loads a model JSON and filters it over `panel` without re-estimating.
 *
 * # Safety
 * `panel` must be a live handle, `json` NUL-terminated, `out` valid.
 */
enum MsrStatus msr_fit_from_model_json(const struct MsrPanel *panel,
                                       const char *json,
                                       struct MsrFit **out);

/**
 * # Safety
 * `fit` must be NULL or a handle not yet freed.
 */
void msr_fit_free(struct MsrFit *fit);

/**
 * # Safety
 * `fit` must be a live handle; the out pointers may be NULL.
 */
enum MsrStatus msr_fit_dims(const struct MsrFit *fit,
                            uintptr_t *n_obs,
                            uintptr_t *n_series,
                            uintptr_t *n_states);

/**
 * # Safety
 * `fit` must be a live handle and `out` valid.
 */
enum MsrStatus msr_fit_loglik(const struct MsrFit *fit, double *out);

/**
 * AIC, BIC and the free-parameter count; out pointers may be NULL.
 *
 * # Safety
 * `fit` must be a live handle.
 */
enum MsrStatus msr_fit_information_criteria(const struct MsrFit *fit,
                                            double *aic,
                                            double *bic,
                                            uintptr_t *n_params);

/**
 * Smoothed (`smoothed` nonzero) or filtered state probabilities,
 * `n_obs x n_states` row-major.
 *
 * # Safety
 * `out` must have room for `len` doubles.
 */
enum MsrStatus msr_fit_state_probabilities(const struct MsrFit *fit,
                                           bool smoothed,
                                           double *out,
                                           uintptr_t len);

/**
 * Model as JSON; release with `msr_string_free`.
 *
 * # Safety
 * `fit` must be a live handle and `out` valid.
 */
enum MsrStatus msr_fit_model_json(const struct MsrFit *fit, char **out);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void msr_string_free(char *s);

/**
 * Total-risk series of every sector for one field (each sector against all
 * others distressed), `n_obs x n_series` row-major.
 *
 * # Safety
 * `fit` must be a live handle and `out` have room for `len` doubles.
 */
enum MsrStatus msr_total_risk(const struct MsrFit *fit,
                              enum MsrRiskField field,
                              double tau1,
                              double tau2,
                              double *out,
                              uintptr_t len);

/**
 * Shapley shares of `target`'s delta measure at index `t`. `shares` gets
 * one entry per sector (the target's own entry is 0); `grand_value` the
 * delta with every other sector distressed.
 *
 * # Safety
 * `fit` must be a live handle, `shares` have room for `len` doubles and
 * `grand_value` be NULL or valid.
 */
enum MsrStatus msr_shapley(const struct MsrFit *fit,
                           uintptr_t t,
                           uintptr_t target,
                           enum MsrMeasure which,
                           double tau1,
                           double tau2,
                           double *shares,
                           uintptr_t len,
                           double *grand_value);

/**
 * `(AIC, BIC)` and parameter count for a given log-likelihood, state count,
 * dimension and sample size, without a fit.
 *
 * # Safety
 * Out pointers may be NULL.
 */
enum MsrStatus msr_information_criteria(double loglik,
                                        uintptr_t n_states,
                                        uintptr_t n_series,
                                        uintptr_t n_obs,
                                        double *aic,
                                        double *bic,
                                        uintptr_t *n_params);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSRISK_H */
