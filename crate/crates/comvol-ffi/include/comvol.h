/* C interface of the comvol commodity smile toolkit. */

#ifndef COMVOL_H
#define COMVOL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes of every fallible call.
 */
typedef enum ComvolStatus {
  ComvolStatus_Ok = 0,
  ComvolStatus_NullPointer = 1,
  ComvolStatus_InvalidUtf8 = 2,
  ComvolStatus_Io = 3,
  ComvolStatus_Parse = 4,
  ComvolStatus_InvalidInput = 5,
  ComvolStatus_Domain = 6,
  ComvolStatus_Numerical = 7,
  ComvolStatus_NotConverged = 8,
  ComvolStatus_SchemaMismatch = 9,
  ComvolStatus_Panic = 10,
} ComvolStatus;

/**
 * Opaque pricing-engine handle (model plus solved call surface).
 */
typedef struct ComvolEngine ComvolEngine;

/**
 * Opaque calibrated model handle.
 */
typedef struct ComvolModel ComvolModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *comvol_version(void);

/**
 * Copy the last error message of this thread into `buf` (truncated to
 * `len − 1` bytes, always NUL-terminated). Returns the full message length.
 */
uintptr_t comvol_last_error_message(char *buf, uintptr_t len);

/**
 * Load a calibrated model from a JSON file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be valid.
 */
enum ComvolStatus comvol_model_load(const char *path, struct ComvolModel **out);

/**
 * Parse a calibrated model from a JSON string.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string; `out` must be valid.
 */
enum ComvolStatus comvol_model_from_json(const char *json, struct ComvolModel **out);

/**
 * Release a model handle. Passing NULL is a no-op.
 *
 * # Safety
 * `model` must come from a `comvol_model_*` constructor and not be reused.
 */
void comvol_model_free(struct ComvolModel *model);

/**
 * Solve the pricing PDE out to `horizon` years and return an engine handle.
 *
 * # Safety
 * `model` must be a live model handle; `out` must be valid.
 */
enum ComvolStatus comvol_engine_build(const struct ComvolModel *model,
                                      double horizon,
                                      struct ComvolEngine **out);

/**
 * Release an engine handle. Passing NULL is a no-op.
 *
 * # Safety
 * `engine` must come from `comvol_engine_build` and not be reused.
 */
void comvol_engine_free(struct ComvolEngine *engine);

/**
 * Future-style vanilla price at (expiry `t`, futures maturity, strike).
 *
 * # Safety
 * `engine` must be a live engine handle; `out` must be valid.
 */
enum ComvolStatus comvol_price_vanilla_future_style(const struct ComvolEngine *engine,
                                                    double t,
                                                    double maturity,
                                                    double strike,
                                                    double *out);

/**
 * Black-76 implied vol of the future-style price at a strike.
 *
 * # Safety
 * `engine` must be a live engine handle; `out` must be valid.
 */
enum ComvolStatus comvol_implied_futures_vol(const struct ComvolEngine *engine,
                                             double t,
                                             double maturity,
                                             double strike,
                                             double *out);

/**
 * Closed-form future-style calendar-spread option price.
 *
 * # Safety
 * `engine` must be a live engine handle; `out` must be valid.
 */
enum ComvolStatus comvol_price_cso(const struct ComvolEngine *engine,
                                   double t_exercise,
                                   double t1,
                                   double t2,
                                   double strike,
                                   double *out);

/**
 * Normalized Black call price (total function, no failure path).
 */
double comvol_black_call(double t, double k, double sigma);

/**
 * Invert a normalized Black call price for its implied volatility.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ComvolStatus comvol_implied_vol(double price, double t, double k, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMVOL_H */
