#ifndef COLDLOOP_H
#define COLDLOOP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ColdloopStatus {
  COLDLOOP_STATUS_OK = 0,
  COLDLOOP_STATUS_NULL_POINTER = 1,
  COLDLOOP_STATUS_INVALID_ARGUMENT = 2,
  COLDLOOP_STATUS_CONFIG = 3,
  COLDLOOP_STATUS_UNSTABLE = 4,
  COLDLOOP_STATUS_NUMERIC = 5,
  COLDLOOP_STATUS_IO = 6,
  COLDLOOP_STATUS_PANIC = 7,
} ColdloopStatus;

/**
 * Opaque loop handle.
 */
typedef struct ColdloopLoop ColdloopLoop;

/**
 * Rates and occupations of a scenario (rates in rad/s).
 */
typedef struct ColdloopBudget {
  double n_th;
  double n_ba;
  double n_bath;
  double n_c;
  double c0;
  double gamma_meas;
  double gamma_dec;
  double ratio;
  double shot_level;
} ColdloopBudget;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a
 * successful call. Valid until the next call on the same thread.
 */
const char *coldloop_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *coldloop_version(void);

/**
 * Parses a scenario TOML document into a new handle.
 *
 * # Safety
 * `toml` must be a valid NUL-terminated string; `out` must be writable.
 */
enum ColdloopStatus coldloop_loop_from_toml(const char *toml, struct ColdloopLoop **out);

/**
 * Loads one of the shipped reference scenarios by name.
 *
 * # Safety
 * `name` must be a valid NUL-terminated string; `out` must be writable.
 */
enum ColdloopStatus coldloop_loop_from_reference(const char *name, struct ColdloopLoop **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `h` must be null or a handle from this library not yet freed.
 */
void coldloop_loop_free(struct ColdloopLoop *h);

/**
 * Copies the scenario name into `buf` (truncated, always terminated).
 * Writes the full length, without terminator, to `len` when non-null.
 *
 * # Safety
 * `h` must be a live handle; `buf` must hold `cap` bytes.
 */
enum ColdloopStatus coldloop_loop_name(const struct ColdloopLoop *h,
                                       char *buf,
                                       size_t cap,
                                       size_t *len);

/**
 * # Safety
 * `h` must be a live handle; `out` must be writable.
 */
enum ColdloopStatus coldloop_loop_gain(const struct ColdloopLoop *h, double *out);

/**
 * Sets the loop gain (1/s).
 *
 * # Safety
 * `h` must be a live handle.
 */
enum ColdloopStatus coldloop_loop_set_gain(struct ColdloopLoop *h, double gain);

/**
 * # Safety
 * `h` must be a live handle; `out` must be writable.
 */
enum ColdloopStatus coldloop_loop_budget(const struct ColdloopLoop *h, struct ColdloopBudget *out);

/**
 * Writes 1 to `out` when the closed loop is stable, else 0.
 *
 * # Safety
 * `h` must be a live handle; `out` must be writable.
 */
enum ColdloopStatus coldloop_loop_is_stable(const struct ColdloopLoop *h, int32_t *out);

/**
 * Mean occupancy of the target mode at the current gain. Fails with
 * `Unstable` when the loop is unstable.
 *
 * # Safety
 * `h` must be a live handle; `out` must be writable.
 */
enum ColdloopStatus coldloop_loop_phonon_number(const struct ColdloopLoop *h, double *out);

/**
 * In-loop measurement PSD in shot units at `n` frequencies (Hz).
 *
 * # Safety
 * `h` must be a live handle; `freqs_hz` and `out` must hold `n` values.
 */
enum ColdloopStatus coldloop_loop_measured_psd(const struct ColdloopLoop *h,
                                               const double *freqs_hz,
                                               size_t n,
                                               double *out);

/**
 * Displacement PSD of the target mode, zero-point units per Hz.
 *
 * # Safety
 * `h` must be a live handle; `freqs_hz` and `out` must hold `n` values.
 */
enum ColdloopStatus coldloop_loop_displacement_psd(const struct ColdloopLoop *h,
                                                   const double *freqs_hz,
                                                   size_t n,
                                                   double *out);

/**
 * Gain minimizing the occupancy within `[gain_min, gain_max]`.
 *
 * # Safety
 * `h` must be a live handle; `gain_opt` and `n_min` must be writable.
 */
enum ColdloopStatus coldloop_loop_optimize_gain(const struct ColdloopLoop *h,
                                                double gain_min,
                                                double gain_max,
                                                double *gain_opt,
                                                double *n_min);

/**
 * Occupancy from Stokes and anti-Stokes sideband powers.
 *
 * # Safety
 * `out` must be writable.
 */
enum ColdloopStatus coldloop_occupancy_from_powers(double stokes, double anti_stokes, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COLDLOOP_H */
