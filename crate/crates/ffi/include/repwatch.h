#ifndef REPWATCH_H
#define REPWATCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum RwStatus {
  RW_STATUS_OK = 0,
  RW_STATUS_NULL_POINTER = 1,
  RW_STATUS_INVALID_UTF8 = 2,
  // Bad configuration or parameter.
  RW_STATUS_CONFIG = 3,
  // Input does not fit the schema or cannot be parsed.
  RW_STATUS_DATA = 4,
  // The monitor refused the operation, e.g. after stopping.
  RW_STATUS_RUNTIME = 5,
  RW_STATUS_PANIC = 6,
} RwStatus;

// Z-test boundary flavour.
typedef enum RwVariant {
  RW_VARIANT_FINITE_SAMPLE = 0,
  RW_VARIANT_ASYMPTOTIC = 1,
} RwVariant;

// Opaque monitor handle.
typedef struct RwMonitor RwMonitor;

// Betting-test state, mirrored by value.
typedef struct RwBetState {
  uint64_t t;
  double log_wealth;
  double lambda;
  double z_sq_sum;
} RwBetState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *rw_last_error_message(void);

// Creates a monitor from a JSON group set (`schema`, `groups`,
// `base_preponderances`) and a JSON monitor config.
//
// # Safety
// `group_set_json` and `config_json` must be NUL-terminated strings and
// `out` a writable pointer.
enum RwStatus rw_monitor_new(const char *group_set_json,
                             const char *config_json,
                             struct RwMonitor **out);

// Rebuilds a monitor from [`rw_monitor_snapshot`] output.
//
// # Safety
// `snapshot` must be a NUL-terminated string and `out` a writable pointer.
enum RwStatus rw_monitor_restore(const char *snapshot, struct RwMonitor **out);

// Releases a monitor. NULL is ignored.
//
// # Safety
// `m` must come from [`rw_monitor_new`] or [`rw_monitor_restore`] and not
// have been freed.
void rw_monitor_free(struct RwMonitor *m);

// Feeds one report given as category indices in schema order. The number
// of flags it produced is written to `n_new_events` when non-NULL.
//
// # Safety
// `m` must be a live handle and `categories` must point to `len` readable
// values.
enum RwStatus rw_monitor_ingest(struct RwMonitor *m,
                                const uint32_t *categories,
                                size_t len,
                                size_t *n_new_events);

// Number of reports ingested so far.
//
// # Safety
// `m` must be a live handle and `out` writable.
enum RwStatus rw_monitor_t(const struct RwMonitor *m, uint64_t *out);

// Whether a stop-at-first monitor has stopped.
//
// # Safety
// `m` must be a live handle and `out` writable.
enum RwStatus rw_monitor_is_stopped(const struct RwMonitor *m, bool *out);

// All flags so far as a JSON array. Free with [`rw_string_free`].
//
// # Safety
// `m` must be a live handle and `out` writable.
enum RwStatus rw_monitor_events_json(const struct RwMonitor *m, char **out);

// Serialized monitor state. Free with [`rw_string_free`].
//
// # Safety
// `m` must be a live handle and `out` writable.
enum RwStatus rw_monitor_snapshot(const struct RwMonitor *m, char **out);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void rw_string_free(char *s);

// Z-test boundary at report `t` with the default boundary constant.
//
// # Safety
// `out` must be writable.
enum RwStatus rw_zt_threshold(uint64_t t,
                              double beta_mu0,
                              double alpha_eff,
                              enum RwVariant variant,
                              double *out);

// Log-wealth threshold `ln(n_groups/α)`.
double rw_bet_threshold(size_t n_groups, double alpha);

// Growth-optimal constant bet for report frequency `mu`.
double rw_lambda_star(double mu, double beta_mu0);

// Zero-initialized betting state.
struct RwBetState rw_bet_state_new(void);

// Advances `state` by one report.
//
// # Safety
// `state` must be a valid, writable pointer.
enum RwStatus rw_bet_step(struct RwBetState *state, bool in_group, double beta_mu0);

// Relative-risk lower bound `beta / b`.
double rw_rr_lower_bound(double beta, double b);

// Clamped incidence-rate lower bound.
//
// # Safety
// `out` must be writable.
enum RwStatus rw_ir_lower_bound(double beta, double gamma_tr, double gamma_fr, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REPWATCH_H */
