#ifndef PILOTWAVE_H
#define PILOTWAVE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PwKind {
  PW_KIND_BOHMIAN = 0,
  PW_KIND_PILOT_WAVE = 1,
} PwKind;

typedef enum PwStatus {
  PW_STATUS_OK = 0,
  PW_STATUS_NULL_POINTER = 1,
  PW_STATUS_INVALID_CONFIG = 2,
  PW_STATUS_CFL = 3,
  PW_STATUS_NEAR_NODE = 4,
  PW_STATUS_OUTSIDE_DOMAIN = 5,
  PW_STATUS_BUFFER_TOO_SMALL = 6,
  PW_STATUS_NUMERICAL = 7,
  PW_STATUS_PANIC = 8,
} PwStatus;

// Opaque simulation handle.
typedef struct PwSimulation PwSimulation;

typedef struct PwScales {
  double omega_c;
  double k_c;
  double omega_s;
} PwScales;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Valid until the next failing call.
const char *pw_last_error(void);

// Library version as a static nul-terminated string.
const char *pw_version(void);

// Derived scales for `hbar = m = 1` and the preset singular density.
//
// # Safety
// `out` must be null or point to writable memory for one `PwScales`.
enum PwStatus pw_scales(double light_speed, struct PwScales *out);

// Build a simulation from TOML text (same keys as the command-line configs).
//
// # Safety
// `config` must be a valid nul-terminated string; `out` must be writable.
enum PwStatus pw_simulation_new(const char *config, enum PwKind kind, struct PwSimulation **out);

// # Safety
// `sim` must come from [`pw_simulation_new`] and not be used afterwards. Null is ignored.
void pw_simulation_free(struct PwSimulation *sim);

// Advance by `steps` time steps.
//
// # Safety
// `sim` must be a live handle.
enum PwStatus pw_simulation_step(struct PwSimulation *sim, size_t steps);

// Current time, position and velocity. Any output pointer may be null.
//
// # Safety
// `sim` must be a live handle; non-null outputs must be writable (`position`, `velocity` for 3 doubles).
enum PwStatus pw_simulation_particle(struct PwSimulation *sim,
                                     double *time,
                                     double *position,
                                     double *velocity);

// Grid dimensions of the simulation.
//
// # Safety
// `sim` must be a live handle and `dims` writable for 3 values.
enum PwStatus pw_simulation_dims(struct PwSimulation *sim, size_t *dims);

// Copy the guiding field as interleaved `(re, im)` pairs, x fastest. `len` counts doubles and
// must be at least twice the node count.
//
// # Safety
// `sim` must be a live handle and `out` writable for `len` doubles.
enum PwStatus pw_simulation_field(struct PwSimulation *sim, double *out, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PILOTWAVE_H */
