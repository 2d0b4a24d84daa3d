#ifndef RESCON_H
#define RESCON_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum RcStatus {
  RC_STATUS_OK = 0,
  RC_STATUS_NULL_POINTER = 1,
  RC_STATUS_INVALID_ARGUMENT = 2,
  // No grid point admits a certificate.
  RC_STATUS_INFEASIBLE = 3,
  // A certificate check failed.
  RC_STATUS_VERIFICATION_FAILED = 4,
  // Caller buffer shorter than required.
  RC_STATUS_BUFFER_TOO_SMALL = 5,
  RC_STATUS_NUMERICAL = 6,
  RC_STATUS_PANIC = 7,
} RcStatus;

typedef enum RcDirection {
  RC_DIRECTION_MINIMIZE = 0,
  RC_DIRECTION_MAXIMIZE = 1,
} RcDirection;

// A built power-system model: parameters plus ZOH matrices.
typedef struct RcModel RcModel;

// A synthesized certificate.
typedef struct RcResult RcResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *rescon_last_error(void);

// Builds a model from JSON text (model file format).
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum RcStatus rescon_model_from_json(const char *json, struct RcModel **out);

// Builds the two-generator, two-storage reference model (`τ = 2 s`).
//
// # Safety
// `out` must be writable.
enum RcStatus rescon_model_case_study(struct RcModel **out);

// # Safety
// `model` must come from this library and not be freed twice. Null is a no-op.
void rescon_model_free(struct RcModel *model);

// State dimension `n` and input dimension `m`.
//
// # Safety
// Pointers must be valid.
enum RcStatus rescon_model_dims(const struct RcModel *model, size_t *n, size_t *m);

// Discrete matrices `A` (n×n), `B` (n×m), `H` (n×1), row-major.
//
// # Safety
// Each buffer must hold at least its stated length.
enum RcStatus rescon_model_matrices(const struct RcModel *model,
                                    double *a,
                                    size_t a_len,
                                    double *b,
                                    size_t b_len,
                                    double *h,
                                    size_t h_len);

// Physical setpoint bounds `γ` (m values).
//
// # Safety
// `out` must hold `len` values.
enum RcStatus rescon_model_physical_bounds(const struct RcModel *model, double *out, size_t len);

// Synthesizes resilient bounds.
//
// `unsafe_json` is either `frequency_limit:<Hz>` or JSON half-spaces;
// `a_grid` is `start:step:end`, or null for the default grid. Returns
// [`RcStatus::Infeasible`] when no grid point admits a certificate.
//
// # Safety
// Strings must be NUL-terminated; `out` must be writable.
enum RcStatus rescon_synthesize(const struct RcModel *model,
                                const char *unsafe_json,
                                const char *a_grid,
                                struct RcResult **out);

// Loads a result saved by `rescon_result_to_json` or the CLI.
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum RcStatus rescon_result_from_json(const char *json, struct RcResult **out);

// # Safety
// `result` must come from this library and not be freed twice. Null is a no-op.
void rescon_result_free(struct RcResult *result);

// Number of input channels `m`.
//
// # Safety
// Pointers must be valid.
enum RcStatus rescon_result_input_dim(const struct RcResult *result, size_t *m);

// Resilient bounds `γ̂` (m values).
//
// # Safety
// `out` must hold `len` values.
enum RcStatus rescon_result_gamma_hat(const struct RcResult *result, double *out, size_t len);

// Ellipsoid shape `W` (n×n, row-major).
//
// # Safety
// `out` must hold `len` values.
enum RcStatus rescon_result_w(const struct RcResult *result, double *out, size_t len);

// Selected `a` and objective `Σγ̂`.
//
// # Safety
// Pointers must be valid.
enum RcStatus rescon_result_scalars(const struct RcResult *result, double *a, double *objective);

// Serializes a result. Release the string with [`rescon_string_free`].
//
// # Safety
// Pointers must be valid.
enum RcStatus rescon_result_to_json(const struct RcResult *result, char **out);

// # Safety
// `s` must come from this library. Null is a no-op.
void rescon_string_free(char *s);

// Re-checks a certificate without the solver: PSD checks, safety and
// bound constraints, plus `trials` sampled trajectories of `horizon`
// steps. Returns [`RcStatus::VerificationFailed`] if any check fails.
//
// # Safety
// Pointers must be valid; `unsafe_json` NUL-terminated.
enum RcStatus rescon_verify(const struct RcModel *model,
                            const struct RcResult *result,
                            const char *unsafe_json,
                            size_t trials,
                            size_t horizon,
                            uint64_t seed);

// Worst-case setpoint attack from rest with no disturbance: writes
// `Δf(horizon)` to `achieved` and, if `signal` is non-null, the
// `horizon × m` setpoints row-major.
//
// # Safety
// `bounds` must hold `bounds_len` values; `signal`, when non-null, `signal_len`.
enum RcStatus rescon_optimal_setpoint_attack(const struct RcModel *model,
                                             const double *bounds,
                                             size_t bounds_len,
                                             size_t horizon,
                                             enum RcDirection direction,
                                             double *achieved,
                                             double *signal,
                                             size_t signal_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RESCON_H */
