#ifndef FAF_H
#define FAF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FafStatus {
  FAF_STATUS_OK = 0,
  // Null pointer, bad UTF-8 or an undersized output buffer.
  FAF_STATUS_INVALID_ARGUMENT = 1,
  FAF_STATUS_VALIDATION = 2,
  FAF_STATUS_NUMERICAL = 3,
  FAF_STATUS_PRECONDITION = 4,
  FAF_STATUS_NOT_FOUND = 5,
  FAF_STATUS_CONFLICT = 6,
  FAF_STATUS_IO = 7,
  FAF_STATUS_PANIC = 99,
} FafStatus;

// Opaque traced frontier.
typedef struct FafFrontier FafFrontier;

// Opaque population model.
typedef struct FafModel FafModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next call into this library on the same thread.
const char *faf_last_error_message(void);

// Library version as a static string.
const char *faf_version(void);

// Parses a model from its JSON form.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum FafStatus faf_model_from_json(const char *json, struct FafModel **out);

// # Safety
// `model` must come from [`faf_model_from_json`] or be null.
void faf_model_free(struct FafModel *model);

// # Safety
// `model` must be a live handle; `out_dim` must be writable.
enum FafStatus faf_model_dim(const struct FafModel *model, size_t *out_dim);

// Writes β_λ into `out_beta`, which must hold at least `len ≥ d` values.
//
// # Safety
// `model` must be a live handle; `out_beta` must point to `len` doubles.
enum FafStatus faf_model_optimal_beta(const struct FafModel *model,
                                      double lambda,
                                      double *out_beta,
                                      size_t len);

// Population risks `R_r(β)`, `R_b(β)` for `beta` of length `len == d`.
//
// # Safety
// `beta` must point to `len` doubles; the outputs must be writable.
enum FafStatus faf_model_risks(const struct FafModel *model,
                               const double *beta,
                               size_t len,
                               double *out_risk_r,
                               double *out_risk_b);

// Traces the frontier on a uniform grid of `grid` weights.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum FafStatus faf_frontier_trace(const struct FafModel *model,
                                  size_t grid,
                                  struct FafFrontier **out);

// Number of points; 0 for a null handle.
//
// # Safety
// `frontier` must be a live handle or null.
size_t faf_frontier_len(const struct FafFrontier *frontier);

// # Safety
// `frontier` must be a live handle; the outputs must be writable.
enum FafStatus faf_frontier_point(const struct FafFrontier *frontier,
                                  size_t index,
                                  double *out_lambda,
                                  double *out_risk_r,
                                  double *out_risk_b);

// # Safety
// `frontier` must come from [`faf_frontier_trace`] or be null.
void faf_frontier_free(struct FafFrontier *frontier);

// Runs a Monte Carlo analysis. `config_json` is an MC config,
// `options_json` selects the analysis and may be null. The report is
// returned in `out_json`.
//
// # Safety
// String arguments must be nul-terminated; `out_json` must be writable.
enum FafStatus faf_mc_run_json(const char *config_json, const char *options_json, char **out_json);

// Evaluates a bounds request (`{"config": ..., "sweep": ...}`).
//
// # Safety
// As [`faf_mc_run_json`].
enum FafStatus faf_bounds_json(const char *request_json, char **out_json);

// Computes an allocation plan (`{"budget": ..., "config": ...}`).
//
// # Safety
// As [`faf_mc_run_json`].
enum FafStatus faf_allocate_json(const char *request_json, char **out_json);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library or be null.
void faf_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAF_H */
