/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef ZOG_H
#define ZOG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum ZogStatus {
  ZOG_STATUS_OK = 0,
  ZOG_STATUS_NULL_POINTER = 1,
  ZOG_STATUS_INVALID_ARGUMENT = 2,
  ZOG_STATUS_DIMENSION_MISMATCH = 3,
  ZOG_STATUS_BUDGET_EXHAUSTED = 4,
  ZOG_STATUS_IO = 5,
  ZOG_STATUS_INVALID_MODEL = 6,
  ZOG_STATUS_TRANSPORT = 7,
  ZOG_STATUS_REMOTE = 8,
  ZOG_STATUS_PANIC = 9,
} ZogStatus;

typedef enum ZogFailure {
  ZOG_FAILURE_NONE = 0,
  ZOG_FAILURE_BUDGET = 1,
  ZOG_FAILURE_ITERATION_CAP = 2,
  ZOG_FAILURE_ZERO_RADIUS = 3,
} ZogFailure;

typedef enum ZogDirection {
  // Standard normal components (NES).
  ZOG_DIRECTION_GAUSSIAN = 0,
  // Uniform signs (SPSA).
  ZOG_DIRECTION_RADEMACHER = 1,
  // Uniform on (-1, 1) (RDSA).
  ZOG_DIRECTION_UNIFORM = 2,
} ZogDirection;

// A classifier, optionally with a labeled probe set.
typedef struct ZogModel ZogModel;

// A query-metered black box: a local model or a remote server.
typedef struct ZogOracle ZogOracle;

typedef struct ZogEstimatorConfig {
  // A `ZogDirection` value.
  uint32_t direction;
  // 1 or 2.
  uint32_t sides;
  // Directions per estimate.
  uint32_t samples;
  double delta;
  // Bound on the magnitude of each reciprocal component.
  double reciprocal_cap;
} ZogEstimatorConfig;

typedef struct ZogAttackConfig {
  struct ZogEstimatorConfig estimator;
  double epsilon;
  double step_size;
  uint64_t max_iterations;
  uint64_t budget;
  // Nonzero to clamp iterates into `[clip_lo, clip_hi]`.
  uint8_t clip;
  double clip_lo;
  double clip_hi;
} ZogAttackConfig;

typedef struct ZogAttackResult {
  uint8_t success;
  enum ZogFailure failure;
  uint32_t target;
  uint64_t queries;
  uint64_t iterations;
  double linf_dist;
} ZogAttackResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len` bytes) and returns the full message length
// excluding the terminator; 0 when the last call succeeded.
//
// # Safety
// `buf` must be null or valid for `len` bytes of writes.
size_t zog_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *zog_version(void);

// Defaults: 50 samples, δ = 1e-3, reciprocal cap 1e6.
struct ZogEstimatorConfig zog_estimator_config_default(uint32_t direction, uint32_t sides);

// Defaults for inputs on `[0, 1]`: ε = 0.05, step ε/10, clipping on.
struct ZogAttackConfig zog_attack_config_default(struct ZogEstimatorConfig estimator);

// Loads a model file. The handle has no probes.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for a write.
enum ZogStatus zog_model_load(const char *path, struct ZogModel **out);

// Generates a seeded random classifier with `num_probes` labeled probes.
// `dims` holds the input width followed by hidden widths.
//
// # Safety
// `dims` must be valid for `num_dims` reads; `out` must be valid for a write.
enum ZogStatus zog_model_generate(const uint32_t *dims,
                                  size_t num_dims,
                                  uint32_t num_classes,
                                  uint32_t num_probes,
                                  uint64_t seed,
                                  struct ZogModel **out);

// The bundled 64-input, 10-class benchmark with its 50 probes.
//
// # Safety
// `out` must be valid for a write.
enum ZogStatus zog_model_benchmark(struct ZogModel **out);

// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum ZogStatus zog_model_save(const struct ZogModel *model, const char *path);

// Input width; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t zog_model_input_dim(const struct ZogModel *model);

// Class count; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t zog_model_num_classes(const struct ZogModel *model);

// Probe count; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t zog_model_num_probes(const struct ZogModel *model);

// Copies probe `index` into `x` (length `len` = input width) and its label.
//
// # Safety
// `model` must be a live handle; `x` valid for `len` writes; `label` for one.
enum ZogStatus zog_model_probe(const struct ZogModel *model,
                               size_t index,
                               double *x,
                               size_t len,
                               uint32_t *label);

// # Safety
// `model` must be null or a handle not yet freed.
void zog_model_free(struct ZogModel *model);

// An in-process oracle over `model` with its own budget. The model handle
// may be freed afterwards.
//
// # Safety
// `model` must be a live handle; `out` must be valid for a write.
enum ZogStatus zog_oracle_local(const struct ZogModel *model,
                                uint64_t budget,
                                struct ZogOracle **out);

// Connects to a `zog serve` instance at `address` ("host:port").
//
// # Safety
// `address` must be a NUL-terminated string; `out` must be valid for a write.
enum ZogStatus zog_oracle_connect(const char *address, struct ZogOracle **out);

// # Safety
// `oracle` must be null or a handle not yet freed.
void zog_oracle_free(struct ZogOracle *oracle);

// # Safety
// `oracle` must be null or a live handle.
size_t zog_oracle_input_dim(const struct ZogOracle *oracle);

// # Safety
// `oracle` must be null or a live handle.
size_t zog_oracle_num_classes(const struct ZogOracle *oracle);

// Queries served so far and the budget.
//
// # Safety
// `oracle` must be a live handle; `used` and `budget` null or valid for a write.
enum ZogStatus zog_oracle_ledger(const struct ZogOracle *oracle, uint64_t *used, uint64_t *budget);

// One metered query: logits of `x` into `out`.
//
// # Safety
// `oracle` must be a live handle; `x` valid for `len` reads; `out` for
// `out_len` writes.
enum ZogStatus zog_oracle_logits(const struct ZogOracle *oracle,
                                 const double *x,
                                 size_t len,
                                 double *out,
                                 size_t out_len);

// Estimates the gradient of the cross-entropy loss toward `target` at `x`.
// `queries` receives the queries spent, also when the estimate fails.
//
// # Safety
// `oracle` and `config` must be valid; `x` valid for `len` reads; `grad` for
// `len` writes; `queries` null or valid for a write.
enum ZogStatus zog_estimate_gradient(const struct ZogOracle *oracle,
                                     const struct ZogEstimatorConfig *config,
                                     const double *x,
                                     size_t len,
                                     uint32_t target,
                                     uint64_t seed,
                                     double *grad,
                                     uint64_t *queries);

// Runs a targeted attack from `x0`. A negative `target` picks the least
// likely class. The final iterate goes to `x_adv` (length `len`), also on
// failure.
//
// # Safety
// `oracle` and `config` must be valid; `x0` valid for `len` reads; `x_adv`
// null or valid for `len` writes; `result` valid for a write.
enum ZogStatus zog_attack(const struct ZogOracle *oracle,
                          const struct ZogAttackConfig *config,
                          const double *x0,
                          size_t len,
                          int64_t target,
                          uint64_t seed,
                          double *x_adv,
                          struct ZogAttackResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZOG_H */
