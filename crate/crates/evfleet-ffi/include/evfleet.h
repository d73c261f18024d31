#ifndef EVFLEET_H
#define EVFLEET_H

/* Generated by cbindgen from evfleet-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Opaque run configuration handle.
 */
typedef struct EvfleetConfig EvfleetConfig;

/**
 * Opaque trained-model handle.
 */
typedef struct EvfleetModel EvfleetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message into `buf` (truncated, always NUL-terminated).
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes.
 */
void evfleet_last_error(char *buf, uintptr_t len);

/**
 * Create a config with the built-in defaults for `case` (0, 1 or 2).
 * Returns null on an unknown case.
 */
struct EvfleetConfig *evfleet_config_new(int case_);

/**
 * Apply one `key=value` setting (same keys as the config file).
 *
 * # Safety
 * `cfg` must be a live handle from `evfleet_config_new`; `key` and `value`
 * must be valid NUL-terminated strings.
 */
int evfleet_config_set(struct EvfleetConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must come from `evfleet_config_new` and not be used afterwards.
 */
void evfleet_config_free(struct EvfleetConfig *cfg);

/**
 * Run the configured case end-to-end (training, evaluation, artifacts).
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
int evfleet_run_case(const struct EvfleetConfig *cfg);

/**
 * Load a trained model from disk; null on failure.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct EvfleetModel *evfleet_model_load(const char *path);

/**
 * Case index the model was trained for (0, 1 or 2), or -1 on null.
 *
 * # Safety
 * `model` must be a live model handle or null.
 */
int evfleet_model_case(const struct EvfleetModel *model);

/**
 * # Safety
 * `model` must come from `evfleet_model_load` and not be used afterwards.
 */
void evfleet_model_free(struct EvfleetModel *model);

/**
 * Greedy one-day rollout of a saved model into `out_dir/replay_trace.csv`.
 *
 * # Safety
 * `model_path` and `out_dir` must be valid NUL-terminated strings.
 */
int evfleet_replay(const char *model_path, uint64_t seed, const char *out_dir);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* EVFLEET_H */
