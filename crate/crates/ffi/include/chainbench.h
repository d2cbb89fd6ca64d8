#ifndef CHAINBENCH_H
#define CHAINBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdint.h>
#include <stddef.h>

// Result codes shared by every entry point.
typedef enum CbStatus {
  CB_STATUS_OK = 0,
  CB_STATUS_NULL_ARGUMENT = 1,
  CB_STATUS_INVALID_UTF8 = 2,
  CB_STATUS_CONFIG_ERROR = 3,
  CB_STATUS_STATE_ERROR = 4,
  CB_STATUS_NOT_FOUND = 5,
  CB_STATUS_BUFFER_TOO_SMALL = 6,
  CB_STATUS_INTERNAL = 7,
} CbStatus;

// A parsed experiment configuration.
typedef struct CbExperiment CbExperiment;

// The results of one simulated run.
typedef struct CbRun CbRun;

// A versioned key-value store with a bucketed Merkle root.
typedef struct CbStore CbStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cb_version(void);

// Copy of the calling thread's most recent error message, or NULL when
// there is none. Release with `cb_string_free`.
char *cb_last_error(void);

// # Safety
// `s` must be NULL or a string returned by this library, not yet freed.
void cb_string_free(char *s);

// Parse and validate an experiment from TOML text.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum CbStatus cb_experiment_from_toml(const char *toml, struct CbExperiment **out);

// # Safety
// `exp` must be a live experiment handle.
enum CbStatus cb_experiment_set_seed(struct CbExperiment *exp, uint64_t seed);

// The normalized configuration as TOML.
//
// # Safety
// `exp` must be a live experiment handle; `out` must be writable.
enum CbStatus cb_experiment_to_toml(const struct CbExperiment *exp, char **out);

// # Safety
// `exp` must be NULL or a handle not yet freed.
void cb_experiment_free(struct CbExperiment *exp);

// Simulate the experiment to completion. Blocks the calling thread.
//
// # Safety
// `exp` must be a live experiment handle; `out` must be writable.
enum CbStatus cb_experiment_run(const struct CbExperiment *exp, struct CbRun **out);

// Successful transactions per simulated second.
//
// # Safety
// `run` must be a live run handle; `out` must be writable.
enum CbStatus cb_run_throughput(const struct CbRun *run, double *out);

// Blocks appended off the main branch, as seen by the observer.
//
// # Safety
// `run` must be a live run handle; `out` must be writable.
enum CbStatus cb_run_fork_delta(const struct CbRun *run, uint64_t *out);

// 1 when the run hit a liveness stall, else 0.
//
// # Safety
// `run` must be a live run handle; `out` must be writable.
enum CbStatus cb_run_stalled(const struct CbRun *run, int32_t *out);

// Hex digest of the run's event trace.
//
// # Safety
// `run` must be a live run handle; `out` must be writable.
enum CbStatus cb_run_trace_hash(const struct CbRun *run, char **out);

// The JSON summary report.
//
// # Safety
// `run` must be a live run handle; `out` must be writable.
enum CbStatus cb_run_summary_json(const struct CbRun *run, char **out);

// The per-second CSV series.
//
// # Safety
// `run` must be a live run handle; `out` must be writable.
enum CbStatus cb_run_series_csv(const struct CbRun *run, char **out);

// # Safety
// `run` must be NULL or a handle not yet freed.
void cb_run_free(struct CbRun *run);

// A store with `num_buckets` Merkle buckets.
//
// # Safety
// `out` must be writable.
enum CbStatus cb_store_new(uint32_t num_buckets, struct CbStore **out);

// Write a new version of `key` committed at `block`; the new version
// number goes to `version_out` when it is not NULL.
//
// # Safety
// `store` must be a live store handle; `key`/`value` must point to
// `key_len`/`value_len` readable bytes.
enum CbStatus cb_store_put(struct CbStore *store,
                           const uint8_t *key,
                           uintptr_t key_len,
                           const uint8_t *value,
                           uintptr_t value_len,
                           uint64_t block,
                           uint64_t *version_out);

// Copy the latest value of `key` into `buf`. The value's length is always
// written to `len_out`; when it exceeds `buf_len` nothing is copied and
// `BufferTooSmall` is returned.
//
// # Safety
// `store` must be a live store handle; `key` must point to `key_len`
// bytes; `buf` must have `buf_len` writable bytes; `len_out` writable.
enum CbStatus cb_store_get(const struct CbStore *store,
                           const uint8_t *key,
                           uintptr_t key_len,
                           uint8_t *buf,
                           uintptr_t buf_len,
                           uintptr_t *len_out);

// Number of versions stored under `key` (0 when absent).
//
// # Safety
// `store` must be a live store handle; `key` must point to `key_len`
// bytes; `out` must be writable.
enum CbStatus cb_store_version_count(const struct CbStore *store,
                                     const uint8_t *key,
                                     uintptr_t key_len,
                                     uint64_t *out);

// Write the 32-byte state root into `out`.
//
// # Safety
// `store` must be a live store handle; `out` must have 32 writable bytes.
enum CbStatus cb_store_root(struct CbStore *store, uint8_t *out);

// # Safety
// `store` must be NULL or a handle not yet freed.
void cb_store_free(struct CbStore *store);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHAINBENCH_H */
