#ifndef DIALCOORD_H
#define DIALCOORD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Coarse result categories; `dc_last_error_code` gives the exact cause.
typedef enum DcStatus {
  DC_STATUS_OK = 0,
  DC_STATUS_NULL_POINTER = 1,
  DC_STATUS_INVALID_UTF8 = 2,
  DC_STATUS_INVALID_INPUT = 3,
  DC_STATUS_PROVIDER = 4,
  DC_STATUS_MODEL_NOT_LOADED = 5,
  DC_STATUS_STORAGE = 6,
  DC_STATUS_NUMERIC = 7,
  DC_STATUS_INTERNAL = 8,
  DC_STATUS_PANIC = 9,
} DcStatus;

// One conversation driven by a turn pipeline.
typedef struct DcEngine DcEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates an engine on the deterministic mock provider.
//
// `task` is "esc" or "persuasion"; `n_d` is the embedding width.
//
// # Safety
// `task` must be a valid C string and `out` a valid pointer.
enum DcStatus dc_engine_new_mock(const char *task, uintptr_t n_d, struct DcEngine **out);

// Creates an engine from a TOML config file for one task.
//
// # Safety
// `config_path` and `task` must be valid C strings and `out` a valid pointer.
enum DcStatus dc_engine_from_config(const char *config_path,
                                    const char *task,
                                    struct DcEngine **out);

// Releases an engine. Null is ignored.
//
// # Safety
// `engine` must come from a `dc_engine_new_*` call and not be used again.
void dc_engine_free(struct DcEngine *engine);

// Records a user message, runs one turn and returns its trace as JSON.
//
// On failure the user message stays recorded; posting again retries.
//
// # Safety
// `engine` must be a live handle, `text` a valid C string, `out_json` a
// valid pointer.
enum DcStatus dc_engine_post_message(struct DcEngine *engine, const char *text, char **out_json);

// Writes the conversation so far as a JSON document.
//
// # Safety
// `engine` must be a live handle and `out_json` a valid pointer.
enum DcStatus dc_engine_history_json(struct DcEngine *engine, char **out_json);

// Writes the trace of `round` (1-based) as JSON.
//
// # Safety
// `engine` must be a live handle and `out_json` a valid pointer.
enum DcStatus dc_engine_trace_json(struct DcEngine *engine, uintptr_t round, char **out_json);

// The current round: one more than the number of completed system turns.
// Returns 0 for a null handle.
//
// # Safety
// `engine` must be null or a live handle.
uintptr_t dc_engine_round(const struct DcEngine *engine);

// Clears the conversation, keeping the pipeline.
//
// # Safety
// `engine` must be a live handle.
enum DcStatus dc_engine_reset(struct DcEngine *engine);

// Scores predictions against references. Both inputs are JSON arrays of
// strings of equal length; the output is a JSON object of metrics.
//
// # Safety
// Inputs must be valid C strings and `out_json` a valid pointer.
enum DcStatus dc_metrics_json(const char *predictions_json,
                              const char *references_json,
                              char **out_json);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used again.
void dc_string_free(char *s);

// Message of the last error on this thread, or null. Valid until the
// next call into this library on the same thread.
const char *dc_last_error_message(void);

// Machine-readable code of the last error on this thread (e.g.
// "unknown_round"), or null.
const char *dc_last_error_code(void);

// Library version as a static C string.
const char *dc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIALCOORD_H */
