#ifndef ESPSIM_H
#define ESPSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Success.
#define ESPSIM_OK 0

// The run finished but a coherence monitor reported a violation.
#define ESPSIM_VIOLATION 1

// The run hit its cycle limit or the watchdog before every core finished.
#define ESPSIM_INCOMPLETE 2

// A required pointer argument was null.
#define ESPSIM_ERR_NULL -1

// A string argument was not valid UTF-8.
#define ESPSIM_ERR_UTF8 -2

// Configuration or trace text failed to parse or validate.
#define ESPSIM_ERR_PARSE -3

// A file could not be read.
#define ESPSIM_ERR_IO -4

// The simulator detected an impossible protocol event.
#define ESPSIM_ERR_PROTOCOL -5

// The call is not valid in the handle's current state.
#define ESPSIM_ERR_STATE -6

// An address lies outside simulated memory.
#define ESPSIM_ERR_ADDRESS -7

// The simulator panicked; the handle should be freed.
#define ESPSIM_ERR_PANIC -8

// Opaque simulation handle.
typedef struct EspSim EspSim;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failed call on this thread, or null. The
// pointer stays valid until the next failing call on the same thread.
const char *espsim_last_error(void);

// Creates a simulator from TOML configuration text. A null `config_toml`
// selects the built-in four-core layout. On success `*out` receives a
// handle that must be released with [`espsim_free`].
//
// # Safety
// `config_toml` must be null or NUL-terminated; `out` must be writable.
int32_t espsim_new(const char *config_toml, uint64_t seed, struct EspSim **out);

// Like [`espsim_new`] but reads the configuration from a file.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
int32_t espsim_new_from_file(const char *path, uint64_t seed, struct EspSim **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `sim` must be null or a handle not yet freed.
void espsim_free(struct EspSim *sim);

// Parses a trace and builds a fresh SoC for it, replacing any previous
// run. Words set with [`espsim_preload_word`] are applied again.
//
// # Safety
// `sim` must be a live handle; `trace_text` must be NUL-terminated.
int32_t espsim_load_trace(struct EspSim *sim, const char *trace_text);

// Sets a word of backing memory before the run starts. The value is kept
// for later [`espsim_load_trace`] calls too.
//
// # Safety
// `sim` must be a live handle.
int32_t espsim_preload_word(struct EspSim *sim, uint64_t addr, uint64_t value);

// Runs until every core finishes, the watchdog fires or `max_cycles`
// have elapsed. Returns [`ESPSIM_OK`], [`ESPSIM_VIOLATION`] or
// [`ESPSIM_INCOMPLETE`]; `cycles_out` (optional) receives the cycle count.
//
// # Safety
// `sim` must be a live handle; `cycles_out` must be null or writable.
int32_t espsim_run(struct EspSim *sim, uint64_t max_cycles, uint64_t *cycles_out);

// Reads the coherent value of a word: the freshest copy in any cache or
// memory.
//
// # Safety
// `sim` must be a live handle; `out` must be writable.
int32_t espsim_read_word(struct EspSim *sim, uint64_t addr, uint64_t *out);

// Number of monitor violations recorded so far.
//
// # Safety
// `sim` must be a live handle; `out` must be writable.
int32_t espsim_violation_count(struct EspSim *sim, uint64_t *out);

// Statistics of the current run as a JSON document, or null on error.
// Release the string with [`espsim_string_free`].
//
// # Safety
// `sim` must be a live handle.
char *espsim_stats_json(struct EspSim *sim);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a pointer from [`espsim_stats_json`] not yet freed.
void espsim_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ESPSIM_H */
