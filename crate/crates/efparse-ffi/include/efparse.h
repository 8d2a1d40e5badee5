#ifndef EFPARSE_H
#define EFPARSE_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit codes.
 */
typedef enum EfpStatus {
  EFP_STATUS_OK = 0,
  EFP_STATUS_USAGE = 1,
  EFP_STATUS_DATA = 2,
  EFP_STATUS_MISMATCH = 3,
  EFP_STATUS_NULL_ARGUMENT = 4,
  EFP_STATUS_INVALID_UTF8 = 5,
} EfpStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct EfpModel EfpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *efp_last_error(void);

/**
 * Library version as a static string.
 */
const char *efp_version(void);

/**
 * Load a checkpoint (the `.meta.json` sidecar must sit next to it) and
 * hand back an owned model via `out`.
 *
 * # Safety
 * `checkpoint_path` must be a valid NUL-terminated string and `out` a
 * valid pointer; the result must be released with [`efp_model_free`].
 */
enum EfpStatus efp_model_load(const char *checkpoint_path, struct EfpModel **out);

/**
 * Release a model returned by [`efp_model_load`]. NULL is a no-op.
 *
 * # Safety
 * `model` must be NULL or a pointer from [`efp_model_load`] not yet freed.
 */
void efp_model_free(struct EfpModel *model);

/**
 * Parse CoNLL text and return new CoNLL text with predicted heads and
 * relations filled in. The caller owns `*out` and frees it with
 * [`efp_string_free`].
 *
 * # Safety
 * `model` must come from [`efp_model_load`]; `conll` must be a valid
 * NUL-terminated string; `out` must be a valid pointer.
 */
enum EfpStatus efp_parse_conll(const struct EfpModel *model, const char *conll, char **out);

/**
 * Score predicted CoNLL text against gold CoNLL text with the default
 * punctuation policy, writing UAS and LAS through the out pointers.
 *
 * # Safety
 * All pointers must be valid; the strings NUL-terminated.
 */
enum EfpStatus efp_eval_conll(const char *gold, const char *pred, double *uas, double *las);

/**
 * Free a string returned by this library. NULL is a no-op.
 *
 * # Safety
 * `s` must be NULL or a pointer returned by an `efp_*` function, not yet
 * freed.
 */
void efp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EFPARSE_H */
