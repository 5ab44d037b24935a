#ifndef DEBIAS_TAGGER_H
#define DEBIAS_TAGGER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call.
 */
typedef enum DtStatus {
  /**
   * Success.
   */
  DT_OK = 0,
  /**
   * Invalid configuration or argument combination.
   */
  DT_ERR_CONFIG = 2,
  /**
   * Unreadable, malformed, or incompatible data (I/O included).
   */
  DT_ERR_DATA = 3,
  /**
   * A numeric failure such as a non-finite value.
   */
  DT_ERR_NUMERIC = 4,
  /**
   * A required pointer argument was NULL.
   */
  DT_ERR_NULL_ARGUMENT = 5,
  /**
   * A string argument was not valid UTF-8.
   */
  DT_ERR_UTF8 = 6,
  /**
   * The library caught an internal panic; state may be incomplete.
   */
  DT_ERR_INTERNAL = 7,
} DtStatus;

/**
 * A loaded tagging model. Opaque; create with `dt_model_load`, release
 * with `dt_model_free`.
 */
typedef struct DtModel DtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of the library, as a static NUL-terminated string.
 */
const char *dt_version(void);

/**
 * Message describing the current thread's most recent failure, or an
 * empty string if there has been none. Valid until the next failing call
 * on this thread.
 */
const char *dt_last_error(void);

/**
 * Loads a model file written by the trainer and stores a handle in
 * `model_out`. On failure `model_out` is untouched.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `model_out` a valid
 * pointer. The returned handle must be released with `dt_model_free`.
 */
enum DtStatus dt_model_load(const char *path, struct DtModel **model_out);

/**
 * Releases a model handle. A NULL handle is a no-op.
 *
 * # Safety
 * `model` must be NULL or a handle from `dt_model_load` that has not
 * been freed already.
 */
void dt_model_free(struct DtModel *model);

/**
 * Number of tags the model predicts over. Tag ids returned by
 * `dt_model_tag` lie in `[0, count)`.
 *
 * # Safety
 * `model` must be a live handle from `dt_model_load`.
 */
uintptr_t dt_model_tag_count(const struct DtModel *model);

/**
 * Label name for a tag id, owned by the model and valid until it is
 * freed. NULL if the id is out of range or the handle is NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle from `dt_model_load`.
 */
const char *dt_model_tag_label(const struct DtModel *model, uintptr_t tag_id);

/**
 * Tags one tokenized sentence. `tokens` holds `token_count` NUL-terminated
 * UTF-8 strings; the predicted tag ids are written to `tag_ids_out`, which
 * must have room for `token_count` entries. Unknown tokens are fine — the
 * model maps them to its unknown-word entry.
 *
 * # Safety
 * `model` must be a live handle; `tokens` must point to `token_count`
 * valid strings; `tag_ids_out` must have room for `token_count` values.
 */
enum DtStatus dt_model_tag(const struct DtModel *model,
                           const char *const *tokens,
                           uintptr_t token_count,
                           uintptr_t *tag_ids_out);

/**
 * Writes the model's learned label-noise transformation to `path` as CSV
 * (prediction tags down the rows, projected tags across the columns).
 *
 * # Safety
 * `model` must be a live handle and `path` a valid NUL-terminated string.
 */
enum DtStatus dt_model_export_bias(const struct DtModel *model, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEBIAS_TAGGER_H */
