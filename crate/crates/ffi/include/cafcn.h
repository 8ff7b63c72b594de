#ifndef CAFCN_H
#define CAFCN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum CafcnStatus {
  CAFCN_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  CAFCN_STATUS_NULL_POINTER = 1,
  /**
   * An argument was out of range or inconsistent.
   */
  CAFCN_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A file could not be read.
   */
  CAFCN_STATUS_IO = 3,
  /**
   * A file was malformed or did not match the expected layout.
   */
  CAFCN_STATUS_FORMAT = 4,
  /**
   * The library failed internally (including caught panics).
   */
  CAFCN_STATUS_INTERNAL = 5,
} CafcnStatus;

/**
 * Loaded network weights.
 */
typedef struct CafcnModel CafcnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null if none. The
 * pointer stays valid until the next failing call on this thread.
 */
const char *cafcn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cafcn_version(void);

/**
 * Load a weight file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer to
 * writable storage for one model pointer.
 */
enum CafcnStatus cafcn_model_load(const char *path, struct CafcnModel **out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a pointer from [`cafcn_model_load`] that has not
 * been freed.
 */
void cafcn_model_free(struct CafcnModel *model);

/**
 * Change the binarization threshold used by word formation (default
 * 240/255).
 *
 * # Safety
 * `model` must be a live pointer from [`cafcn_model_load`].
 */
enum CafcnStatus cafcn_model_set_threshold(struct CafcnModel *model, double threshold);

/**
 * Recognize an interleaved 8-bit RGB image (`height * width * 3` bytes, row
 * major). On success `*json_out` receives
 * `{"word": ..., "chars": [{"char", "box", "conf"}]}`.
 *
 * # Safety
 * `model` must be live, `pixels` must point to `width * height * 3`
 * readable bytes and `json_out` must be writable.
 */
enum CafcnStatus cafcn_predict_rgb8(const struct CafcnModel *model,
                                    const uint8_t *pixels,
                                    uint32_t width,
                                    uint32_t height,
                                    char **json_out);

/**
 * Run word formation alone on a probability map laid out as
 * `height * width * classes` floats (class fastest). `*word_out` receives
 * the decoded word.
 *
 * # Safety
 * `probs` must point to `height * width * classes` readable floats and
 * `word_out` must be writable.
 */
enum CafcnStatus cafcn_form_word(const float *probs,
                                 uint32_t height,
                                 uint32_t width,
                                 uint32_t classes,
                                 char **word_out);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string from this library that has not been freed.
 */
void cafcn_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAFCN_H */
