#ifndef LEGALFORM_H
#define LEGALFORM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum LfStatus {
  LF_STATUS_OK = 0,
  LF_STATUS_NULL_ARGUMENT = 1,
  LF_STATUS_INVALID_UTF8 = 2,
  LF_STATUS_IO = 3,
  LF_STATUS_CORRUPT_MODEL = 4,
  LF_STATUS_VERSION_MISMATCH = 5,
  LF_STATUS_INVALID_ARGUMENT = 6,
  LF_STATUS_NOT_FOUND = 7,
  LF_STATUS_PANIC = 8,
} LfStatus;

/**
 * Preprocessing modes accepted by `lf_normalize`.
 */
typedef enum LfPreprocessMode {
  LF_PREPROCESS_MODE_LOWER_ONLY = 0,
  LF_PREPROCESS_MODE_EXTENDED = 1,
} LfPreprocessMode;

/**
 * Opaque trained pipeline.
 */
typedef struct LfPipeline LfPipeline;

/**
 * Opaque ELF code registry.
 */
typedef struct LfRegistry LfRegistry;

/**
 * One scored class. `elf_code` is NUL-terminated.
 */
typedef struct LfPrediction {
  char elf_code[5];
  double probability;
} LfPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call on the same thread.
 */
const char *lf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lf_version(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void lf_string_free(char *s);

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum LfStatus lf_pipeline_load(const char *path, struct LfPipeline **out);

/**
 * Loads a model from an in-memory model file image.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` must be writable.
 */
enum LfStatus lf_pipeline_from_bytes(const uint8_t *data, size_t len, struct LfPipeline **out);

/**
 * Releases a pipeline. NULL is ignored.
 *
 * # Safety
 * `p` must come from `lf_pipeline_load` or `lf_pipeline_from_bytes`.
 */
void lf_pipeline_free(struct LfPipeline *p);

/**
 * Classifies a legal name. Writes up to `capacity` classes, best first,
 * into `results` and their count into `written`.
 *
 * # Safety
 * `p` must be a live pipeline, `name` NUL-terminated, `results` writable
 * for `capacity` elements and `written` writable.
 */
enum LfStatus lf_pipeline_classify(const struct LfPipeline *p,
                                   const char *name,
                                   struct LfPrediction *results,
                                   size_t capacity,
                                   size_t *written);

/**
 * Model identifier such as `cnb+prep`.
 *
 * # Safety
 * `p` must be a live pipeline and `out` writable.
 */
enum LfStatus lf_pipeline_model_id(const struct LfPipeline *p, char **out);

/**
 * Jurisdiction the model was trained for.
 *
 * # Safety
 * `p` must be a live pipeline and `out` writable.
 */
enum LfStatus lf_pipeline_jurisdiction(const struct LfPipeline *p, char **out);

/**
 * Number of classes the model can predict.
 *
 * # Safety
 * `p` must be a live pipeline or NULL (returns 0).
 */
size_t lf_pipeline_n_classes(const struct LfPipeline *p);

/**
 * Applies a preprocessing chain to a name.
 *
 * # Safety
 * `name` must be NUL-terminated and `out` writable.
 */
enum LfStatus lf_normalize(const char *name, enum LfPreprocessMode mode, char **out);

/**
 * Loads an ELF code list CSV with the standard column names.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum LfStatus lf_registry_load(const char *path, struct LfRegistry **out);

/**
 * Releases a registry. NULL is ignored.
 *
 * # Safety
 * `r` must come from `lf_registry_load`.
 */
void lf_registry_free(struct LfRegistry *r);

/**
 * Local legal-form name for an ELF code.
 *
 * # Safety
 * `r` must be a live registry, `code` NUL-terminated and `out` writable.
 */
enum LfStatus lf_registry_local_name(const struct LfRegistry *r, const char *code, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEGALFORM_H */
