#ifndef YELPIMG_H
#define YELPIMG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Star bucket, as returned by [`yi_bucketize`].
 */
typedef enum YiBucket {
  YI_BUCKET_BELOW_AVERAGE = 0,
  YI_BUCKET_AVERAGE = 1,
  YI_BUCKET_ABOVE_AVERAGE = 2,
} YiBucket;

/**
 * Result codes.
 */
typedef enum YiStatus {
  YI_STATUS_OK = 0,
  YI_STATUS_NULL_POINTER = 1,
  YI_STATUS_INVALID_ARGUMENT = 2,
  YI_STATUS_IO = 3,
  YI_STATUS_FORMAT = 4,
  YI_STATUS_SHAPE = 5,
  YI_STATUS_NUMERIC = 6,
  YI_STATUS_PANIC = 7,
} YiStatus;

/**
 * A trained classifier loaded from a checkpoint.
 */
typedef struct YiClassifier YiClassifier;

/**
 * A GAN checkpoint.
 */
typedef struct YiGan YiGan;

/**
 * Random-access reader over a YIMG file.
 */
typedef struct YiStore YiStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *yi_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *yi_version(void);

/**
 * Doubles a half-star rating: `scaled = 2·raw` (2..10), `index = scaled − 2`.
 *
 * # Safety
 * Output pointers must be NULL or valid for writes.
 */
enum YiStatus yi_scale_stars(double raw, uint8_t *scaled_out, uint8_t *index_out);

/**
 * # Safety
 * `bucket_out` must be NULL or valid for writes.
 */
enum YiStatus yi_bucketize(double raw, enum YiBucket *bucket_out);

/**
 * Values in one normalized image (`3·144·200`).
 */
size_t yi_image_len(void);

/**
 * Normalizes an interleaved RGB image of `height × width` pixels into the
 * channel-major signed `(3, 144, 200)` layout. `out_len` must be at least
 * [`yi_image_len`].
 *
 * # Safety
 * `rgb` must point to `height·width·3` readable bytes and `out` to
 * `out_len` writable bytes.
 */
enum YiStatus yi_normalize_image(const uint8_t *rgb,
                                 size_t height,
                                 size_t width,
                                 int8_t *out,
                                 size_t out_len);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for writes.
 */
enum YiStatus yi_store_open(const char *path, struct YiStore **out);

/**
 * # Safety
 * `store` must come from [`yi_store_open`].
 */
enum YiStatus yi_store_len(const struct YiStore *store, uint64_t *len_out);

/**
 * Copies record `index` into `pixels` (`len` ≥ [`yi_image_len`]) and its
 * scaled star value (2..10) into `scaled_stars`.
 *
 * # Safety
 * `store` must come from [`yi_store_open`]; buffers must be valid for writes.
 */
enum YiStatus yi_store_get(struct YiStore *store,
                           uint64_t index,
                           int8_t *pixels,
                           size_t len,
                           uint8_t *scaled_stars);

/**
 * # Safety
 * `store` must come from [`yi_store_open`] and not be used afterwards. NULL is ignored.
 */
void yi_store_free(struct YiStore *store);

/**
 * Loads a `best.ywts` checkpoint (its `.meta` sidecar must sit next to it).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for writes.
 */
enum YiStatus yi_classifier_load(const char *path, struct YiClassifier **out);

/**
 * Number of head outputs: 9, 3, or 1 for regression.
 *
 * # Safety
 * `clf` must come from [`yi_classifier_load`].
 */
enum YiStatus yi_classifier_outputs(const struct YiClassifier *clf, size_t *out);

/**
 * Eval-mode scores for one normalized image. Writes
 * [`yi_classifier_outputs`] values into `scores` and the predicted class
 * (argmax, or the rounded scaled star for regression) into `predicted`.
 *
 * # Safety
 * `clf` must come from [`yi_classifier_load`]; `pixels` must hold `len`
 * readable values and `scores` `scores_len` writable floats.
 */
enum YiStatus yi_classifier_predict(struct YiClassifier *clf,
                                    const int8_t *pixels,
                                    size_t len,
                                    float *scores,
                                    size_t scores_len,
                                    size_t *predicted);

/**
 * # Safety
 * `clf` must come from [`yi_classifier_load`] and not be used afterwards. NULL is ignored.
 */
void yi_classifier_free(struct YiClassifier *clf);

/**
 * Loads a `ckpt_NNNN.ywts` GAN checkpoint (with its `.meta` file).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for writes.
 */
enum YiStatus yi_gan_load(const char *path, struct YiGan **out);

/**
 * Writes a PNG grid of `count` samples drawn with noise seed `seed`.
 *
 * # Safety
 * `gan` must come from [`yi_gan_load`]; `out_path` must be a NUL-terminated string.
 */
enum YiStatus yi_gan_sample_png(struct YiGan *gan,
                                size_t count,
                                uint64_t seed,
                                const char *out_path);

/**
 * # Safety
 * `gan` must come from [`yi_gan_load`] and not be used afterwards. NULL is ignored.
 */
void yi_gan_free(struct YiGan *gan);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* YELPIMG_H */
