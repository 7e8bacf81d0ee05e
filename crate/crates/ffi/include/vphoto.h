#ifndef VPHOTO_H
#define VPHOTO_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VphotoStatus {
  VPHOTO_STATUS_OK = 0,
  VPHOTO_STATUS_NULL_POINTER = 1,
  VPHOTO_STATUS_INVALID_ARGUMENT = 2,
  VPHOTO_STATUS_INVALID_INPUT = 3,
  VPHOTO_STATUS_INCOMPATIBLE_MODEL = 4,
  VPHOTO_STATUS_INVALID_STATE = 5,
  VPHOTO_STATUS_TRAINING = 6,
  VPHOTO_STATUS_FORMAT = 7,
  VPHOTO_STATUS_MISSING_ARTIFACT = 8,
  VPHOTO_STATUS_IO = 9,
  VPHOTO_STATUS_INTERNAL = 10,
  VPHOTO_STATUS_PANIC = 11,
} VphotoStatus;

typedef enum VphotoFilter {
  VPHOTO_FILTER_SATURATION = 0,
  VPHOTO_FILTER_HDR = 1,
  VPHOTO_FILTER_BRIGHTEN = 2,
  VPHOTO_FILTER_VIGNETTE = 3,
  VPHOTO_FILTER_TUNE_BRIGHTNESS = 4,
  VPHOTO_FILTER_TUNE_CONTRAST = 5,
  VPHOTO_FILTER_CURVE = 6,
  VPHOTO_FILTER_FLATTEN_BRIGHTNESS = 7,
} VphotoFilter;

typedef enum VphotoAspect {
  VPHOTO_ASPECT_COMPOSITION = 0,
  VPHOTO_ASPECT_SATURATION = 1,
  VPHOTO_ASPECT_HDR = 2,
  VPHOTO_ASPECT_OVERALL = 3,
} VphotoAspect;

/**
 * Opaque RGB image.
 */
typedef struct VphotoImage VphotoImage;

/**
 * Opaque trained aspect scorer.
 */
typedef struct VphotoScorer VphotoScorer;

/**
 * A crop window in source pixels with its blended score.
 */
typedef struct VphotoCrop {
  size_t x;
  size_t y;
  size_t width;
  size_t height;
  double score;
} VphotoCrop;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *vphoto_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *vphoto_version(void);

/**
 * Creates an image from `3 * width * height` interleaved RGB values.
 * Values outside `[0, 1]` are clamped.
 *
 * # Safety
 * `rgb` must point to `3 * width * height` readable doubles.
 */
enum VphotoStatus vphoto_image_new(size_t width,
                                   size_t height,
                                   const double *rgb,
                                   struct VphotoImage **out);

/**
 * Decodes a PNG or JPEG file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum VphotoStatus vphoto_image_load(const char *path, struct VphotoImage **out);

/**
 * # Safety
 * `image` must be a live handle; `path` a NUL-terminated string.
 */
enum VphotoStatus vphoto_image_save_png(const struct VphotoImage *image, const char *path);

/**
 * # Safety
 * `image` must be a live handle; `width` and `height` writable.
 */
enum VphotoStatus vphoto_image_dims(const struct VphotoImage *image, size_t *width, size_t *height);

/**
 * Copies the pixels into `rgb`, which must hold `3 * width * height`
 * doubles; `len` is its capacity in doubles.
 *
 * # Safety
 * `rgb` must point to `len` writable doubles.
 */
enum VphotoStatus vphoto_image_pixels(const struct VphotoImage *image, double *rgb, size_t len);

/**
 * # Safety
 * `image` must be null or a handle not yet freed.
 */
void vphoto_image_free(struct VphotoImage *image);

/**
 * Applies a filter with `n_params` parameters.
 *
 * # Safety
 * `image` must be a live handle and `params` readable for `n_params`.
 */
enum VphotoStatus vphoto_filter_apply(const struct VphotoImage *image,
                                      enum VphotoFilter filter,
                                      const double *params,
                                      size_t n_params,
                                      struct VphotoImage **out);

/**
 * Projects view `index` (0-5) of the standard panorama layout from a 2:1
 * equirectangular image.
 *
 * # Safety
 * `panorama` must be a live handle; `out` writable.
 */
enum VphotoStatus vphoto_standard_view(const struct VphotoImage *panorama,
                                       size_t index,
                                       size_t size,
                                       struct VphotoImage **out);

/**
 * Loads a trained model file for one aspect.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` writable.
 */
enum VphotoStatus vphoto_scorer_load(enum VphotoAspect aspect,
                                     const char *path,
                                     struct VphotoScorer **out);

/**
 * # Safety
 * Both handles must be live; `score` writable.
 */
enum VphotoStatus vphoto_scorer_score(const struct VphotoScorer *scorer,
                                      const struct VphotoImage *image,
                                      double *score);

/**
 * # Safety
 * `scorer` must be null or a handle not yet freed.
 */
void vphoto_scorer_free(struct VphotoScorer *scorer);

/**
 * Grid search of a one-parameter filter (saturation or HDR) against its
 * paired scorer. An empty `values` list uses the filter's default grid.
 * Any of `best_param`, `best_score` and `out` may be null.
 *
 * # Safety
 * Handles must be live and `values` readable for `n_values`.
 */
enum VphotoStatus vphoto_optimize_filter(const struct VphotoImage *image,
                                         enum VphotoFilter filter,
                                         const struct VphotoScorer *scorer,
                                         const double *values,
                                         size_t n_values,
                                         double *best_param,
                                         double *best_score,
                                         struct VphotoImage **out);

/**
 * Best crop window under the default grid, blending the composition score
 * with weight `c` and the overall score with `1 - c`.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum VphotoStatus vphoto_best_crop(const struct VphotoImage *image,
                                   double c,
                                   const struct VphotoScorer *composition,
                                   const struct VphotoScorer *overall,
                                   struct VphotoCrop *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VPHOTO_H */
