#ifndef HOI_FUSION_H
#define HOI_FUSION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum HfStatus {
  HF_STATUS_OK = 0,
  HF_STATUS_NULL_POINTER = 1,
  HF_STATUS_INVALID_ARGUMENT = 2,
  HF_STATUS_NO_HEAD_FOUND = 3,
  HF_STATUS_RUN_ABORTED = 4,
  HF_STATUS_IO = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  HF_STATUS_INTERNAL = 6,
} HfStatus;

typedef struct HfField HfField;

typedef struct HfGeneration HfGeneration;

typedef struct HfImage HfImage;

typedef struct HfMask HfMask;

/**
 * Feature toggles for [`hf_generate`].
 */
typedef struct HfToggles {
  bool cac;
  bool latent_merge;
  bool residual_merge;
} HfToggles;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *hf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hf_version(void);

/**
 * # Safety
 * `data` must point to `c * h * w` readable doubles.
 */
enum HfStatus hf_field_new(size_t c, size_t h, size_t w, const double *data, struct HfField **out);

/**
 * # Safety
 * `field` must be null or a handle from this library, not yet freed.
 */
void hf_field_free(struct HfField *field);

/**
 * # Safety
 * `field` must be a live handle; the out pointers must be writable.
 */
enum HfStatus hf_field_shape(const struct HfField *field, size_t *c, size_t *h, size_t *w);

/**
 * Copies the field into `buf`, which must hold exactly `len == c * h * w` doubles.
 *
 * # Safety
 * `field` must be a live handle and `buf` writable for `len` doubles.
 */
enum HfStatus hf_field_read(const struct HfField *field, double *buf, size_t len);

/**
 * # Safety
 * `data` must point to `h * w` readable doubles in `[0, 1]`.
 */
enum HfStatus hf_mask_new(size_t h, size_t w, const double *data, struct HfMask **out);

/**
 * # Safety
 * `mask` must be null or a handle from this library, not yet freed.
 */
void hf_mask_free(struct HfMask *mask);

/**
 * Area-weighted resample to `h × w`.
 *
 * # Safety
 * `mask` must be a live handle and `out` writable.
 */
enum HfStatus hf_mask_resize(const struct HfMask *mask, size_t h, size_t w, struct HfMask **out);

/**
 * # Safety
 * `mask` must be a live handle and `area` writable.
 */
enum HfStatus hf_mask_area(const struct HfMask *mask, double *area);

/**
 * # Safety
 * `size` must be writable.
 */
enum HfStatus hf_kernel_size_from_mask(double area, double alpha, size_t *size);

/**
 * Gaussian low-pass with an odd `kernel_size`.
 *
 * # Safety
 * `field` must be a live handle and `out` writable.
 */
enum HfStatus hf_low_pass(const struct HfField *field, size_t kernel_size, struct HfField **out);

/**
 * `x − low_pass(x)`.
 *
 * # Safety
 * `field` must be a live handle and `out` writable.
 */
enum HfStatus hf_high_pass(const struct HfField *field, size_t kernel_size, struct HfField **out);

/**
 * `mask ⊙ pfd + (1 − mask) ⊙ sd`; the mask must match the fields' H×W.
 *
 * # Safety
 * All handles must be live and `out` writable.
 */
enum HfStatus hf_latent_merge(const struct HfField *pfd,
                              const struct HfField *sd,
                              const struct HfMask *mask,
                              struct HfField **out);

/**
 * Residual merge of a single feature map. `mode` is one of `replace`,
 * `no-filter`, `low-low`, `high-high`, `high-low`, `low-high`; the mask is
 * resampled to the map's resolution.
 *
 * # Safety
 * All handles must be live, `mode` a NUL-terminated string and `out` writable.
 */
enum HfStatus hf_residual_merge(const struct HfField *pfd,
                                const struct HfField *sd,
                                const struct HfMask *mask,
                                size_t kernel_size,
                                const char *mode,
                                struct HfField **out);

/**
 * Applies the cross-attention constraint in place to an `(h·w) × n_tokens`
 * row-major attention map. `mask` must be binary and `h × w`.
 *
 * # Safety
 * `weights` must be writable for `h * w * n_tokens` doubles and `mask` live.
 */
enum HfStatus hf_apply_cac(double *weights,
                           size_t h,
                           size_t w,
                           size_t n_tokens,
                           const struct HfMask *mask,
                           size_t identity_index);

/**
 * Runs the full fused generation on the bundled toy backends.
 *
 * `mask` may be null, in which case the luminance segmentor picks the head.
 * `filter_mode` may be null for the default (`low-high`).
 *
 * # Safety
 * String arguments must be NUL-terminated; `mask` null or live; `out` writable.
 */
enum HfStatus hf_generate(const char *prompt,
                          const char *class_word,
                          uint64_t seed,
                          size_t steps,
                          struct HfToggles toggles,
                          const char *filter_mode,
                          const struct HfMask *mask,
                          struct HfGeneration **out);

/**
 * # Safety
 * `generation` must be null or a handle from this library, not yet freed.
 */
void hf_generation_free(struct HfGeneration *generation);

/**
 * Run manifest as JSON; valid while `generation` lives.
 *
 * # Safety
 * `generation` must be a live handle.
 */
const char *hf_generation_manifest(const struct HfGeneration *generation);

/**
 * # Safety
 * `generation` must be a live handle and `out` writable.
 */
enum HfStatus hf_generation_latent(const struct HfGeneration *generation, struct HfField **out);

/**
 * # Safety
 * `generation` must be a live handle and `out` writable.
 */
enum HfStatus hf_generation_image(const struct HfGeneration *generation, struct HfImage **out);

/**
 * # Safety
 * `image` must be null or a handle from this library, not yet freed.
 */
void hf_image_free(struct HfImage *image);

/**
 * # Safety
 * `image` must be a live handle; the out pointers writable.
 */
enum HfStatus hf_image_size(const struct HfImage *image, size_t *height, size_t *width);

/**
 * Copies interleaved 8-bit RGB into `buf` (`len == height * width * 3`).
 *
 * # Safety
 * `image` must be a live handle and `buf` writable for `len` bytes.
 */
enum HfStatus hf_image_read_rgb8(const struct HfImage *image, uint8_t *buf, size_t len);

/**
 * # Safety
 * `image` must be a live handle and `path` a NUL-terminated string.
 */
enum HfStatus hf_image_save_png(const struct HfImage *image, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOI_FUSION_H */
