/* SPDX-License-Identifier: Apache-2.0 */

#ifndef SPGUARD_H
#define SPGUARD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Values 2 to 4 match the CLI exit codes.
 */
typedef enum SpgStatus {
  SPG_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  SPG_STATUS_NULL_POINTER = 1,
  SPG_STATUS_CONFIG = 2,
  SPG_STATUS_NUMERIC = 3,
  SPG_STATUS_CALIBRATION = 4,
  /**
   * Mismatched lengths or another broken precondition.
   */
  SPG_STATUS_CONTRACT = 5,
  SPG_STATUS_IO = 6,
  SPG_STATUS_PANIC = 7,
} SpgStatus;

/**
 * Opaque guidance method.
 */
typedef struct SpgMethod SpgMethod;

/**
 * Opaque toy world.
 */
typedef struct SpgWorld SpgWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *spg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *spg_version(void);

/**
 * Cosine similarity of two length-`n` vectors (0 when either is numerically zero).
 *
 * # Safety
 * `a` and `b` are valid for `n` reads; `out_value` for one write.
 */
enum SpgStatus spg_cosine_sim(const double *a, const double *b, size_t n, double *out_value);

/**
 * Nearest-rank `q`-quantile threshold of `n` values (see the Rust docs of
 * `percentile_threshold`); use with a strict `>` comparison.
 *
 * # Safety
 * `x` is valid for `n` reads; `out_value` for one write.
 */
enum SpgStatus spg_percentile_threshold(const double *x, size_t n, double q, double *out_value);

/**
 * SP-Guard selective mask of two `channels×height×width` direction tensors.
 * `signed_weight` non-zero selects `1 + max(0, ψ)` instead of `1 + |ψ|`.
 *
 * # Safety
 * `dc_prompt`, `dc_unsafe` and `out_mask` are valid for `channels·height·width` elements.
 */
enum SpgStatus spg_spguard_mask(const double *dc_prompt,
                                const double *dc_unsafe,
                                size_t channels,
                                size_t height,
                                size_t width,
                                double q,
                                int signed_weight,
                                double *out_mask);

/**
 * RMSE between two length-`n` images.
 *
 * # Safety
 * `a` and `b` are valid for `n` reads; `out_value` for one write.
 */
enum SpgStatus spg_preservation_distance(const double *a,
                                         const double *b,
                                         size_t n,
                                         double *out_value);

/**
 * Creates the built-in default world.
 *
 * # Safety
 * `out_world` is valid for one write.
 */
enum SpgStatus spg_world_new_default(struct SpgWorld **out_world);

/**
 * Creates a world from a TOML definition.
 *
 * # Safety
 * `toml` is a NUL-terminated string; `out_world` is valid for one write.
 */
enum SpgStatus spg_world_from_toml(const char *toml, struct SpgWorld **out_world);

/**
 * # Safety
 * `world` is NULL or a handle from this library not yet freed.
 */
void spg_world_free(struct SpgWorld *world);

/**
 * Latent shape of `world`.
 *
 * # Safety
 * `world` is a live handle; the out-pointers are valid for one write each.
 */
enum SpgStatus spg_world_shape(const struct SpgWorld *world,
                               size_t *out_channels,
                               size_t *out_height,
                               size_t *out_width);

/**
 * Built-in method by name: `cfg`, `neg`, `sld-weak`, `sld-medium`,
 * `sld-strong`, `sld-max` or `spguard` (shipped defaults).
 *
 * # Safety
 * `name` is a NUL-terminated string; `out_method` is valid for one write.
 */
enum SpgStatus spg_method_builtin(const char *name, double s_g, struct SpgMethod **out_method);

/**
 * Method from a TOML table with the keys of an experiment config's `[[methods]]` entry.
 *
 * # Safety
 * `toml` is a NUL-terminated string; `out_method` is valid for one write.
 */
enum SpgStatus spg_method_from_toml(const char *toml, struct SpgMethod **out_method);

/**
 * # Safety
 * `method` is NULL or a handle from this library not yet freed.
 */
void spg_method_free(struct SpgMethod *method);

/**
 * Samples the default scenario of `world` at harmfulness `alpha` with
 * `method` from the initial noise of `seed`, using the default schedule
 * with `num_steps` steps (0 for the default of 50). Writes the final image
 * into `out_image`, which must hold exactly `out_len` = C·H·W doubles.
 *
 * # Safety
 * `world` and `method` are live handles; `out_image` is valid for `out_len` writes.
 */
enum SpgStatus spg_sample(const struct SpgWorld *world,
                          const struct SpgMethod *method,
                          double alpha,
                          uint64_t seed,
                          size_t num_steps,
                          double *out_image,
                          size_t out_len);

/**
 * Unsafe-content detector score of `image` (length C·H·W) for `world`'s
 * first unsafe concept: Pearson correlation over its region.
 *
 * # Safety
 * `world` is a live handle; `image` is valid for `len` reads; `out_value` for one write.
 */
enum SpgStatus spg_detector_score(const struct SpgWorld *world,
                                  const double *image,
                                  size_t len,
                                  double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPGUARD_H */
