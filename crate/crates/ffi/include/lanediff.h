#ifndef LANEDIFF_H
#define LANEDIFF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum LdStatus {
  LD_STATUS_OK = 0,
  LD_STATUS_NULL_POINTER = 1,
  LD_STATUS_INVALID_ARGUMENT = 2,
  LD_STATUS_CONFIG = 3,
  LD_STATUS_CHECKPOINT = 4,
  LD_STATUS_IO = 5,
  LD_STATUS_SHAPE_MISMATCH = 6,
  LD_STATUS_NUMERIC = 7,
  LD_STATUS_OTHER = 8,
  LD_STATUS_PANIC = 9,
} LdStatus;

/**
 * A denoiser with its noise schedule.
 */
typedef struct LdModel LdModel;

/**
 * Sampled maps of one scene.
 */
typedef struct LdSamples LdSamples;

/**
 * A generated scene with its observation grid.
 */
typedef struct LdScene LdScene;

/**
 * Sampler settings passed by value.
 */
typedef struct LdSamplerParams {
  uint32_t k;
  double eta;
  double tau;
  uint32_t n;
  uint32_t queries;
} LdSamplerParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ld_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *ld_version(void);

/**
 * Default sampler settings.
 */
struct LdSamplerParams ld_sampler_defaults(void);

/**
 * Generate a scene; `difficulty` is 0 (easy), 1 (medium) or 2 (hard).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum LdStatus ld_scene_generate(uint64_t seed, uint32_t difficulty, struct LdScene **out);

/**
 * # Safety
 * `scene` must be null or a handle from `ld_scene_generate` not yet freed.
 */
void ld_scene_free(struct LdScene *scene);

/**
 * Number of ground-truth polylines of the scene.
 *
 * # Safety
 * `scene` must be a live handle and `out` writable.
 */
enum LdStatus ld_scene_element_count(const struct LdScene *scene, size_t *out);

/**
 * Freshly initialized model with default architecture and a
 * `DEFAULT_STEPS` cosine schedule.
 *
 * # Safety
 * `out` must be writable.
 */
enum LdStatus ld_model_new(uint64_t seed, struct LdModel **out);

/**
 * Load a checkpoint written by `lanediff train`.
 *
 * # Safety
 * `path` must be a nul-terminated UTF-8 string and `out` writable.
 */
enum LdStatus ld_model_load(const char *path, struct LdModel **out);

/**
 * # Safety
 * `model` must be null or a live model handle.
 */
void ld_model_free(struct LdModel *model);

/**
 * Draw `params.n` samples for `scene`.
 *
 * # Safety
 * `model` and `scene` must be live handles and `out` writable.
 */
enum LdStatus ld_model_sample(const struct LdModel *model,
                              const struct LdScene *scene,
                              struct LdSamplerParams params,
                              uint64_t seed,
                              struct LdSamples **out);

/**
 * # Safety
 * `samples` must be null or a live handle.
 */
void ld_samples_free(struct LdSamples *samples);

/**
 * Number of sampled maps.
 *
 * # Safety
 * `samples` must be a live handle and `out` writable.
 */
enum LdStatus ld_samples_count(const struct LdSamples *samples, size_t *out);

/**
 * Number of polylines in sample `i`.
 *
 * # Safety
 * `samples` must be a live handle and `out` writable.
 */
enum LdStatus ld_samples_element_count(const struct LdSamples *samples, size_t i, size_t *out);

/**
 * Polyline `j` of sample `i`: class index (0 divider, 1 boundary,
 * 2 pedestrian crossing), score, and points as metric `x, y` pairs written
 * to `points` (capacity `cap` doubles). `n_points` receives the point count
 * even when `cap` is too small, in which case nothing is written and
 * `InvalidArgument` is returned.
 *
 * # Safety
 * All out pointers must be writable; `points` must hold `cap` doubles.
 */
enum LdStatus ld_samples_element(const struct LdSamples *samples,
                                 size_t i,
                                 size_t j,
                                 uint32_t *class_out,
                                 double *score_out,
                                 double *points,
                                 size_t cap,
                                 size_t *n_points);

/**
 * Uncertainty map of the samples (row-major, `h * w` doubles) after
 * dropping polylines scoring at or below `score_filter`. `h` and `w`
 * receive the shape even when `cap` is too small.
 *
 * # Safety
 * `out` must hold `cap` doubles; `h` and `w` must be writable.
 */
enum LdStatus ld_samples_uncertainty(const struct LdSamples *samples,
                                     double score_filter,
                                     double *out,
                                     size_t cap,
                                     size_t *h,
                                     size_t *w);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LANEDIFF_H */
