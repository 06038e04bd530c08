#ifndef SAGA_H
#define SAGA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SagaStatus {
  SAGA_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SAGA_STATUS_NULL_ARGUMENT = 1,
  /**
   * Invalid value, configuration or index.
   */
  SAGA_STATUS_INVALID_ARGUMENT = 2,
  /**
   * NaN/infinity or shape fault inside a computation.
   */
  SAGA_STATUS_NUMERICAL = 3,
  /**
   * File could not be read or written.
   */
  SAGA_STATUS_IO = 4,
  /**
   * Malformed file contents.
   */
  SAGA_STATUS_FORMAT = 5,
  /**
   * Output buffer too small.
   */
  SAGA_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * Internal panic caught at the boundary.
   */
  SAGA_STATUS_PANIC = 7,
} SagaStatus;

/**
 * Selection mode for [`saga_fly`].
 */
typedef enum SagaMode {
  SAGA_MODE_LEARNED = 0,
  SAGA_MODE_ORACLE = 1,
  SAGA_MODE_RANDOM = 2,
} SagaMode;

/**
 * Opaque planner network.
 */
typedef struct SagaNet SagaNet;

/**
 * Opaque pillar world.
 */
typedef struct SagaWorld SagaWorld;

/**
 * Outcome of one simulated flight.
 */
typedef struct SagaFlightSummary {
  bool success;
  /**
   * 0 none, 1 collision, 2 timeout, 3 fault.
   */
  int32_t failure_cause;
  double time_s;
  double length_m;
  double avg_safety_m;
  double min_safety_m;
  double smoothness;
  uint64_t replans;
} SagaFlightSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty after a success).
 * The pointer stays valid until the next call on the same thread.
 */
const char *saga_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *saga_version(void);

/**
 * Generates a world with the default bounds, start and goal.
 *
 * # Safety
 * `out` must be a valid pointer; the handle written there must be released
 * with [`saga_world_free`].
 */
enum SagaStatus saga_world_generate(uint64_t seed, double density, struct SagaWorld **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SagaStatus saga_world_load(const char *path, struct SagaWorld **out);

/**
 * # Safety
 * `world` must come from this library; `path` must be NUL-terminated.
 */
enum SagaStatus saga_world_save(const struct SagaWorld *world, const char *path);

/**
 * # Safety
 * `world` must be null or a handle from this library not yet freed.
 */
void saga_world_free(struct SagaWorld *world);

/**
 * # Safety
 * `world` must be a live handle and `out` a valid pointer.
 */
enum SagaStatus saga_world_pillar_count(const struct SagaWorld *world, size_t *out);

/**
 * Signed distance from (x, y, z) to the nearest pillar surface.
 *
 * # Safety
 * `world` must be a live handle and `out` a valid pointer.
 */
enum SagaStatus saga_world_signed_distance(const struct SagaWorld *world,
                                           double x,
                                           double y,
                                           double z,
                                           double *out);

/**
 * Renders the default camera's depth image (row-major meters) into `buf`.
 * `height` and `width` receive the image size; with a null `buf` only the
 * size is reported.
 *
 * # Safety
 * `buf` must be null or hold `len` floats; `height`/`width` valid pointers.
 */
enum SagaStatus saga_render_depth(const struct SagaWorld *world,
                                  double x,
                                  double y,
                                  double z,
                                  double yaw,
                                  float *buf,
                                  size_t len,
                                  size_t *height,
                                  size_t *width);

/**
 * Freshly initialized network; `tiny` selects the shrunken widths.
 *
 * # Safety
 * `out` must be a valid pointer; release with [`saga_net_free`].
 */
enum SagaStatus saga_net_new(bool tiny, uint64_t seed, struct SagaNet **out);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` a valid pointer.
 */
enum SagaStatus saga_net_load(const char *path, struct SagaNet **out);

/**
 * # Safety
 * `net` must be a live handle; `path` NUL-terminated.
 */
enum SagaStatus saga_net_save(const struct SagaNet *net, const char *path);

/**
 * # Safety
 * `net` must be null or a handle from this library not yet freed.
 */
void saga_net_free(struct SagaNet *net);

/**
 * One planning step at a world pose: renders depth, runs the network and
 * writes the 15 scores, the 15×9 normalized refinements (row-major) and the
 * selected anchor index.
 *
 * # Safety
 * Handles must be live; `scores` must hold 15 doubles, `refinements` 135
 * doubles, `selected` one usize.
 */
enum SagaStatus saga_plan(const struct SagaNet *net,
                          const struct SagaWorld *world,
                          double x,
                          double y,
                          double z,
                          double yaw,
                          const double *velocity,
                          double v_max,
                          bool ppe,
                          double *scores,
                          double *refinements,
                          size_t *selected);

/**
 * Flies one episode in `world` with default settings at speed `v_max`.
 * `net` may be null unless `mode` is learned.
 *
 * # Safety
 * Handles must be live or null as described; `out` a valid pointer.
 */
enum SagaStatus saga_fly(const struct SagaWorld *world,
                         const struct SagaNet *net,
                         enum SagaMode mode,
                         double v_max,
                         uint64_t seed,
                         struct SagaFlightSummary *out);

/**
 * Single-axis quintic through the boundary conditions: writes the six
 * power-basis coefficients `c0..c5` of `q(t) = Σ c_m t^m` on `[0, duration]`.
 *
 * # Safety
 * `coeffs` must hold 6 doubles.
 */
enum SagaStatus saga_quintic_coeffs(double p0,
                                    double v0,
                                    double a0,
                                    double p1,
                                    double v1,
                                    double a1,
                                    double duration,
                                    double *coeffs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAGA_H */
