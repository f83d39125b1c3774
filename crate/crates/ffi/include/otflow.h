#ifndef OTFLOW_H
#define OTFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum OtflowStatus {
  OTFLOW_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  OTFLOW_STATUS_NULL_POINTER = 1,
  /**
   * An argument or parameter value was rejected.
   */
  OTFLOW_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Array or cloud sizes disagree.
   */
  OTFLOW_STATUS_SIZE_MISMATCH = 3,
  /**
   * Reading a file failed.
   */
  OTFLOW_STATUS_IO = 4,
  /**
   * A file was read but its contents are malformed.
   */
  OTFLOW_STATUS_FORMAT = 5,
  /**
   * The computation itself failed (singular system, empty evaluation, ...).
   */
  OTFLOW_STATUS_COMPUTATION = 6,
  /**
   * An internal panic was caught at the boundary.
   */
  OTFLOW_STATUS_PANIC = 7,
} OtflowStatus;

/**
 * Refinement stage selector for [`otflow_config_set_refinement`].
 */
typedef enum OtflowRefinement {
  OTFLOW_REFINEMENT_OFF = 0,
  OTFLOW_REFINEMENT_NAIVE_SMOOTH = 1,
  OTFLOW_REFINEMENT_UNDIRECTED_WALK = 2,
  OTFLOW_REFINEMENT_FULL = 3,
} OtflowRefinement;

/**
 * Point cloud handle.
 */
typedef struct OtflowCloud OtflowCloud;

/**
 * Pipeline configuration handle.
 */
typedef struct OtflowConfig OtflowConfig;

/**
 * Pseudo-label result handle.
 */
typedef struct OtflowLabels OtflowLabels;

/**
 * Accuracy summary returned by [`otflow_evaluate`].
 */
typedef struct OtflowMetrics {
  double epe;
  double as_pct;
  double ar_pct;
  double out_pct;
  size_t point_count;
} OtflowMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (always
 * NUL-terminated when `len > 0`) and returns the full message length in
 * bytes, excluding the terminator. Pass a null `buf` to query the length.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
size_t otflow_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *otflow_version(void);

/**
 * Creates a cloud from `n` packed positions.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_cloud_new(const double *positions, size_t n, struct OtflowCloud **out);

/**
 * Reads a PLY file (ascii or binary little-endian).
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
enum OtflowStatus otflow_cloud_read_ply(const char *path, struct OtflowCloud **out);

/**
 * Attaches `n` packed RGB colors in `[0, 1]`; `n` must equal the cloud size.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_cloud_set_colors(struct OtflowCloud *cloud,
                                          const double *colors,
                                          size_t n);

/**
 * Attaches `n` packed unit normals; `n` must equal the cloud size.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_cloud_set_normals(struct OtflowCloud *cloud,
                                           const double *normals,
                                           size_t n);

/**
 * Number of points, or 0 for a null handle.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
size_t otflow_cloud_len(const struct OtflowCloud *cloud);

/**
 * Releases a cloud; null is ignored.
 *
 * # Safety
 * `cloud` must come from this library and not be used afterwards.
 */
void otflow_cloud_free(struct OtflowCloud *cloud);

/**
 * Creates a configuration holding the library defaults.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_config_default(struct OtflowConfig **out);

/**
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_config_set_epsilon(struct OtflowConfig *config, double epsilon);

/**
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_config_set_sinkhorn_iterations(struct OtflowConfig *config,
                                                        size_t iterations);

/**
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_config_set_newton_steps(struct OtflowConfig *config, size_t steps);

/**
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_config_set_kernels(struct OtflowConfig *config,
                                            double theta_d,
                                            double theta_c,
                                            double theta_r);

/**
 * Enables the optional color and normal cost terms.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_config_set_measures(struct OtflowConfig *config, bool color, bool normal);

/**
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_config_set_alpha(struct OtflowConfig *config, double alpha);

/**
 * Number of walk steps; a negative value selects the closed form.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_config_set_walk_steps(struct OtflowConfig *config, int64_t steps);

/**
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_config_set_max_displacement(struct OtflowConfig *config, double meters);

/**
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_config_set_refinement(struct OtflowConfig *config,
                                               enum OtflowRefinement refinement);

/**
 * Soft (barycentric) instead of hard matching.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_config_set_soft_matching(struct OtflowConfig *config, bool soft);

/**
 * Releases a configuration; null is ignored.
 *
 * # Safety
 * `config` must come from this library and not be used afterwards.
 */
void otflow_config_free(struct OtflowConfig *config);

/**
 * Labels every point of `p` against `q`. With a non-null `predicted_flow`
 * (`otflow_cloud_len(p)` packed vectors) the first frame is pre-warped by
 * it before matching; with null the raw frame is matched.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_generate_labels(const struct OtflowCloud *p,
                                         const struct OtflowCloud *q,
                                         const double *predicted_flow,
                                         const struct OtflowConfig *config,
                                         struct OtflowLabels **out);

/**
 * Number of labels, or 0 for a null handle.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
size_t otflow_labels_len(const struct OtflowLabels *labels);

/**
 * Number of valid labels, or 0 for a null handle.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
size_t otflow_labels_valid_count(const struct OtflowLabels *labels);

/**
 * Copies labels into `flow` (`3 * n` doubles) and validity into `valid`
 * (`n` bytes, 1 = valid; may be null). `n` must equal the label count.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_labels_copy(const struct OtflowLabels *labels,
                                     double *flow,
                                     uint8_t *valid,
                                     size_t n);

/**
 * Releases labels; null is ignored.
 *
 * # Safety
 * `labels` must come from this library and not be used afterwards.
 */
void otflow_labels_free(struct OtflowLabels *labels);

/**
 * Scores `n` packed predicted vectors against ground truth. `mask` (`n`
 * bytes, nonzero = include) may be null to score every point.
 *
 * # Safety
 * Every pointer argument is null or valid for the size documented above,
 * and handles are live objects created by this library.
 */
enum OtflowStatus otflow_evaluate(const double *pred,
                                  const double *gt,
                                  const uint8_t *mask,
                                  size_t n,
                                  struct OtflowMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OTFLOW_H */
