#ifndef MOTIONSRVF_H
#define MOTIONSRVF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum MsStatus {
  MS_OK = 0,
  /**
   * A required pointer was null.
   */
  MS_ERR_NULL = 1,
  /**
   * A size or scalar argument was out of range.
   */
  MS_ERR_INVALID_ARGUMENT = 2,
  /**
   * The output buffer is too small; the required length was reported.
   */
  MS_ERR_BUFFER_TOO_SMALL = 3,
  /**
   * Invalid data or file contents.
   */
  MS_ERR_DATA = 4,
  /**
   * A numerical procedure failed.
   */
  MS_ERR_NUMERICAL = 5,
  MS_ERR_IO = 6,
  /**
   * Internal error; the library state is unchanged.
   */
  MS_ERR_PANIC = 7,
} MsStatus;

/**
 * Trained generator loaded from a checkpoint.
 */
typedef struct MsModel MsModel;

/**
 * Unit-norm SRVF.
 */
typedef struct MsSrvf MsSrvf;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Semantic version of the library, static storage.
 */
const char *ms_version(void);

/**
 * Message of the last failure on this thread, or null after a success.
 * Valid until the next call into the library on this thread.
 */
const char *ms_last_error_message(void);

/**
 * Encodes `frames x landmarks` points into a new SRVF handle.
 */
enum MsStatus ms_srvf_encode(const double *coords,
                             size_t frames,
                             size_t landmarks,
                             struct MsSrvf **out);

/**
 * Builds an SRVF from samples, scaling them to unit norm.
 */
enum MsStatus ms_srvf_from_samples(const double *data,
                                   size_t intervals,
                                   size_t dim,
                                   struct MsSrvf **out);

/**
 * Releases an SRVF handle; null is ignored.
 */
void ms_srvf_free(struct MsSrvf *q);

/**
 * Number of velocity samples (frames - 1); 0 for null.
 */
size_t ms_srvf_intervals(const struct MsSrvf *q);

/**
 * Values per sample (2 x landmarks); 0 for null.
 */
size_t ms_srvf_dim(const struct MsSrvf *q);

/**
 * Copies the `intervals x dim` samples into `out`.
 */
enum MsStatus ms_srvf_copy_data(const struct MsSrvf *q, double *out, size_t len);

/**
 * Decodes `q` from `initial` (2 x landmarks values) into `out`, which
 * receives `(intervals + 1) x dim` values.
 */
enum MsStatus ms_srvf_decode(const struct MsSrvf *q,
                             const double *initial,
                             size_t initial_len,
                             double intensity_factor,
                             double *out,
                             size_t out_len);

/**
 * Geodesic distance on the sphere.
 */
enum MsStatus ms_geodesic_distance(const struct MsSrvf *a, const struct MsSrvf *b, double *out);

/**
 * Registers `b` to `a`. Writes the aligned distance to `cost` and, when
 * `warping` is non-null, the `intervals + 1` warp values.
 */
enum MsStatus ms_align(const struct MsSrvf *a,
                       const struct MsSrvf *b,
                       double *cost,
                       double *warping,
                       size_t warping_len);

/**
 * Karcher mean of `n` handles; `align_each_iter` non-zero registers the
 * members to the running mean.
 */
enum MsStatus ms_karcher_mean(const struct MsSrvf *const *set,
                              size_t n,
                              int32_t align_each_iter,
                              struct MsSrvf **out);

/**
 * Replays the motion of `source` (`frames x landmarks`) from `neutral`.
 * A negative `intensity_factor` keeps the source's path length.
 */
enum MsStatus ms_transfer(const double *source,
                          size_t frames,
                          size_t landmarks,
                          const double *neutral,
                          double intensity_factor,
                          double *out,
                          size_t out_len);

/**
 * Loads a checkpoint written by `motionsrvf train`.
 */
enum MsStatus ms_model_load(const char *path, struct MsModel **out);

/**
 * Releases a model handle; null is ignored.
 */
void ms_model_free(struct MsModel *m);

/**
 * Frames per generated sequence; 0 for null.
 */
size_t ms_model_frames(const struct MsModel *m);

/**
 * Landmarks per frame; 0 for null.
 */
size_t ms_model_landmarks(const struct MsModel *m);

/**
 * Number of classes; 0 for null.
 */
size_t ms_model_num_classes(const struct MsModel *m);

/**
 * Copies the nul-terminated name of class `index` into `buf`.
 */
enum MsStatus ms_model_class_name(const struct MsModel *m, size_t index, char *buf, size_t buf_len);

/**
 * Generates one sequence of `class_name` from `neutral` into `out`
 * (`frames x landmarks x 2` values). Same seed, same output.
 */
enum MsStatus ms_model_generate(const struct MsModel *m,
                                const char *class_name,
                                const double *neutral,
                                size_t neutral_len,
                                double intensity_factor,
                                uint64_t seed,
                                double *out,
                                size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOTIONSRVF_H */
