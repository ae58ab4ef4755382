#ifndef MICROSPLAT_H
#define MICROSPLAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_ARGUMENT = 2,
  MS_STATUS_IO = 3,
  MS_STATUS_FORMAT = 4,
  MS_STATUS_EMPTY_SCENE = 5,
  MS_STATUS_OUT_OF_RANGE = 6,
  MS_STATUS_NUMERIC = 7,
  MS_STATUS_PANIC = 8,
} MsStatus;

/**
 * An ordered list of cameras.
 */
typedef struct MsCameras MsCameras;

/**
 * A set of Gaussians.
 */
typedef struct MsScene MsScene;

/**
 * Output of a training run.
 */
typedef struct MsTrainResult MsTrainResult;

/**
 * One Gaussian in its stored parameterization.
 */
typedef struct MsPoint {
  double position[3];
  double log_scale[3];
  /**
   * Unit quaternion, w first.
   */
  double rotation[4];
  double opacity_logit;
  double color[3];
} MsPoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *ms_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ms_version(void);

/**
 * Loads a PLY file into a new scene handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MsStatus ms_scene_load(const char *path, struct MsScene **out);

/**
 * Builds a scene from `count` points.
 *
 * # Safety
 * `points` must point to `count` readable points (may be null when `count`
 * is 0); `background` to 3 doubles; `out` must be valid.
 */
enum MsStatus ms_scene_new(const struct MsPoint *points,
                           size_t count,
                           const double *background,
                           struct MsScene **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `scene` a live handle.
 */
enum MsStatus ms_scene_save(const struct MsScene *scene, const char *path);

/**
 * Number of points, or 0 for a null handle.
 *
 * # Safety
 * `scene` must be null or a live handle.
 */
size_t ms_scene_len(const struct MsScene *scene);

/**
 * # Safety
 * `scene` must be a live handle and `out` valid.
 */
enum MsStatus ms_scene_point(const struct MsScene *scene, size_t index, struct MsPoint *out);

/**
 * # Safety
 * `scene` must be null or a handle not yet freed.
 */
void ms_scene_free(struct MsScene *scene);

/**
 * Drops points with opacity below `threshold` into a new scene. Fails with
 * `MS_STATUS_EMPTY_SCENE` rather than removing every point.
 *
 * # Safety
 * `scene` must be a live handle; `out` valid; `removed` may be null.
 */
enum MsStatus ms_prune(const struct MsScene *scene,
                       double threshold,
                       struct MsScene **out,
                       size_t *removed);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid.
 */
enum MsStatus ms_cameras_load(const char *path, struct MsCameras **out);

/**
 * # Safety
 * `cameras` must be null or a live handle.
 */
size_t ms_cameras_len(const struct MsCameras *cameras);

/**
 * Image size of camera `view`.
 *
 * # Safety
 * `cameras` must be a live handle; `width` and `height` valid.
 */
enum MsStatus ms_camera_size(const struct MsCameras *cameras,
                             size_t view,
                             size_t *width,
                             size_t *height);

/**
 * Renders camera `view` into `rgb`, row-major interleaved RGB in [0, 1].
 * `len` must equal `width * height * 3`.
 *
 * # Safety
 * Handles must be live and `rgb` writable for `len` doubles.
 */
enum MsStatus ms_render(const struct MsScene *scene,
                        const struct MsCameras *cameras,
                        size_t view,
                        double *rgb,
                        size_t len);

/**
 * PSNR (dB, capped at 100) and SSIM between two RGB images of equal size.
 *
 * # Safety
 * `a` and `b` must be readable for `width * height * 3` doubles; outputs valid.
 */
enum MsStatus ms_image_metrics(const double *a,
                               const double *b,
                               size_t width,
                               size_t height,
                               double *psnr_out,
                               double *ssim_out);

/**
 * Trains on the dataset directory `data_dir` (cameras.json, images/,
 * init.ply). `init` overrides the starting scene when non-null;
 * `config_json` is a flat JSON config, or null for defaults.
 *
 * # Safety
 * Strings must be NUL-terminated; `init` null or live; `out` valid.
 */
enum MsStatus ms_train(const char *data_dir,
                       const struct MsScene *init,
                       const char *config_json,
                       struct MsTrainResult **out);

/**
 * Runs encoder refinement alone on `init` (or the dataset's init.ply).
 *
 * # Safety
 * As [`ms_train`].
 */
enum MsStatus ms_gsdo_post(const char *data_dir,
                           const struct MsScene *init,
                           const char *config_json,
                           struct MsTrainResult **out);

/**
 * Copies the trained scene into a new handle.
 *
 * # Safety
 * `result` must be a live handle and `out` valid.
 */
enum MsStatus ms_train_result_scene(const struct MsTrainResult *result, struct MsScene **out);

/**
 * The run report as JSON, owned by `result`.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
const char *ms_train_result_report(const struct MsTrainResult *result);

/**
 * Final mean PSNR over the training views, or NaN for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double ms_train_result_psnr(const struct MsTrainResult *result);

/**
 * # Safety
 * `result` must be null or a handle not yet freed.
 */
void ms_train_result_free(struct MsTrainResult *result);

/**
 * # Safety
 * `cameras` must be null or a handle not yet freed.
 */
void ms_cameras_free(struct MsCameras *cameras);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MICROSPLAT_H */
