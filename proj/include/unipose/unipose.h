#ifndef UNIPOSE_UNIPOSE_H
#define UNIPOSE_UNIPOSE_H

/* C interface to the unipose library. Every call returns a status; on failure
 * up_last_error() describes the most recent error on the calling thread.
 * Strings returned through char** are owned by the caller and released with
 * up_string_free(). */

#include <stddef.h>
#include <stdint.h>

#if defined(UNIPOSE_BUILDING_LIBRARY)
#define UP_API __attribute__((visibility("default")))
#else
#define UP_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum up_status {
  UP_OK = 0,
  UP_ERR_INTERNAL = 1,
  UP_ERR_VALIDATION = 2, /* bad input, format or I/O */
  UP_ERR_ESTIMATION = 3, /* no consensus, degenerate geometry, divergence */
  UP_ERR_PROVIDER = 4    /* feature provider failed */
} up_status;

typedef struct up_context up_context;

typedef struct up_similarity {
  double r[9]; /* rotation, row-major */
  double t[3]; /* metres */
  double s;
} up_similarity;

typedef struct up_ransac_params {
  int max_iters;
  int sample_size;
  double inlier_threshold_rel;
  double confidence_stop;
  uint64_t seed;
} up_ransac_params;

UP_API const char* up_version(void);
UP_API const char* up_last_error(void);
UP_API void up_string_free(char* s);

/* config_json may be NULL for defaults; missing keys keep their defaults. */
UP_API up_status up_context_create(const char* config_json, up_context** out);
UP_API void up_context_destroy(up_context* ctx);
/* Effective configuration as JSON. */
UP_API up_status up_context_config(const up_context* ctx, char** out_json);

/* Scene-directory workflows; see the README for the files each one writes. */
UP_API up_status up_synth(const char* spec_json, const char* out_dir);
UP_API up_status up_estimate(up_context* ctx, const char* scene_dir, const char* out_dir);
UP_API up_status up_coarse(up_context* ctx, const char* scene_dir, const char* out_dir);
UP_API up_status up_refine(up_context* ctx, const char* scene_dir, const char* coarse_pose_path, const char* out_dir);
UP_API up_status up_match(up_context* ctx, const char* scene_dir, int view, const char* out_dir);
UP_API up_status up_render(const char* mesh_path, const char* pose_path, const char* intrinsics_path,
                           const char* out_dir);
/* Writes metrics.json and table.txt; the table text is returned when out_table is not NULL. */
UP_API up_status up_eval(const char* pred_dir, const char* gt_dir, const char* out_dir, char** out_table);

/* Pose and confidence of the last successful estimate/coarse/refine on ctx. */
UP_API up_status up_last_pose(const up_context* ctx, up_similarity* out, double* confidence);

/* Geometry kernels on packed xyz arrays of n points. */
UP_API up_status up_umeyama(const double* src, const double* dst, size_t n, up_similarity* out);
UP_API void up_ransac_defaults(up_ransac_params* out);
/* inliers (n bytes) and inlier_count may be NULL. */
UP_API up_status up_ransac_umeyama(const double* src, const double* dst, size_t n, const up_ransac_params* params,
                                   up_similarity* out, unsigned char* inliers, size_t* inlier_count);

/* Validates a UFTN file; with feature_map != 0 also its sidecar and grid. */
UP_API up_status up_validate_tensor_file(const char* path, int feature_map);

#ifdef __cplusplus
}
#endif

#endif /* UNIPOSE_UNIPOSE_H */
