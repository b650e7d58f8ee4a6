#ifndef TOMOFORGE_H
#define TOMOFORGE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define TF_API __attribute__((visibility("default")))
#else
#define TF_API
#endif

/* Status codes. Values 1..8 mirror the core's error categories. */
typedef enum tf_status {
  TF_OK = 0,
  TF_ERR_INVALID_ARGUMENT = 1,
  TF_ERR_INDEX = 2,
  TF_ERR_SHAPE = 3,
  TF_ERR_NUMERIC = 4,
  TF_ERR_CONFIG = 5,
  TF_ERR_IO = 6,
  TF_ERR_FIXER = 7,
  TF_ERR_PROTOCOL = 8,
  TF_ERR_INTERNAL = 99
} tf_status;

typedef struct tf_volume tf_volume;
typedef struct tf_projections tf_projections;
typedef struct tf_geometry tf_geometry;
typedef struct tf_fixer tf_fixer;

/* Message of the last failure on the calling thread ("" after success). */
TF_API const char* tf_last_error(void);
TF_API const char* tf_status_name(tf_status status);
TF_API const char* tf_version(void);

/* Worker count for internal parallel loops; 0 = hardware concurrency. */
TF_API tf_status tf_set_threads(int n);
TF_API int tf_get_threads(void);

/* ---- volumes ---------------------------------------------------------- */

TF_API tf_status tf_volume_create(int x, int y, int z, tf_volume** out);
TF_API void tf_volume_free(tf_volume* vol);
TF_API tf_status tf_volume_dims(const tf_volume* vol, int dims[3]);
/* Row-major, x fastest; n must equal x*y*z. */
TF_API tf_status tf_volume_get_data(const tf_volume* vol, double* out, size_t n);
TF_API tf_status tf_volume_set_data(tf_volume* vol, const double* data, size_t n);
TF_API tf_status tf_volume_read(const char* path, tf_volume** out);
TF_API tf_status tf_volume_write(const tf_volume* vol, const char* path);

/* Modified Shepp-Logan head, dims >= 16. */
TF_API tf_status tf_phantom_shepp3d(int x, int y, int z, tf_volume** out);
/* Seeded random ellipsoids with densities in [0, 1], dims >= 16. */
TF_API tf_status tf_phantom_ellipsoids(int x, int y, int z, uint64_t seed, int count,
                                       tf_volume** out);

/* ---- geometry --------------------------------------------------------- */

/* Detector covering the whole volume at unit voxel size. */
TF_API tf_status tf_geometry_default(int x, int y, int z, tf_geometry** out);
TF_API void tf_geometry_free(tf_geometry* geom);
TF_API tf_status tf_geometry_read(const char* path, tf_geometry** out);
TF_API tf_status tf_geometry_write(const tf_geometry* geom, const char* path);
TF_API tf_status tf_geometry_volume_dims(const tf_geometry* geom, int dims[3]);
TF_API tf_status tf_geometry_detector(const tf_geometry* geom, int* rows, int* cols);

/* ---- projections ------------------------------------------------------ */

TF_API void tf_projections_free(tf_projections* proj);
TF_API tf_status tf_projections_info(const tf_projections* proj, int* n_views, int* rows,
                                     int* cols);
TF_API tf_status tf_projections_angles(const tf_projections* proj, double* out, size_t n);
TF_API tf_status tf_projections_get_data(const tf_projections* proj, double* out, size_t n);
TF_API tf_status tf_projections_read(const char* path, tf_projections** out);
TF_API tf_status tf_projections_write(const tf_projections* proj, const char* path);

/* n_views uniform angles over the full circle; photons <= 0 means noiseless. */
TF_API tf_status tf_simulate(const tf_volume* vol, const tf_geometry* geom, int n_views,
                             double photons, uint64_t seed, tf_projections** out);

/* ---- slice fixers ----------------------------------------------------- */

/* spec: "identity", "tvdenoise", "oracle:<volume path>" or "exec:<command>".
   oracle_sigma_fraction scales the oracle's noise by the truth's range. */
TF_API tf_status tf_fixer_create(const char* spec, double oracle_sigma_fraction, uint64_t seed,
                                 int timeout_seconds, tf_fixer** out);
TF_API void tf_fixer_free(tf_fixer* fixer);

/* ---- reconstruction --------------------------------------------------- */

typedef enum tf_method {
  TF_METHOD_SART = 0,
  TF_METHOD_ASDPOCS = 1,
  TF_METHOD_VOXELNR = 2,
  TF_METHOD_GAUSSNR = 3
} tf_method;

typedef enum tf_augment_loss { TF_AUGMENT_SSIM3D = 0, TF_AUGMENT_L1 = 1 } tf_augment_loss;

typedef struct tf_recon_options {
  size_t struct_size; /* set by tf_recon_options_init */
  tf_method method;
  /* classical */
  int sart_iterations;
  double relaxation;
  int tv_steps;
  /* neural */
  int iters;          /* J */
  int ell;            /* reference interval, 0 = automatic */
  int tau;            /* augmentation period, 0 = automatic */
  double lambda_diff; /* 0 = plain NR */
  double tv_weight;
  double ssim2d_weight;
  double lr_final_fraction;
  tf_augment_loss augment_loss;
  int n_kernels; /* 0 = automatic */
  uint64_t seed;
  int log_every;
} tf_recon_options;

TF_API void tf_recon_options_init(tf_recon_options* opts);

/* The geometry's angles are taken from the projections. fixer may be NULL
   when lambda_diff is 0 or the method is classical; truth (optional) adds
   PSNR to the training log written to log_csv_path (optional). */
TF_API tf_status tf_reconstruct(const tf_projections* proj, const tf_geometry* geom,
                                const tf_recon_options* opts, tf_fixer* fixer,
                                const tf_volume* truth, const char* log_csv_path,
                                tf_volume** out);

/* ---- evaluation ------------------------------------------------------- */

typedef struct tf_metrics {
  double psnr; /* +inf for identical volumes */
  double ssim3d;
  double ssim_axial;
  double ssim_coronal;
  double ssim_sagittal;
} tf_metrics;

TF_API tf_status tf_evaluate(const tf_volume* vol, const tf_volume* gt, tf_metrics* out);

/* ---- curation --------------------------------------------------------- */

typedef enum tf_kind { TF_KIND_VOXEL_FIELD = 0, TF_KIND_GAUSSIAN_CLOUD = 1 } tf_kind;

typedef struct tf_recipe_entry {
  tf_kind kind;
  int n_views;
  int nonuniform; /* 0 = uniform views */
  double fit_fraction;
  uint64_t seed;
} tf_recipe_entry;

typedef struct tf_curation_options {
  size_t struct_size; /* set by tf_curation_options_init */
  int dense_views;
  int iters; /* full budget before scaling by the fit fraction */
  int n_kernels;
  int balance; /* nonzero: trim to an exact 1:1 split */
} tf_curation_options;

TF_API void tf_curation_options_init(tf_curation_options* opts);

/* Writes a pair file and reports the number of records. */
TF_API tf_status tf_curate(const tf_volume* gt, const tf_geometry* geom,
                           const tf_recipe_entry* recipe, size_t n_entries,
                           const tf_curation_options* opts, const char* out_path,
                           size_t* n_pairs);

#ifdef __cplusplus
}
#endif

#endif
