#include "tomoforge/tomoforge.h"

#include <cmath>
#include <fstream>
#include <memory>
#include <new>
#include <numbers>
#include <string>

#include "tomoforge/classical.hpp"
#include "tomoforge/config.hpp"
#include "tomoforge/curation.hpp"
#include "tomoforge/diffnr.hpp"
#include "tomoforge/error.hpp"
#include "tomoforge/objectives.hpp"
#include "tomoforge/parallel.hpp"
#include "tomoforge/phantom.hpp"
#include "tomoforge/projector.hpp"
#include "tomoforge/slice_fixer.hpp"

struct tf_volume {
  tomo::Volume v;
};
struct tf_projections {
  tomo::ProjectionStack p;
};
struct tf_geometry {
  tomo::ConeBeamGeometry g;
};
struct tf_fixer {
  std::unique_ptr<tomo::SliceFixer> f;
};

namespace {

thread_local std::string last_error;

tf_status set_error(tf_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <typename Fn>
tf_status guarded(Fn&& fn) {
  try {
    last_error.clear();
    fn();
    return TF_OK;
  } catch (const tomo::Error& e) {
    return set_error(static_cast<tf_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(TF_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(TF_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(TF_ERR_INTERNAL, "unknown failure");
  }
}

void need(const void* p, const char* what) {
  if (!p) tomo::fail(tomo::ErrorCode::invalid_argument, std::string(what) + " is NULL");
}

void need_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    tomo::fail(tomo::ErrorCode::shape, std::string(what) + ": buffer holds " + std::to_string(got) +
                                           " values, expected " + std::to_string(want));
}

tomo::ConeBeamGeometry with_angles(const tomo::ConeBeamGeometry& g, const std::vector<double>& a) {
  tomo::ConeBeamGeometry out = g;
  out.angles = a;
  out.validate();
  return out;
}

}  // namespace

extern "C" {

const char* tf_last_error(void) { return last_error.c_str(); }

const char* tf_status_name(tf_status status) {
  switch (status) {
    case TF_OK: return "ok";
    case TF_ERR_INTERNAL: return "internal";
    default: return tomo::error_code_name(static_cast<tomo::ErrorCode>(status));
  }
}

const char* tf_version(void) { return "0.1.0"; }

tf_status tf_set_threads(int n) {
  return guarded([&] {
    if (n < 0) tomo::fail(tomo::ErrorCode::config, "thread count must be >= 0");
    tomo::set_thread_count(n);
  });
}

int tf_get_threads(void) { return tomo::thread_count(); }

tf_status tf_volume_create(int x, int y, int z, tf_volume** out) {
  return guarded([&] {
    need(out, "out");
    if (x < 1 || y < 1 || z < 1) tomo::fail(tomo::ErrorCode::config, "volume dims must be >= 1");
    *out = new tf_volume{tomo::Volume({x, y, z})};
  });
}

void tf_volume_free(tf_volume* vol) { delete vol; }

tf_status tf_volume_dims(const tf_volume* vol, int dims[3]) {
  return guarded([&] {
    need(vol, "volume");
    need(dims, "dims");
    for (int a = 0; a < 3; ++a) dims[a] = vol->v.dims[a];
  });
}

tf_status tf_volume_get_data(const tf_volume* vol, double* out, size_t n) {
  return guarded([&] {
    need(vol, "volume");
    need(out, "out");
    need_size(n, vol->v.size(), "tf_volume_get_data");
    std::copy(vol->v.data.begin(), vol->v.data.end(), out);
  });
}

tf_status tf_volume_set_data(tf_volume* vol, const double* data, size_t n) {
  return guarded([&] {
    need(vol, "volume");
    need(data, "data");
    need_size(n, vol->v.size(), "tf_volume_set_data");
    std::copy(data, data + n, vol->v.data.begin());
  });
}

tf_status tf_volume_read(const char* path, tf_volume** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new tf_volume{tomo::read_volume(path)};
  });
}

tf_status tf_volume_write(const tf_volume* vol, const char* path) {
  return guarded([&] {
    need(vol, "volume");
    need(path, "path");
    tomo::write_volume(path, vol->v);
  });
}

tf_status tf_phantom_shepp3d(int x, int y, int z, tf_volume** out) {
  return guarded([&] {
    need(out, "out");
    *out = new tf_volume{tomo::shepp_logan_3d({x, y, z})};
  });
}

tf_status tf_phantom_ellipsoids(int x, int y, int z, uint64_t seed, int count, tf_volume** out) {
  return guarded([&] {
    need(out, "out");
    *out = new tf_volume{tomo::random_ellipsoids({x, y, z}, seed, count)};
  });
}

tf_status tf_geometry_default(int x, int y, int z, tf_geometry** out) {
  return guarded([&] {
    need(out, "out");
    if (x < 1 || y < 1 || z < 1) tomo::fail(tomo::ErrorCode::config, "volume dims must be >= 1");
    auto g = tomo::default_geometry({x, y, z}, {1.0, 1.0, 1.0}, {0.0});
    g.angles.clear();
    *out = new tf_geometry{std::move(g)};
  });
}

void tf_geometry_free(tf_geometry* geom) { delete geom; }

tf_status tf_geometry_read(const char* path, tf_geometry** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new tf_geometry{tomo::read_geometry(path)};
  });
}

tf_status tf_geometry_write(const tf_geometry* geom, const char* path) {
  return guarded([&] {
    need(geom, "geometry");
    need(path, "path");
    tomo::write_geometry(path, geom->g);
  });
}

tf_status tf_geometry_volume_dims(const tf_geometry* geom, int dims[3]) {
  return guarded([&] {
    need(geom, "geometry");
    need(dims, "dims");
    for (int a = 0; a < 3; ++a) dims[a] = geom->g.volume_dims[a];
  });
}

tf_status tf_geometry_detector(const tf_geometry* geom, int* rows, int* cols) {
  return guarded([&] {
    need(geom, "geometry");
    if (rows) *rows = geom->g.detector_rows;
    if (cols) *cols = geom->g.detector_cols;
  });
}

void tf_projections_free(tf_projections* proj) { delete proj; }

tf_status tf_projections_info(const tf_projections* proj, int* n_views, int* rows, int* cols) {
  return guarded([&] {
    need(proj, "projections");
    if (n_views) *n_views = proj->p.n_views;
    if (rows) *rows = proj->p.rows;
    if (cols) *cols = proj->p.cols;
  });
}

tf_status tf_projections_angles(const tf_projections* proj, double* out, size_t n) {
  return guarded([&] {
    need(proj, "projections");
    need(out, "out");
    need_size(n, proj->p.angles.size(), "tf_projections_angles");
    std::copy(proj->p.angles.begin(), proj->p.angles.end(), out);
  });
}

tf_status tf_projections_get_data(const tf_projections* proj, double* out, size_t n) {
  return guarded([&] {
    need(proj, "projections");
    need(out, "out");
    need_size(n, proj->p.data.size(), "tf_projections_get_data");
    std::copy(proj->p.data.begin(), proj->p.data.end(), out);
  });
}

tf_status tf_projections_read(const char* path, tf_projections** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new tf_projections{tomo::read_projections(path)};
  });
}

tf_status tf_projections_write(const tf_projections* proj, const char* path) {
  return guarded([&] {
    need(proj, "projections");
    need(path, "path");
    tomo::write_projections(path, proj->p);
  });
}

tf_status tf_simulate(const tf_volume* vol, const tf_geometry* geom, int n_views, double photons,
                      uint64_t seed, tf_projections** out) {
  return guarded([&] {
    need(vol, "volume");
    need(geom, "geometry");
    need(out, "out");
    if (n_views < 1) tomo::fail(tomo::ErrorCode::config, "n_views must be >= 1");
    if (vol->v.dims != geom->g.volume_dims)
      tomo::fail(tomo::ErrorCode::shape, "volume dims do not match the geometry");
    const auto g = with_angles(geom->g, tomo::uniform_angles(static_cast<std::size_t>(n_views),
                                                             2.0 * std::numbers::pi));
    auto stack = tomo::forward_project(vol->v, g);
    if (photons > 0) stack = tomo::add_photon_noise(stack, photons, seed);
    *out = new tf_projections{std::move(stack)};
  });
}

tf_status tf_fixer_create(const char* spec, double oracle_sigma_fraction, uint64_t seed,
                          int timeout_seconds, tf_fixer** out) {
  return guarded([&] {
    need(spec, "spec");
    need(out, "out");
    if (timeout_seconds < 1) tomo::fail(tomo::ErrorCode::config, "fixer timeout must be >= 1 s");
    *out = new tf_fixer{tomo::make_fixer(spec, oracle_sigma_fraction, seed, timeout_seconds)};
  });
}

void tf_fixer_free(tf_fixer* fixer) { delete fixer; }

void tf_recon_options_init(tf_recon_options* opts) {
  if (!opts) return;
  const tomo::DiffNrConfig d;
  const tomo::AsdPocsConfig a;
  *opts = tf_recon_options{};
  opts->struct_size = sizeof(tf_recon_options);
  opts->method = TF_METHOD_GAUSSNR;
  opts->sart_iterations = a.sart.n_iterations;
  opts->relaxation = a.sart.relaxation;
  opts->tv_steps = a.n_tv_steps;
  opts->iters = d.total_iters;
  opts->ell = d.ref_interval;
  opts->tau = d.aug_period;
  opts->lambda_diff = d.lambda_diff;
  opts->tv_weight = d.tv_weight;
  opts->ssim2d_weight = d.ssim2d_weight;
  opts->lr_final_fraction = d.lr_final_fraction;
  opts->augment_loss = TF_AUGMENT_SSIM3D;
  opts->n_kernels = 0;
  opts->seed = 0;
  opts->log_every = d.log_every;
}

tf_status tf_reconstruct(const tf_projections* proj, const tf_geometry* geom,
                         const tf_recon_options* opts, tf_fixer* fixer, const tf_volume* truth,
                         const char* log_csv_path, tf_volume** out) {
  return guarded([&] {
    need(proj, "projections");
    need(geom, "geometry");
    need(opts, "options");
    need(out, "out");
    if (opts->struct_size != sizeof(tf_recon_options))
      tomo::fail(tomo::ErrorCode::invalid_argument, "tf_recon_options not initialized");
    const auto g = with_angles(geom->g, proj->p.angles);
    if (proj->p.rows != g.detector_rows || proj->p.cols != g.detector_cols)
      tomo::fail(tomo::ErrorCode::shape, "projection detector does not match the geometry");

    tomo::SartConfig sart;
    sart.n_iterations = opts->sart_iterations;
    sart.relaxation = opts->relaxation;
    if (opts->method == TF_METHOD_SART) {
      *out = new tf_volume{tomo::sart_reconstruct(proj->p, g, sart)};
      return;
    }
    if (opts->method == TF_METHOD_ASDPOCS) {
      tomo::AsdPocsConfig a;
      a.sart = sart;
      a.n_tv_steps = opts->tv_steps;
      *out = new tf_volume{tomo::asdpocs_reconstruct(proj->p, g, a)};
      return;
    }
    if (opts->method != TF_METHOD_VOXELNR && opts->method != TF_METHOD_GAUSSNR)
      tomo::fail(tomo::ErrorCode::config, "unknown reconstruction method");

    tomo::DiffNrConfig cfg;
    cfg.total_iters = opts->iters;
    cfg.ref_interval = opts->ell;
    cfg.aug_period = opts->tau;
    cfg.lambda_diff = opts->lambda_diff;
    cfg.tv_weight = opts->tv_weight;
    cfg.ssim2d_weight = opts->ssim2d_weight;
    cfg.lr_final_fraction = opts->lr_final_fraction;
    cfg.augment_loss = opts->augment_loss == TF_AUGMENT_L1 ? tomo::AugmentLoss::l1 : tomo::AugmentLoss::ssim3d;
    cfg.seed = opts->seed;
    cfg.log_every = opts->log_every;
    cfg.validate();
    if (truth && truth->v.dims != g.volume_dims)
      tomo::fail(tomo::ErrorCode::shape, "ground truth dims do not match the geometry");

    tomo::RepresentationSetup setup;
    setup.n_kernels = opts->n_kernels > 0 ? static_cast<std::size_t>(opts->n_kernels) : 0;
    setup.seed = opts->seed;
    const auto kind = opts->method == TF_METHOD_VOXELNR ? tomo::RepresentationKind::voxel_field
                                                        : tomo::RepresentationKind::gaussian_cloud;
    auto rep = tomo::make_representation(kind, proj->p, g, setup);

    std::ofstream log;
    if (log_csv_path) {
      log.open(log_csv_path, std::ios::binary);
      if (!log) tomo::fail(tomo::ErrorCode::io, std::string(log_csv_path) + ": cannot open for writing");
    }
    auto result = tomo::diffnr_optimize(*rep, proj->p, g, cfg, fixer ? fixer->f.get() : nullptr,
                                        truth ? &truth->v : nullptr, log_csv_path ? &log : nullptr);
    if (log_csv_path && !log) tomo::fail(tomo::ErrorCode::io, std::string(log_csv_path) + ": write failed");
    *out = new tf_volume{std::move(result.volume)};
  });
}

tf_status tf_evaluate(const tf_volume* vol, const tf_volume* gt, tf_metrics* out) {
  return guarded([&] {
    need(vol, "volume");
    need(gt, "ground truth");
    need(out, "out");
    if (vol->v.dims != gt->v.dims)
      tomo::fail(tomo::ErrorCode::shape, "eval: volume dims differ from the ground truth");
    const auto axes = tomo::ssim3d_axes(vol->v, gt->v);
    out->psnr = tomo::psnr(vol->v, gt->v);
    out->ssim3d = tomo::ssim3d(vol->v, gt->v);
    out->ssim_axial = axes[0];
    out->ssim_coronal = axes[1];
    out->ssim_sagittal = axes[2];
  });
}

void tf_curation_options_init(tf_curation_options* opts) {
  if (!opts) return;
  const tomo::CurationConfig c;
  *opts = tf_curation_options{};
  opts->struct_size = sizeof(tf_curation_options);
  opts->dense_views = c.dense_views;
  opts->iters = c.training.total_iters;
  opts->n_kernels = 0;
  opts->balance = c.balance ? 1 : 0;
}

tf_status tf_curate(const tf_volume* gt, const tf_geometry* geom, const tf_recipe_entry* recipe,
                    size_t n_entries, const tf_curation_options* opts, const char* out_path,
                    size_t* n_pairs) {
  return guarded([&] {
    need(gt, "ground truth");
    need(geom, "geometry");
    need(opts, "options");
    need(out_path, "out_path");
    if (n_entries > 0) need(recipe, "recipe");
    if (opts->struct_size != sizeof(tf_curation_options))
      tomo::fail(tomo::ErrorCode::invalid_argument, "tf_curation_options not initialized");
    std::vector<tomo::RecipeEntry> entries;
    for (size_t i = 0; i < n_entries; ++i) {
      const auto& r = recipe[i];
      if (r.kind != TF_KIND_VOXEL_FIELD && r.kind != TF_KIND_GAUSSIAN_CLOUD)
        tomo::fail(tomo::ErrorCode::config, "recipe entry " + std::to_string(i) + ": unknown kind");
      entries.push_back({r.kind == TF_KIND_VOXEL_FIELD ? tomo::RepresentationKind::voxel_field
                                                       : tomo::RepresentationKind::gaussian_cloud,
                         r.n_views, r.nonuniform ? tomo::ViewMode::nonuniform : tomo::ViewMode::uniform,
                         r.fit_fraction, r.seed});
    }
    tomo::CurationConfig cfg;
    cfg.dense_views = opts->dense_views;
    cfg.training.total_iters = opts->iters;
    cfg.training.log_every = std::max(1, opts->iters);
    cfg.setup.n_kernels = opts->n_kernels > 0 ? static_cast<std::size_t>(opts->n_kernels) : 0;
    cfg.balance = opts->balance != 0;
    auto tmpl = geom->g;
    tmpl.angles = {0.0};
    const auto pairs = tomo::generate_pairs(gt->v, tmpl, entries, cfg);
    tomo::write_pairs(out_path, pairs);
    if (n_pairs) *n_pairs = pairs.size();
  });
}

}  // extern "C"
