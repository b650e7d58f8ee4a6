#include "tomoforge/classical.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tomoforge/error.hpp"
#include "tomoforge/objectives.hpp"

namespace tomo {

void SartConfig::validate() const {
  if (n_iterations < 0) fail(ErrorCode::config, "sart: n_iterations must be >= 0");
  if (!(relaxation > 0.0 && relaxation <= 2.0))
    fail(ErrorCode::config, "sart: relaxation must lie in (0, 2]");
  march.validate();
}

void AsdPocsConfig::validate() const {
  sart.validate();
  if (n_tv_steps < 0) fail(ErrorCode::config, "asdpocs: n_tv_steps must be >= 0");
  if (!(tv_step_init > 0.0)) fail(ErrorCode::config, "asdpocs: tv_step_init must be > 0");
  if (!(alpha_reduction > 0.0 && alpha_reduction < 1.0))
    fail(ErrorCode::config, "asdpocs: alpha_reduction must lie in (0, 1)");
  if (!(ratio_cap > 0.0 && ratio_cap <= 1.0))
    fail(ErrorCode::config, "asdpocs: ratio_cap must lie in (0, 1]");
}

namespace {

// Column sums are kept per view when they fit in this many floats, and
// recomputed every sweep otherwise.
constexpr std::size_t kWeightCacheLimit = std::size_t{1} << 26;

class Sart {
 public:
  Sart(const ProjectionStack& stack, const ConeBeamGeometry& geom, const SartConfig& cfg)
      : stack_(stack), geom_(geom), cfg_(cfg), order_(geom.n_views()) {
    geom.validate();
    cfg.validate();
    if (stack.n_views != geom.n_views() || stack.rows != geom.detector_rows ||
        stack.cols != geom.detector_cols)
      fail(ErrorCode::shape, "sart: projection stack does not match geometry");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return geom.angles[a] < geom.angles[b]; });

    const std::size_t npix = geom.pixels_per_view();
    const Volume ones(geom.volume_dims, 1.0, geom.voxel_size);
    row_weight_.resize(geom.n_views() * npix);
    for (std::size_t v = 0; v < geom.n_views(); ++v)
      forward_project_view(ones, geom, v, cfg.march, std::span(row_weight_).subspan(v * npix, npix));
    for (double& w : row_weight_) w = w > 0.0 ? 1.0 / w : 0.0;

    cache_columns_ = geom.n_views() * voxel_count(geom.volume_dims) <= kWeightCacheLimit;
    if (cache_columns_) {
      col_weight_.resize(geom.n_views() * voxel_count(geom.volume_dims));
      Volume w(geom.volume_dims, 0.0, geom.voxel_size);
      for (std::size_t v = 0; v < geom.n_views(); ++v) {
        column_weights(v, w);
        std::copy(w.data.begin(), w.data.end(), col_weight_.begin() + v * w.size());
      }
    }
  }

  // One pass over every view.
  void sweep(Volume& x) {
    const std::size_t npix = geom_.pixels_per_view();
    std::vector<double> residual(npix);
    Volume update(geom_.volume_dims, 0.0, geom_.voxel_size);
    Volume colw(geom_.volume_dims, 0.0, geom_.voxel_size);
    for (std::size_t v : order_) {
      forward_project_view(x, geom_, v, cfg_.march, residual);
      const auto b = stack_.view(v);
      const double* rw = row_weight_.data() + v * npix;
      for (std::size_t p = 0; p < npix; ++p) residual[p] = (b[p] - residual[p]) * rw[p];
      std::fill(update.data.begin(), update.data.end(), 0.0);
      backproject_view(residual, geom_, v, cfg_.march, update);
      const double lam = cfg_.relaxation;
      if (cache_columns_) {
        const float* cw = col_weight_.data() + v * x.size();
        for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += lam * cw[i] * update.data[i];
      } else {
        column_weights(v, colw);
        for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += lam * colw.data[i] * update.data[i];
      }
    }
    if (cfg_.nonneg_clamp) clamp_nonneg(x);
  }

 private:
  void column_weights(std::size_t v, Volume& out) const {
    std::fill(out.data.begin(), out.data.end(), 0.0);
    const std::vector<double> ones(geom_.pixels_per_view(), 1.0);
    backproject_view(ones, geom_, v, cfg_.march, out);
    for (double& w : out.data) w = w > 0.0 ? 1.0 / w : 0.0;
  }

  const ProjectionStack& stack_;
  const ConeBeamGeometry& geom_;
  SartConfig cfg_;
  std::vector<std::size_t> order_;
  std::vector<double> row_weight_;
  bool cache_columns_ = false;
  std::vector<float> col_weight_;
};

Volume initial_volume(const ConeBeamGeometry& geom, const Volume* init) {
  if (!init) return Volume(geom.volume_dims, 0.0, geom.voxel_size);
  if (init->dims != geom.volume_dims) fail(ErrorCode::shape, "sart: initial volume dims mismatch");
  Volume x = *init;
  x.spacing = geom.voxel_size;
  return x;
}

double distance(const Volume& a, const Volume& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return std::sqrt(s);
}

}  // namespace

Volume sart_reconstruct(const ProjectionStack& stack, const ConeBeamGeometry& geom,
                        const SartConfig& cfg, const Volume* init) {
  Sart solver(stack, geom, cfg);
  Volume x = initial_volume(geom, init);
  for (int it = 0; it < cfg.n_iterations; ++it) solver.sweep(x);
  return x;
}

Volume asdpocs_reconstruct(const ProjectionStack& stack, const ConeBeamGeometry& geom,
                           const AsdPocsConfig& cfg, const Volume* init) {
  cfg.validate();
  Sart solver(stack, geom, cfg.sart);
  Volume x = initial_volume(geom, init);
  double tv_step = -1.0;
  std::vector<double> grad(x.size());
  for (int it = 0; it < cfg.sart.n_iterations; ++it) {
    const Volume before = x;
    solver.sweep(x);
    if (cfg.n_tv_steps == 0) continue;
    const double data_move = distance(x, before);
    if (tv_step < 0.0) tv_step = cfg.tv_step_init * data_move;
    const Volume after_data = x;
    for (int k = 0; k < cfg.n_tv_steps; ++k) {
      std::fill(grad.begin(), grad.end(), 0.0);
      tv3d(x, grad);
      double gn = 0.0;
      for (double g : grad) gn += g * g;
      gn = std::sqrt(gn);
      if (!(gn > 0.0)) break;
      for (std::size_t i = 0; i < x.size(); ++i) x.data[i] -= tv_step * grad[i] / gn;
    }
    if (distance(x, after_data) > cfg.ratio_cap * data_move) tv_step *= cfg.alpha_reduction;
    if (cfg.sart.nonneg_clamp) clamp_nonneg(x);
  }
  return x;
}

}  // namespace tomo
