#include "tomoforge/diffnr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <tuple>
#include <ostream>
#include <random>

#include "tomoforge/classical.hpp"
#include "tomoforge/error.hpp"
#include "tomoforge/objectives.hpp"
#include "tomoforge/parallel.hpp"

namespace tomo {

int DiffNrConfig::resolved_ref_interval() const {
  if (ref_interval > 0) return ref_interval;
  return std::max(1, static_cast<int>(std::lround(total_iters * 10000.0 / 13500.0)));
}

int DiffNrConfig::resolved_aug_period(std::string_view kind) const {
  if (aug_period > 0) return aug_period;
  return kind == "gaussian_cloud" ? 10 : 20;
}

void DiffNrConfig::validate() const {
  if (total_iters < 1) fail(ErrorCode::config, "diffnr: total_iters must be >= 1");
  if (ref_interval < 0 || aug_period < 0)
    fail(ErrorCode::config, "diffnr: ref_interval and aug_period must be >= 0");
  if (resolved_ref_interval() > total_iters)
    fail(ErrorCode::config, "diffnr: ref_interval exceeds total_iters");
  if (!(lambda_diff >= 0.0)) fail(ErrorCode::config, "diffnr: lambda_diff must be >= 0");
  if (!(tv_weight >= 0.0) || !(ssim2d_weight >= 0.0))
    fail(ErrorCode::config, "diffnr: loss weights must be >= 0");
  if (upsample_width < 0 || upsample_height < 0)
    fail(ErrorCode::config, "diffnr: upsample dims must be >= 0");
  if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0))
    fail(ErrorCode::config, "diffnr: lr_final_fraction must lie in (0, 1]");
  if (log_every < 1) fail(ErrorCode::config, "diffnr: log_every must be >= 1");
  if (tv_crop < 2) fail(ErrorCode::config, "diffnr: tv_crop must be >= 2");
}

PseudoReference build_pseudo_reference(const Volume& queried, SliceFixer& fixer,
                                       const DiffNrConfig& cfg, const Image& cond_a,
                                       const Image& cond_b, int iter) {
  const auto [X, Y, Z] = queried.dims;
  const int up_w = cfg.upsample_width > 0 ? cfg.upsample_width : 2 * X;
  const int up_h = cfg.upsample_height > 0 ? cfg.upsample_height : 2 * Y;
  // Fixers exchange single-precision images, so every fixer sees the same
  // quantized request whether it runs in-process or behind the pipe.
  auto quantize = [](auto& img) {
    for (double& v : img.data) v = static_cast<float>(v);
  };
  Image qa = cond_a, qb = cond_b;
  quantize(qa);
  quantize(qb);
  std::vector<SliceImage> fixed(static_cast<std::size_t>(Z));
  auto repair = [&](int z) {
    FixerRequest req;
    req.slice = resample_bilinear(extract_slice(queried, SliceAxis::axial, z), up_w, up_h);
    quantize(req.slice);
    req.cond_a = qa;
    req.cond_b = qb;
    req.prompt = cfg.prompt;
    fixed[static_cast<std::size_t>(z)] = resample_bilinear(fix_slice(fixer, req).slice, X, Y);
  };
  if (fixer.parallel_safe()) {
    parallel_for(static_cast<std::size_t>(Z), [&](std::size_t b, std::size_t e, std::size_t) {
      for (std::size_t z = b; z < e; ++z) repair(static_cast<int>(z));
    });
  } else {
    for (int z = 0; z < Z; ++z) repair(z);
  }
  return {stack_slices(fixed, SliceAxis::axial, queried.spacing), iter};
}

PseudoReference build_pseudo_reference(const Representation& rep, SliceFixer& fixer,
                                       const DiffNrConfig& cfg, const Image& cond_a,
                                       const Image& cond_b, int iter) {
  return build_pseudo_reference(rep.query(), fixer, cfg, cond_a, cond_b, iter);
}

void write_log_header(std::ostream& out) { out << "iter,data_loss,tv,ssim3d_term,psnr_vs_gt\n"; }

namespace {

void write_row(std::ostream& out, const DiffNrLogRow& r) {
  auto num = [&](double v) {
    if (std::isnan(v)) return std::string();
    if (std::isinf(v)) return std::string("inf");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  out << r.iter << ',' << num(r.data_loss) << ',' << num(r.tv) << ','
      << (r.ssim3d_term < 0 ? std::string() : num(r.ssim3d_term)) << ',' << num(r.psnr_vs_gt)
      << '\n';
}

struct Crop {
  Dims3 origin{0, 0, 0};
  Dims3 size{0, 0, 0};
};

// TV of a sub-box, per voxel; gradient scattered into the full-volume grad.
double tv_mean(const Volume& v, const Crop& crop, std::span<double> grad, double weight) {
  const bool full = crop.size == v.dims;
  if (full) {
    const double n = static_cast<double>(v.size());
    return tv3d(v, grad, weight / n) / n;
  }
  Volume sub(crop.size, 0.0, v.spacing);
  for (int z = 0; z < crop.size[2]; ++z)
    for (int y = 0; y < crop.size[1]; ++y)
      for (int x = 0; x < crop.size[0]; ++x)
        sub.at(x, y, z) = v.at(x + crop.origin[0], y + crop.origin[1], z + crop.origin[2]);
  const double n = static_cast<double>(sub.size());
  std::vector<double> g(sub.size(), 0.0);
  const double value = tv3d(sub, g, weight / n) / n;
  for (int z = 0; z < crop.size[2]; ++z)
    for (int y = 0; y < crop.size[1]; ++y)
      for (int x = 0; x < crop.size[0]; ++x)
        grad[v.index(x + crop.origin[0], y + crop.origin[1], z + crop.origin[2])] +=
            g[sub.index(x, y, z)];
  return value;
}

}  // namespace

DiffNrResult diffnr_optimize(Representation& rep, const ProjectionStack& stack,
                             const ConeBeamGeometry& geom, const DiffNrConfig& cfg,
                             SliceFixer* fixer, const Volume* truth, std::ostream* csv) {
  cfg.validate();
  geom.validate();
  if (stack.n_views < 1) fail(ErrorCode::config, "diffnr: projection stack has no views");
  if (static_cast<std::size_t>(stack.n_views) != geom.n_views() ||
      stack.rows != geom.detector_rows || stack.cols != geom.detector_cols)
    fail(ErrorCode::shape, "diffnr: projection stack does not match geometry");
  const bool augment = cfg.lambda_diff > 0.0;
  if (augment && !fixer) fail(ErrorCode::config, "diffnr: lambda_diff > 0 needs a fixer");
  if (truth && truth->dims != geom.volume_dims)
    fail(ErrorCode::shape, "diffnr: ground truth dims do not match geometry");

  const int J = cfg.total_iters;
  const int ell = cfg.resolved_ref_interval();
  const int tau = cfg.resolved_aug_period(rep.kind());
  const std::size_t N = geom.n_views();
  const std::size_t npix = geom.pixels_per_view();
  const int rows = geom.detector_rows, cols = geom.detector_cols;

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return geom.angles[a] < geom.angles[b]; });

  double peak = 0.0;
  for (double v : stack.data) peak = std::max(peak, std::abs(v));
  const double scale = peak > 0.0 ? 1.0 / peak : 1.0;

  Image cond_a, cond_b;
  if (augment) {
    if (N >= 2) {
      std::tie(cond_a, cond_b) = conditioning_images(stack, geom);
    } else {
      cond_a = cond_b = stack.view_image(0);
    }
  }

  const bool use_ssim2d = cfg.ssim2d_weight > 0.0;
  if (use_ssim2d && (rows < 11 || cols < 11))
    fail(ErrorCode::config, "diffnr: detector smaller than the SSIM window; set ssim2d_weight 0");
  SsimConfig ssim2_cfg;
  ssim2_cfg.dynamic_range = 1.0;

  const Dims3 dims = geom.volume_dims;
  const bool crop_tv = std::max({dims[0], dims[1], dims[2]}) > cfg.tv_full_limit;
  std::mt19937_64 crop_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  DiffNrResult result;
  result.loss_trace.reserve(static_cast<std::size_t>(J));
  std::optional<PseudoReference> reference;
  double ref_range = 1.0;
  Image rendered(cols, rows), measured(cols, rows);
  std::vector<double> pixel_grad(npix);
  std::vector<double> vol_grad(voxel_count(dims));
  double window_loss = 0.0, last_tv = 0.0, last_term = -1.0;
  int window_count = 0;
  if (csv) write_log_header(*csv);

  for (int j = 1; j <= J; ++j) {
    const std::size_t view = order[static_cast<std::size_t>(j - 1) % N];
    rep.zero_grad();

    rep.render(view, rendered.data);
    const auto meas = stack.view(view);
    for (std::size_t p = 0; p < npix; ++p) {
      rendered.data[p] *= scale;
      measured.data[p] = meas[p] * scale;
    }
    std::fill(pixel_grad.begin(), pixel_grad.end(), 0.0);
    double data_loss = l1_loss(rendered.data, measured.data, pixel_grad);
    if (use_ssim2d) {
      const double s = ssim2d(rendered, measured, ssim2_cfg, pixel_grad, -cfg.ssim2d_weight);
      data_loss += cfg.ssim2d_weight * (1.0 - s);
    }
    for (double& g : pixel_grad) g *= scale;
    rep.render_backward(view, pixel_grad);

    const bool want_tv = cfg.tv_weight > 0.0;
    const bool build_ref = augment && j % ell == 0;
    const bool aug_step = augment && j % tau == 0 && (reference.has_value() || build_ref);
    const bool need_query = want_tv || build_ref || aug_step || (truth && j % cfg.log_every == 0);
    double total = data_loss;
    if (need_query) {
      const Volume q = rep.query();
      std::fill(vol_grad.begin(), vol_grad.end(), 0.0);
      bool any_grad = false;
      if (want_tv) {
        Crop crop{{0, 0, 0}, dims};
        if (crop_tv) {
          for (int a = 0; a < 3; ++a) {
            crop.size[a] = std::min(cfg.tv_crop, dims[a]);
            crop.origin[a] = static_cast<int>(crop_rng() % static_cast<std::uint64_t>(dims[a] - crop.size[a] + 1));
          }
        }
        last_tv = tv_mean(q, crop, vol_grad, cfg.tv_weight);
        total += cfg.tv_weight * last_tv;
        any_grad = true;
      }
      if (build_ref) {
        reference = build_pseudo_reference(q, *fixer, cfg, cond_a, cond_b, j);
        ++result.reference_builds;
        ref_range = 0.0;
        for (double v : reference->volume.data) ref_range = std::max(ref_range, v);
        if (!(ref_range > 0.0)) ref_range = 1.0;
      }
      if (aug_step) {
        double term;
        if (cfg.augment_loss == AugmentLoss::ssim3d) {
          SsimConfig sc;
          sc.dynamic_range = ref_range;
          const double s = ssim3d(q, reference->volume, sc, vol_grad, -cfg.lambda_diff);
          term = 1.0 - s;
        } else {
          term = l1_loss(q.data, reference->volume.data, vol_grad, cfg.lambda_diff);
        }
        total += cfg.lambda_diff * term;
        last_term = term;
        ++result.augment_steps;
        if (build_ref) result.creation_terms.push_back(term);
        any_grad = true;
      }
      if (any_grad) rep.query_backward(vol_grad);
      if (truth && j % cfg.log_every == 0) {
        Volume clamped = q;
        clamp_nonneg(clamped);
        result.log.push_back({j, 0.0, last_tv, last_term, psnr(clamped, *truth)});
      }
    }
    if (!std::isfinite(total))
      fail(ErrorCode::numeric, "diffnr: non-finite loss at iteration " + std::to_string(j));
    result.loss_trace.push_back(total);
    window_loss += data_loss;
    ++window_count;
    if (j % cfg.log_every == 0) {
      if (!truth) result.log.push_back({j, 0.0, last_tv, last_term, std::nan("")});
      auto& row = result.log.back();
      row.data_loss = window_loss / window_count;
      row.tv = last_tv;
      row.ssim3d_term = last_term;
      if (csv) write_row(*csv, row);
      window_loss = 0.0;
      window_count = 0;
    }
    rep.set_lr_scale(J > 1 ? std::pow(cfg.lr_final_fraction, static_cast<double>(j - 1) / (J - 1)) : 1.0);
    rep.step();
  }
  result.volume = rep.query();
  clamp_nonneg(result.volume);
  return result;
}

DiffNrResult plain_nr_optimize(Representation& rep, const ProjectionStack& stack,
                               const ConeBeamGeometry& geom, DiffNrConfig cfg,
                               const Volume* truth, std::ostream* csv) {
  cfg.lambda_diff = 0.0;
  return diffnr_optimize(rep, stack, geom, cfg, nullptr, truth, csv);
}

const char* representation_kind_name(RepresentationKind kind) {
  return kind == RepresentationKind::voxel_field ? "voxel_field" : "gaussian_cloud";
}

std::unique_ptr<Representation> make_representation(RepresentationKind kind,
                                                     const ProjectionStack& stack,
                                                     const ConeBeamGeometry& geom,
                                                     const RepresentationSetup& setup) {
  geom.validate();
  if (kind == RepresentationKind::voxel_field)
    return std::make_unique<VoxelFieldModel>(
        geom, VoxelField{Volume(geom.volume_dims, 0.0, geom.voxel_size)}, setup.voxel);

  SartConfig sc;
  sc.n_iterations = setup.init_sart_sweeps;
  sc.nonneg_clamp = true;
  const Volume coarse = sart_reconstruct(stack, geom, sc);
  const std::size_t m = setup.n_kernels > 0 ? setup.n_kernels : default_kernel_count(geom.volume_dims);
  Volume seeded = coarse;
  seeded.spacing = geom.voxel_size;
  GaussianCloud cloud = init_cloud_from_volume(seeded, m, setup.seed);
  const ProjectionStack p = splat_project(cloud, geom, setup.cloud.splat);
  double pm = 0.0, pp = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    pm += p.data[i] * stack.data[i];
    pp += p.data[i] * p.data[i];
  }
  if (pp > 0.0 && pm > 0.0) {
    const double c = pm / pp;
    for (std::size_t k = 0; k < cloud.size(); ++k) cloud.params[k * GaussianCloud::kStride] *= c;
  }
  return std::make_unique<GaussianCloudModel>(geom, std::move(cloud), setup.cloud);
}

}  // namespace tomo
