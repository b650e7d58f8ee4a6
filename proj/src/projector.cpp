#include "tomoforge/projector.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "dual.hpp"
#include "kernel_math.hpp"
#include "tomoforge/error.hpp"
#include "tomoforge/parallel.hpp"

namespace tomo {

namespace {

void check_volume_matches(const Volume& vol, const ConeBeamGeometry& geom, const char* what) {
  if (vol.dims != geom.volume_dims)
    fail(ErrorCode::shape, std::string(what) + ": volume dims do not match geometry");
  if (vol.data.size() != voxel_count(vol.dims))
    fail(ErrorCode::shape, std::string(what) + ": volume buffer size mismatch");
}

// Equidistant midpoint samples of a ray chord in continuous voxel-index
// coordinates (voxel centers at integers).
struct March {
  std::array<double, 3> start{};  // index coordinate of the first sample
  std::array<double, 3> delta{};  // per-sample increment
  int count = 0;
  double ds = 0.0;
};

March plan_march(const ConeBeamGeometry& geom, const Ray& ray, double step, int cap) {
  March m;
  if (!ray.hits()) return m;
  const double chord = ray.s_far - ray.s_near;
  const double n = std::ceil(chord / step);
  m.count = static_cast<int>(std::clamp(n, 1.0, static_cast<double>(cap)));
  m.ds = chord / m.count;
  const Vec3 h = geom.half_extent();
  const Vec3 p0 = ray.origin + (ray.s_near + 0.5 * m.ds) * ray.direction;
  for (int a = 0; a < 3; ++a) {
    m.start[a] = (p0[a] + h[a]) / geom.voxel_size[a] - 0.5;
    m.delta[a] = m.ds * ray.direction[a] / geom.voxel_size[a];
  }
  return m;
}

// Visits the (voxel, weight) taps of one sample; out-of-volume taps dropped.
template <typename F>
inline void visit_taps(const Dims3& dims, Interpolation interp, double fx, double fy, double fz,
                       F&& f) {
  const int X = dims[0], Y = dims[1], Z = dims[2];
  if (interp == Interpolation::nearest) {
    const int ix = std::clamp(static_cast<int>(std::floor(fx + 0.5)), 0, X - 1);
    const int iy = std::clamp(static_cast<int>(std::floor(fy + 0.5)), 0, Y - 1);
    const int iz = std::clamp(static_cast<int>(std::floor(fz + 0.5)), 0, Z - 1);
    f(static_cast<std::size_t>(ix) + static_cast<std::size_t>(X) * (iy + static_cast<std::size_t>(Y) * iz), 1.0);
    return;
  }
  const double flx = std::floor(fx), fly = std::floor(fy), flz = std::floor(fz);
  const int x0 = static_cast<int>(flx), y0 = static_cast<int>(fly), z0 = static_cast<int>(flz);
  const double tx = fx - flx, ty = fy - fly, tz = fz - flz;
  const double wx[2] = {1.0 - tx, tx};
  const double wy[2] = {1.0 - ty, ty};
  const double wz[2] = {1.0 - tz, tz};
  const std::size_t sx = 1, sy = static_cast<std::size_t>(X), sz = sy * Y;
  if (x0 >= 0 && y0 >= 0 && z0 >= 0 && x0 + 1 < X && y0 + 1 < Y && z0 + 1 < Z) {
    const std::size_t base = x0 * sx + y0 * sy + z0 * sz;
    for (int c = 0; c < 2; ++c)
      for (int b = 0; b < 2; ++b) {
        const double wyz = wy[b] * wz[c];
        const std::size_t row = base + b * sy + c * sz;
        f(row, wx[0] * wyz);
        f(row + sx, wx[1] * wyz);
      }
    return;
  }
  for (int c = 0; c < 2; ++c) {
    const int z = z0 + c;
    if (z < 0 || z >= Z) continue;
    for (int b = 0; b < 2; ++b) {
      const int y = y0 + b;
      if (y < 0 || y >= Y) continue;
      for (int a = 0; a < 2; ++a) {
        const int x = x0 + a;
        if (x < 0 || x >= X) continue;
        f(static_cast<std::size_t>(x) * sx + static_cast<std::size_t>(y) * sy +
              static_cast<std::size_t>(z) * sz,
          wx[a] * wy[b] * wz[c]);
      }
    }
  }
}

double integrate_ray(const Volume& vol, const March& m, Interpolation interp) {
  double acc = 0.0;
  const double* data = vol.data.data();
  for (int k = 0; k < m.count; ++k) {
    const double fx = m.start[0] + k * m.delta[0];
    const double fy = m.start[1] + k * m.delta[1];
    const double fz = m.start[2] + k * m.delta[2];
    visit_taps(vol.dims, interp, fx, fy, fz,
               [&](std::size_t idx, double w) { acc += w * data[idx]; });
  }
  return acc * m.ds;
}

void scatter_ray(double value, const March& m, Interpolation interp, const Dims3& dims,
                 double* accum) {
  const double v = value * m.ds;
  for (int k = 0; k < m.count; ++k) {
    const double fx = m.start[0] + k * m.delta[0];
    const double fy = m.start[1] + k * m.delta[1];
    const double fz = m.start[2] + k * m.delta[2];
    visit_taps(dims, interp, fx, fy, fz, [&](std::size_t idx, double w) { accum[idx] += w * v; });
  }
}

// --- splatting -------------------------------------------------------------

template <typename T>
struct Footprint {
  T amp;
  T mu_u, mu_v;
  T c00, c01, c11;  // inverse of the 2D covariance
  double sd_u = 0, sd_v = 0;
  bool visible = false;
};

template <typename T>
T dot3(const std::array<T, 3>& a, Vec3 b) {
  return a[0] * T(b.x) + a[1] * T(b.y) + a[2] * T(b.z);
}

template <typename T>
Footprint<T> footprint(const detail::KernelTerms<T>& k, const ConeBeamGeometry& geom,
                       const ViewFrame& fr, bool parallel, std::size_t kernel_index) {
  using detail::value_of;
  using std::sqrt;
  Footprint<T> f;
  std::array<T, 3> ju, jv, dir;
  if (parallel) {
    f.mu_u = dot3(k.center, fr.axis_u);
    f.mu_v = dot3(k.center, fr.axis_v);
    for (int a = 0; a < 3; ++a) {
      ju[a] = T(fr.axis_u[a]);
      jv[a] = T(fr.axis_v[a]);
      dir[a] = T(fr.central_axis[a]);
    }
  } else {
    std::array<T, 3> w;
    for (int a = 0; a < 3; ++a) w[a] = k.center[a] - T(fr.source[a]);
    const T depth = dot3(w, fr.central_axis);
    if (value_of(depth) <= 1e-9 * geom.dist_source_origin) return f;
    const T a = dot3(w, fr.axis_u);
    const T b = dot3(w, fr.axis_v);
    const T sdd(geom.dist_source_detector);
    const T inv_t = T(1.0) / depth;
    f.mu_u = sdd * a * inv_t;
    f.mu_v = sdd * b * inv_t;
    const T inv_t2 = inv_t * inv_t;
    for (int i = 0; i < 3; ++i) {
      ju[i] = sdd * (T(fr.axis_u[i]) * inv_t - a * T(fr.central_axis[i]) * inv_t2);
      jv[i] = sdd * (T(fr.axis_v[i]) * inv_t - b * T(fr.central_axis[i]) * inv_t2);
    }
    const T len = sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    for (int i = 0; i < 3; ++i) dir[i] = w[i] / len;
  }
  // J Sigma J^T
  std::array<T, 3> cju, cjv;
  for (int i = 0; i < 3; ++i) {
    cju[i] = k.cov[i][0] * ju[0] + k.cov[i][1] * ju[1] + k.cov[i][2] * ju[2];
    cjv[i] = k.cov[i][0] * jv[0] + k.cov[i][1] * jv[1] + k.cov[i][2] * jv[2];
  }
  const T s00 = ju[0] * cju[0] + ju[1] * cju[1] + ju[2] * cju[2];
  const T s01 = ju[0] * cjv[0] + ju[1] * cjv[1] + ju[2] * cjv[2];
  const T s11 = jv[0] * cjv[0] + jv[1] * cjv[1] + jv[2] * cjv[2];
  const T det = s00 * s11 - s01 * s01;
  T quad(0.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) quad += dir[i] * k.prec[i][j] * dir[j];
  const double detv = value_of(det);
  if (!(detv > 0.0) || !std::isfinite(detv) || !(value_of(quad) > 0.0) ||
      !std::isfinite(value_of(quad)))
    fail(ErrorCode::numeric,
         "splat: kernel " + std::to_string(kernel_index) + " has a non positive-definite covariance");
  const T inv_det = T(1.0) / det;
  f.c00 = s11 * inv_det;
  f.c01 = -s01 * inv_det;
  f.c11 = s00 * inv_det;
  f.amp = k.density * T(std::sqrt(2.0 * std::numbers::pi)) / sqrt(quad);
  f.sd_u = std::sqrt(value_of(s00));
  f.sd_v = std::sqrt(value_of(s11));
  f.visible = true;
  return f;
}

struct PixelWindow {
  int c0, c1, r0, r1;  // inclusive
  bool empty() const { return c0 > c1 || r0 > r1; }
};

inline double col_coord(const ConeBeamGeometry& g, int c) {
  return (c - 0.5 * (g.detector_cols - 1)) * g.detector_pixel_size[0] + g.detector_offset[0];
}
inline double row_coord(const ConeBeamGeometry& g, int r) {
  return (r - 0.5 * (g.detector_rows - 1)) * g.detector_pixel_size[1] + g.detector_offset[1];
}

PixelWindow pixel_window(const ConeBeamGeometry& g, double mu_u, double mu_v, double ru,
                         double rv) {
  auto lo_col = [&](double u) {
    return static_cast<int>(std::ceil((u - g.detector_offset[0]) / g.detector_pixel_size[0] +
                                      0.5 * (g.detector_cols - 1)));
  };
  auto hi_col = [&](double u) {
    return static_cast<int>(std::floor((u - g.detector_offset[0]) / g.detector_pixel_size[0] +
                                       0.5 * (g.detector_cols - 1)));
  };
  auto lo_row = [&](double v) {
    return static_cast<int>(std::ceil((v - g.detector_offset[1]) / g.detector_pixel_size[1] +
                                      0.5 * (g.detector_rows - 1)));
  };
  auto hi_row = [&](double v) {
    return static_cast<int>(std::floor((v - g.detector_offset[1]) / g.detector_pixel_size[1] +
                                       0.5 * (g.detector_rows - 1)));
  };
  const double lim = 4.0 * (g.detector_cols + g.detector_rows) *
                     std::max(g.detector_pixel_size[0], g.detector_pixel_size[1]);
  ru = std::min(ru, lim);
  rv = std::min(rv, lim);
  PixelWindow w;
  w.c0 = std::max(0, lo_col(std::max(mu_u - ru, -lim)));
  w.c1 = std::min(g.detector_cols - 1, hi_col(std::min(mu_u + ru, lim)));
  w.r0 = std::max(0, lo_row(std::max(mu_v - rv, -lim)));
  w.r1 = std::min(g.detector_rows - 1, hi_row(std::min(mu_v + rv, lim)));
  return w;
}

void splat_view_impl(const GaussianCloud& cloud, const ConeBeamGeometry& geom, std::size_t view,
                     const SplatConfig& cfg, std::span<double> out, bool parallel) {
  if (out.size() != geom.pixels_per_view())
    fail(ErrorCode::shape, "splat: output buffer does not match detector");
  const ViewFrame fr = view_frame(geom, view);
  const double cut2 = cfg.cutoff_sigma * cfg.cutoff_sigma;
  const int cols = geom.detector_cols;
  const std::size_t n = cloud.size();
  const int workers = std::min<int>(thread_count(), static_cast<int>(std::max<std::size_t>(n, 1)));
  std::vector<std::vector<double>> partial(workers > 1 ? workers : 0,
                                           std::vector<double>(out.size(), 0.0));
  parallel_for(n, [&](std::size_t begin, std::size_t end, int worker) {
    double* img = workers > 1 ? partial[worker].data() : out.data();
    for (std::size_t i = begin; i < end; ++i) {
      const auto terms = detail::kernel_terms(detail::kernel_inputs<double>(cloud.kernel(i)));
      if (terms.density <= 0.0) continue;
      const auto f = footprint(terms, geom, fr, parallel, i);
      if (!f.visible) continue;
      const auto win = pixel_window(geom, f.mu_u, f.mu_v, cfg.cutoff_sigma * f.sd_u,
                                    cfg.cutoff_sigma * f.sd_v);
      for (int r = win.r0; r <= win.r1; ++r) {
        const double dv = row_coord(geom, r) - f.mu_v;
        double* row = img + static_cast<std::size_t>(r) * cols;
        for (int c = win.c0; c <= win.c1; ++c) {
          const double du = col_coord(geom, c) - f.mu_u;
          const double m = f.c00 * du * du + 2.0 * f.c01 * du * dv + f.c11 * dv * dv;
          if (m <= cut2) row[c] += f.amp * std::exp(-0.5 * m);
        }
      }
    }
  });
  for (const auto& p : partial)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += p[j];
}

void splat_grad_impl(const GaussianCloud& cloud, const ConeBeamGeometry& geom, std::size_t view,
                     std::span<const double> upstream, const SplatConfig& cfg,
                     std::span<double> grad, bool parallel) {
  using D = detail::Dual<GaussianCloud::kStride>;
  if (upstream.size() != geom.pixels_per_view())
    fail(ErrorCode::shape, "splat grad: upstream does not match detector");
  if (grad.size() != cloud.params.size())
    fail(ErrorCode::shape, "splat grad: gradient buffer does not match cloud");
  const ViewFrame fr = view_frame(geom, view);
  const double cut2 = cfg.cutoff_sigma * cfg.cutoff_sigma;
  const int cols = geom.detector_cols;
  parallel_for(cloud.size(), [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto terms = detail::kernel_terms(detail::kernel_inputs<D>(cloud.kernel(i)));
      if (terms.density.v <= 0.0) {
        // Clamped density: only the density slot could matter and its
        // derivative is zero, so the whole kernel is inert.
        continue;
      }
      const auto f = footprint(terms, geom, fr, parallel, i);
      if (!f.visible) continue;
      const double amp = f.amp.v, mu_u = f.mu_u.v, mu_v = f.mu_v.v;
      const double c00 = f.c00.v, c01 = f.c01.v, c11 = f.c11.v;
      const auto win = pixel_window(geom, mu_u, mu_v, cfg.cutoff_sigma * f.sd_u,
                                    cfg.cutoff_sigma * f.sd_v);
      double g_amp = 0, g_mu_u = 0, g_mu_v = 0, g_c00 = 0, g_c01 = 0, g_c11 = 0;
      for (int r = win.r0; r <= win.r1; ++r) {
        const double dv = row_coord(geom, r) - mu_v;
        const double* up = upstream.data() + static_cast<std::size_t>(r) * cols;
        for (int c = win.c0; c <= win.c1; ++c) {
          if (up[c] == 0.0) continue;
          const double du = col_coord(geom, c) - mu_u;
          const double m = c00 * du * du + 2.0 * c01 * du * dv + c11 * dv * dv;
          if (m > cut2) continue;
          const double e = std::exp(-0.5 * m);
          const double ge = up[c] * e;
          const double gv = ge * amp;
          g_amp += ge;
          g_mu_u += gv * (c00 * du + c01 * dv);
          g_mu_v += gv * (c01 * du + c11 * dv);
          g_c00 += -0.5 * gv * du * du;
          g_c01 += -gv * du * dv;
          g_c11 += -0.5 * gv * dv * dv;
        }
      }
      double* g = grad.data() + i * GaussianCloud::kStride;
      for (int s = 0; s < GaussianCloud::kStride; ++s) {
        g[s] += g_amp * f.amp.d[s] + g_mu_u * f.mu_u.d[s] + g_mu_v * f.mu_v.d[s] +
                g_c00 * f.c00.d[s] + g_c01 * f.c01.d[s] + g_c11 * f.c11.d[s];
      }
    }
  });
}

}  // namespace

double MarchConfig::resolved_step(const ConeBeamGeometry& geom) const {
  if (step_length > 0) return step_length;
  return 0.5 * std::min({geom.voxel_size[0], geom.voxel_size[1], geom.voxel_size[2]});
}

void MarchConfig::validate() const {
  if (samples_per_ray_cap < 2) fail(ErrorCode::config, "march: samples_per_ray_cap must be >= 2");
  if (!std::isfinite(step_length)) fail(ErrorCode::config, "march: step_length must be finite");
}

void forward_project_view(const Volume& vol, const ConeBeamGeometry& geom, std::size_t view,
                          const MarchConfig& cfg, std::span<double> out) {
  check_volume_matches(vol, geom, "forward_project");
  cfg.validate();
  if (out.size() != geom.pixels_per_view())
    fail(ErrorCode::shape, "forward_project: output buffer does not match detector");
  const ViewFrame fr = view_frame(geom, view);
  const double step = cfg.resolved_step(geom);
  const int cols = geom.detector_cols;
  parallel_for(out.size(), [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t p = begin; p < end; ++p) {
      const int r = static_cast<int>(p / cols);
      const int c = static_cast<int>(p % cols);
      const March m = plan_march(geom, make_ray(geom, fr, r, c), step, cfg.samples_per_ray_cap);
      out[p] = m.count > 0 ? integrate_ray(vol, m, cfg.interpolation) : 0.0;
    }
  });
}

ProjectionStack forward_project(const Volume& vol, const ConeBeamGeometry& geom,
                                const MarchConfig& cfg) {
  ProjectionStack stack(static_cast<int>(geom.n_views()), geom.detector_rows, geom.detector_cols,
                        geom.angles);
  for (std::size_t v = 0; v < geom.n_views(); ++v)
    forward_project_view(vol, geom, v, cfg, stack.view(static_cast<int>(v)));
  return stack;
}

void backproject_view(std::span<const double> pixels, const ConeBeamGeometry& geom,
                      std::size_t view, const MarchConfig& cfg, Volume& accum) {
  check_volume_matches(accum, geom, "backproject");
  cfg.validate();
  if (pixels.size() != geom.pixels_per_view())
    fail(ErrorCode::shape, "backproject: pixel buffer does not match detector");
  const ViewFrame fr = view_frame(geom, view);
  const double step = cfg.resolved_step(geom);
  const int cols = geom.detector_cols;
  const int workers = std::min<int>(thread_count(), static_cast<int>(pixels.size()));
  std::vector<std::vector<double>> partial(workers > 1 ? workers : 0,
                                           std::vector<double>(accum.size(), 0.0));
  parallel_for(pixels.size(), [&](std::size_t begin, std::size_t end, int worker) {
    double* dst = workers > 1 ? partial[worker].data() : accum.data.data();
    for (std::size_t p = begin; p < end; ++p) {
      if (pixels[p] == 0.0) continue;
      const int r = static_cast<int>(p / cols);
      const int c = static_cast<int>(p % cols);
      const March m = plan_march(geom, make_ray(geom, fr, r, c), step, cfg.samples_per_ray_cap);
      if (m.count > 0) scatter_ray(pixels[p], m, cfg.interpolation, accum.dims, dst);
    }
  });
  for (const auto& part : partial)
    for (std::size_t j = 0; j < accum.size(); ++j) accum.data[j] += part[j];
}

Volume backproject(const ProjectionStack& stack, const ConeBeamGeometry& geom,
                   const MarchConfig& cfg) {
  if (stack.n_views != static_cast<int>(geom.n_views()) || stack.rows != geom.detector_rows ||
      stack.cols != geom.detector_cols)
    fail(ErrorCode::shape, "backproject: stack dims do not match geometry");
  Volume vol(geom.volume_dims, 0.0, geom.voxel_size);
  for (int v = 0; v < stack.n_views; ++v) backproject_view(stack.view(v), geom, v, cfg, vol);
  return vol;
}

void splat_project_view(const GaussianCloud& cloud, const ConeBeamGeometry& geom,
                        std::size_t view, const SplatConfig& cfg, std::span<double> out) {
  splat_view_impl(cloud, geom, view, cfg, out, false);
}

ProjectionStack splat_project(const GaussianCloud& cloud, const ConeBeamGeometry& geom,
                              const SplatConfig& cfg) {
  ProjectionStack stack(static_cast<int>(geom.n_views()), geom.detector_rows, geom.detector_cols,
                        geom.angles);
  for (std::size_t v = 0; v < geom.n_views(); ++v)
    splat_project_view(cloud, geom, v, cfg, stack.view(static_cast<int>(v)));
  return stack;
}

void splat_project_view_grad(const GaussianCloud& cloud, const ConeBeamGeometry& geom,
                             std::size_t view, std::span<const double> upstream,
                             const SplatConfig& cfg, std::span<double> grad) {
  splat_grad_impl(cloud, geom, view, upstream, cfg, grad, false);
}

std::vector<double> splat_project_grad(const GaussianCloud& cloud, const ConeBeamGeometry& geom,
                                       const ProjectionStack& upstream, const SplatConfig& cfg) {
  if (upstream.n_views != static_cast<int>(geom.n_views()) ||
      upstream.rows != geom.detector_rows || upstream.cols != geom.detector_cols)
    fail(ErrorCode::shape, "splat grad: upstream dims do not match geometry");
  std::vector<double> grad(cloud.params.size(), 0.0);
  for (std::size_t v = 0; v < geom.n_views(); ++v)
    splat_project_view_grad(cloud, geom, v, upstream.view(static_cast<int>(v)), cfg, grad);
  return grad;
}

ProjectionStack add_photon_noise(const ProjectionStack& stack, double photons_per_ray,
                                 std::uint64_t seed) {
  if (!(photons_per_ray >= 1.0))
    fail(ErrorCode::invalid_argument, "add_photon_noise: photons_per_ray must be >= 1");
  ProjectionStack out = stack;
  std::mt19937_64 rng(seed);
  for (double& p : out.data) {
    const double mean = photons_per_ray * std::exp(-p);
    std::poisson_distribution<long long> dist(mean);
    const auto counts = static_cast<double>(std::max<long long>(dist(rng), 1));
    p = -std::log(counts / photons_per_ray);
  }
  return out;
}

namespace detail {

void splat_project_view_parallel(const GaussianCloud& cloud, const ConeBeamGeometry& geom,
                                 std::size_t view, const SplatConfig& cfg, std::span<double> out) {
  splat_view_impl(cloud, geom, view, cfg, out, true);
}

void splat_project_view_grad_parallel(const GaussianCloud& cloud, const ConeBeamGeometry& geom,
                                      std::size_t view, std::span<const double> upstream,
                                      const SplatConfig& cfg, std::span<double> grad) {
  splat_grad_impl(cloud, geom, view, upstream, cfg, grad, true);
}

}  // namespace detail

}  // namespace tomo
