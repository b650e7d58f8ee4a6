#include "tomoforge/representations.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "dual.hpp"
#include "kernel_math.hpp"
#include "tomoforge/error.hpp"
#include "tomoforge/parallel.hpp"

namespace tomo {

namespace {

struct VoxelBox {
  int lo[3];
  int hi[3];
  bool empty() const { return lo[0] > hi[0] || lo[1] > hi[1] || lo[2] > hi[2]; }
};

double voxel_center(int i, int dim, double s) { return (i + 0.5) * s - 0.5 * dim * s; }

// Visits the voxels of one x-row whose Mahalanobis value
// m = a*dx^2 + lin*dx + c lies within cut2, where dx = dx0 + x*s. The row
// interval is solved in closed form and the exponential is advanced by its
// second-order recurrence instead of being evaluated per voxel.
struct RowStepper {
  double a, s, inv_s, cut2;
  double q;  // exp(-a s^2), shared by every row of a kernel

  RowStepper(double a_, double s_, double cut2_)
      : a(a_), s(s_), inv_s(1.0 / s_), cut2(cut2_), q(std::exp(-a_ * s_ * s_)) {}

  template <typename F>
  void row(int lo, int hi, double dx0, double lin, double c, F&& visit) const {
    const double disc = lin * lin - 4.0 * a * (c - cut2);
    if (disc < 0.0) return;
    const double root = std::sqrt(disc);
    const double inv_2a = 0.5 / a;
    const double dlo = (-lin - root) * inv_2a, dhi = (-lin + root) * inv_2a;
    lo = std::max(lo, static_cast<int>(std::ceil((dlo - dx0) * inv_s - 1e-9)));
    hi = std::min(hi, static_cast<int>(std::floor((dhi - dx0) * inv_s + 1e-9)));
    if (lo > hi) return;
    double dx = dx0 + lo * s;
    const double m = (a * dx + lin) * dx + c;
    const double dm = a * (2.0 * dx * s + s * s) + lin * s;
    double e = std::exp(-0.5 * m);
    double ratio = std::exp(-0.5 * dm);
    for (int x = lo; x <= hi; ++x) {
      visit(x, dx, e);
      e *= ratio;
      ratio *= q;
      dx += s;
    }
  }
};

template <typename T>
VoxelBox kernel_box(const detail::KernelTerms<T>& k, const Dims3& dims, const Spacing3& sp,
                    double cut) {
  using detail::value_of;
  VoxelBox b;
  for (int a = 0; a < 3; ++a) {
    const double r = cut * std::sqrt(value_of(k.cov[a][a]));
    const double f = (value_of(k.center[a]) + 0.5 * dims[a] * sp[a]) / sp[a] - 0.5;
    const double lo = std::ceil(f - r / sp[a]);
    const double hi = std::floor(f + r / sp[a]);
    b.lo[a] = static_cast<int>(std::clamp(lo, 0.0, static_cast<double>(dims[a])));
    b.hi[a] = static_cast<int>(std::clamp(hi, -1.0, static_cast<double>(dims[a] - 1)));
  }
  return b;
}

}  // namespace

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st,
               std::string_view name) {
  if (params.size() != grads.size())
    fail(ErrorCode::shape, "adam_step: " + std::string(name) + " gradient size mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      fail(ErrorCode::numeric, "adam_step: non-finite gradient in " + std::string(name) +
                                   " at index " + std::to_string(i));
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
    st.step = 0;
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  const std::size_t period = st.lr_pattern.size();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    const double lr = period ? st.lr * st.lr_pattern[i % period] : st.lr;
    params[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

Volume resample_trilinear(const Volume& vol, const Dims3& dims) {
  if (dims == vol.dims) return vol;
  Spacing3 sp;
  for (int a = 0; a < 3; ++a) sp[a] = vol.spacing[a] * vol.dims[a] / dims[a];
  Volume out(dims, 0.0, sp);
  auto src_coord = [&](int i, int a) {
    const double world = voxel_center(i, dims[a], sp[a]);
    const double f = (world + 0.5 * vol.dims[a] * vol.spacing[a]) / vol.spacing[a] - 0.5;
    return std::clamp(f, 0.0, static_cast<double>(vol.dims[a] - 1));
  };
  for (int z = 0; z < dims[2]; ++z) {
    const double fz = src_coord(z, 2);
    const int z0 = std::min(static_cast<int>(fz), std::max(vol.dims[2] - 2, 0));
    const int z1 = std::min(z0 + 1, vol.dims[2] - 1);
    const double tz = fz - z0;
    for (int y = 0; y < dims[1]; ++y) {
      const double fy = src_coord(y, 1);
      const int y0 = std::min(static_cast<int>(fy), std::max(vol.dims[1] - 2, 0));
      const int y1 = std::min(y0 + 1, vol.dims[1] - 1);
      const double ty = fy - y0;
      for (int x = 0; x < dims[0]; ++x) {
        const double fx = src_coord(x, 0);
        const int x0 = std::min(static_cast<int>(fx), std::max(vol.dims[0] - 2, 0));
        const int x1 = std::min(x0 + 1, vol.dims[0] - 1);
        const double tx = fx - x0;
        auto lerp = [](double a, double b, double t) { return a + t * (b - a); };
        const double c00 = lerp(vol.at(x0, y0, z0), vol.at(x1, y0, z0), tx);
        const double c10 = lerp(vol.at(x0, y1, z0), vol.at(x1, y1, z0), tx);
        const double c01 = lerp(vol.at(x0, y0, z1), vol.at(x1, y0, z1), tx);
        const double c11 = lerp(vol.at(x0, y1, z1), vol.at(x1, y1, z1), tx);
        out.at(x, y, z) = lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz);
      }
    }
  }
  return out;
}

Volume query_volume(const VoxelField& field, const Dims3& dims) {
  for (int d : dims)
    if (d < 1) fail(ErrorCode::invalid_argument, "query_volume: dims must be >= 1");
  return resample_trilinear(field.grid, dims);
}

Volume query_volume(const GaussianCloud& cloud, const Dims3& dims, const Spacing3& sp,
                    double cutoff_sigma) {
  for (int d : dims)
    if (d < 1) fail(ErrorCode::invalid_argument, "query_volume: dims must be >= 1");
  Volume out(dims, 0.0, sp);
  const double cut2 = cutoff_sigma * cutoff_sigma;
  const int workers = std::min<int>(thread_count(), static_cast<int>(std::max<std::size_t>(cloud.size(), 1)));
  std::vector<std::vector<double>> partial(workers > 1 ? workers : 0,
                                           std::vector<double>(out.size(), 0.0));
  parallel_for(cloud.size(), [&](std::size_t begin, std::size_t end, int worker) {
    double* dst = workers > 1 ? partial[worker].data() : out.data.data();
    for (std::size_t i = begin; i < end; ++i) {
      const auto k = detail::kernel_terms(detail::kernel_inputs<double>(cloud.kernel(i)));
      if (k.density <= 0.0) continue;
      const VoxelBox b = kernel_box(k, dims, sp, cutoff_sigma);
      if (b.empty()) continue;
      const auto& P = k.prec;
      const RowStepper stepper(P[0][0], sp[0], cut2);
      const double dx0 = voxel_center(0, dims[0], sp[0]) - k.center[0];
      for (int z = b.lo[2]; z <= b.hi[2]; ++z) {
        const double dz = voxel_center(z, dims[2], sp[2]) - k.center[2];
        for (int y = b.lo[1]; y <= b.hi[1]; ++y) {
          const double dy = voxel_center(y, dims[1], sp[1]) - k.center[1];
          const double cyz = P[1][1] * dy * dy + 2.0 * P[1][2] * dy * dz + P[2][2] * dz * dz;
          const double lin = 2.0 * (P[0][1] * dy + P[0][2] * dz);
          double* row = dst + out.index(0, y, z);
          const double rho = k.density;
          stepper.row(b.lo[0], b.hi[0], dx0, lin, cyz,
                      [&](int x, double, double e) { row[x] += rho * e; });
        }
      }
    }
  });
  for (const auto& p : partial)
    for (std::size_t j = 0; j < out.size(); ++j) out.data[j] += p[j];
  return out;
}

void query_volume_grad(const GaussianCloud& cloud, const Dims3& dims, const Spacing3& sp,
                       std::span<const double> upstream, std::span<double> grad,
                       double cutoff_sigma) {
  using D = detail::Dual<GaussianCloud::kStride>;
  if (upstream.size() != voxel_count(dims))
    fail(ErrorCode::shape, "query_volume_grad: upstream size does not match dims");
  if (grad.size() != cloud.params.size())
    fail(ErrorCode::shape, "query_volume_grad: gradient buffer does not match cloud");
  const double cut2 = cutoff_sigma * cutoff_sigma;
  const std::size_t sy = static_cast<std::size_t>(dims[0]);
  const std::size_t sz = sy * dims[1];
  parallel_for(cloud.size(), [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto k = detail::kernel_terms(detail::kernel_inputs<D>(cloud.kernel(i)));
      const double rho = k.density.v;
      if (rho <= 0.0) continue;
      const VoxelBox b = kernel_box(k, dims, sp, cutoff_sigma);
      if (b.empty()) continue;
      double P[3][3];
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) P[r][c] = k.prec[r][c].v;
      const double px = k.center[0].v, py = k.center[1].v, pz = k.center[2].v;
      const RowStepper stepper(P[0][0], sp[0], cut2);
      const double dx0 = voxel_center(0, dims[0], sp[0]) - px;
      double g_rho = 0, g_p[3] = {0, 0, 0};
      double g00 = 0, g11 = 0, g22 = 0, g01 = 0, g02 = 0, g12 = 0;
      for (int z = b.lo[2]; z <= b.hi[2]; ++z) {
        const double dz = voxel_center(z, dims[2], sp[2]) - pz;
        for (int y = b.lo[1]; y <= b.hi[1]; ++y) {
          const double dy = voxel_center(y, dims[1], sp[1]) - py;
          const double* up = upstream.data() + y * sy + z * sz;
          const double cyz = P[1][1] * dy * dy + 2.0 * P[1][2] * dy * dz + P[2][2] * dz * dz;
          const double lin = 2.0 * (P[0][1] * dy + P[0][2] * dz);
          double s0 = 0, s1 = 0, s2 = 0;
          stepper.row(b.lo[0], b.hi[0], dx0, lin, cyz, [&](int x, double dx, double e) {
                         const double ge = up[x] * e;
                         s0 += ge;
                         s1 += ge * dx;
                         s2 += ge * dx * dx;
                       });
          g_rho += s0;
          g_p[0] += rho * (P[0][0] * s1 + (P[0][1] * dy + P[0][2] * dz) * s0);
          g_p[1] += rho * (P[0][1] * s1 + (P[1][1] * dy + P[1][2] * dz) * s0);
          g_p[2] += rho * (P[0][2] * s1 + (P[1][2] * dy + P[2][2] * dz) * s0);
          g00 += -0.5 * rho * s2;
          g11 += -0.5 * rho * dy * dy * s0;
          g22 += -0.5 * rho * dz * dz * s0;
          g01 += -rho * dy * s1;
          g02 += -rho * dz * s1;
          g12 += -rho * dy * dz * s0;
        }
      }
      double* g = grad.data() + i * GaussianCloud::kStride;
      for (int s = 0; s < GaussianCloud::kStride; ++s) {
        g[s] += g_rho * k.density.d[s] + g_p[0] * k.center[0].d[s] + g_p[1] * k.center[1].d[s] +
                g_p[2] * k.center[2].d[s] + g00 * k.prec[0][0].d[s] + g11 * k.prec[1][1].d[s] +
                g22 * k.prec[2][2].d[s] + g01 * k.prec[0][1].d[s] + g02 * k.prec[0][2].d[s] +
                g12 * k.prec[1][2].d[s];
      }
    }
  });
}

Image render(const VoxelField& field, const ConeBeamGeometry& geom, std::size_t view,
             const MarchConfig& cfg) {
  Image img(geom.detector_cols, geom.detector_rows);
  forward_project_view(field.grid, geom, view, cfg, img.data);
  return img;
}

Image render(const GaussianCloud& cloud, const ConeBeamGeometry& geom, std::size_t view,
             const SplatConfig& cfg) {
  Image img(geom.detector_cols, geom.detector_rows);
  splat_project_view(cloud, geom, view, cfg, img.data);
  return img;
}

GaussianCloud init_cloud_from_volume(const Volume& coarse, std::size_t m, std::uint64_t seed) {
  if (m == 0) fail(ErrorCode::invalid_argument, "init_cloud_from_volume: m must be >= 1");
  if (coarse.data.empty()) fail(ErrorCode::invalid_argument, "init_cloud_from_volume: empty volume");
  std::vector<double> cdf(coarse.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    acc += std::max(coarse.data[i], 0.0);
    cdf[i] = acc;
  }
  const bool uniform = !(acc > 0.0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto [X, Y, Z] = coarse.dims;
  const auto& sp = coarse.spacing;

  std::vector<Vec3> centers(m);
  std::vector<double> density(m);
  for (std::size_t k = 0; k < m; ++k) {
    std::size_t idx;
    if (uniform) {
      idx = std::min<std::size_t>(static_cast<std::size_t>(unit(rng) * coarse.size()),
                                  coarse.size() - 1);
    } else {
      const double u = unit(rng) * acc;
      idx = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      idx = std::min(idx, coarse.size() - 1);
      while (coarse.data[idx] <= 0.0 && idx > 0) --idx;  // guard the u == acc edge
    }
    const int x = static_cast<int>(idx % X);
    const int y = static_cast<int>((idx / X) % Y);
    const int z = static_cast<int>(idx / (static_cast<std::size_t>(X) * Y));
    centers[k] = {voxel_center(x, X, sp[0]) + (unit(rng) - 0.5) * sp[0],
                  voxel_center(y, Y, sp[1]) + (unit(rng) - 0.5) * sp[1],
                  voxel_center(z, Z, sp[2]) + (unit(rng) - 0.5) * sp[2]};
    density[k] = uniform ? 1e-3 : coarse.data[idx];
  }

  const double min_scale = 0.5 * std::min({sp[0], sp[1], sp[2]});
  GaussianCloud cloud;
  cloud.params.reserve(m * GaussianCloud::kStride);
  for (std::size_t k = 0; k < m; ++k) {
    double best[3] = {INFINITY, INFINITY, INFINITY};
    for (std::size_t j = 0; j < m; ++j) {
      if (j == k) continue;
      const Vec3 d = centers[j] - centers[k];
      const double d2 = dot(d, d);
      if (d2 < best[2]) {
        best[2] = d2;
        if (best[2] < best[1]) std::swap(best[2], best[1]);
        if (best[1] < best[0]) std::swap(best[1], best[0]);
      }
    }
    double mean = 0.0;
    int count = 0;
    for (double b : best)
      if (std::isfinite(b)) {
        mean += std::sqrt(b);
        ++count;
      }
    double scale = count ? mean / count : min_scale;
    scale = std::max(scale, min_scale);
    cloud.add_isotropic(density[k], centers[k], scale);
  }
  return cloud;
}

// --- trainable models ------------------------------------------------------

VoxelFieldModel::VoxelFieldModel(const ConeBeamGeometry& geom, VoxelField init,
                                 VoxelFieldOptions opts)
    : geom_(geom), field_(std::move(init)), opts_(opts) {
  if (field_.grid.dims != geom_.volume_dims)
    fail(ErrorCode::shape, "VoxelFieldModel: grid dims do not match geometry");
  field_.grid.spacing = geom_.voxel_size;
  grad_ = Volume(geom_.volume_dims, 0.0, geom_.voxel_size);
  adam_.lr = opts_.lr;
}

void VoxelFieldModel::render(std::size_t view, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  forward_project_view(field_.grid, geom_, view, opts_.march, out);
}

void VoxelFieldModel::render_backward(std::size_t view, std::span<const double> upstream) {
  backproject_view(upstream, geom_, view, opts_.march, grad_);
}

Volume VoxelFieldModel::query() const { return field_.grid; }

void VoxelFieldModel::query_backward(std::span<const double> upstream) {
  if (upstream.size() != grad_.size())
    fail(ErrorCode::shape, "VoxelFieldModel: upstream size mismatch");
  for (std::size_t i = 0; i < upstream.size(); ++i) grad_.data[i] += upstream[i];
}

void VoxelFieldModel::zero_grad() { std::fill(grad_.data.begin(), grad_.data.end(), 0.0); }

void VoxelFieldModel::step() { adam_step(field_.grid.data, grad_.data, adam_, "voxel densities"); }

GaussianCloudModel::GaussianCloudModel(const ConeBeamGeometry& geom, GaussianCloud init,
                                       GaussianCloudOptions opts)
    : geom_(geom), cloud_(std::move(init)), opts_(opts) {
  if (cloud_.empty()) fail(ErrorCode::invalid_argument, "GaussianCloudModel: empty cloud");
  cloud_.normalize_rotations();
  grad_.assign(cloud_.params.size(), 0.0);
  const double lr_center = opts_.lr_center > 0
                               ? opts_.lr_center
                               : 0.05 * std::min({geom_.voxel_size[0], geom_.voxel_size[1],
                                                  geom_.voxel_size[2]});
  adam_.lr = 1.0;
  adam_.lr_pattern = {opts_.lr_density, lr_center,         lr_center,         lr_center,
                      opts_.lr_log_scale, opts_.lr_log_scale, opts_.lr_log_scale,
                      opts_.lr_rotation, opts_.lr_rotation, opts_.lr_rotation, opts_.lr_rotation};
}

void GaussianCloudModel::render(std::size_t view, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  splat_project_view(cloud_, geom_, view, opts_.splat, out);
}

void GaussianCloudModel::render_backward(std::size_t view, std::span<const double> upstream) {
  splat_project_view_grad(cloud_, geom_, view, upstream, opts_.splat, grad_);
}

Volume GaussianCloudModel::query() const {
  return query_volume(cloud_, geom_.volume_dims, geom_.voxel_size, opts_.query_cutoff_sigma);
}

void GaussianCloudModel::query_backward(std::span<const double> upstream) {
  query_volume_grad(cloud_, geom_.volume_dims, geom_.voxel_size, upstream, grad_,
                    opts_.query_cutoff_sigma);
}

void GaussianCloudModel::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

void GaussianCloudModel::step() {
  adam_step(cloud_.params, grad_, adam_, "gaussian cloud parameters");
  cloud_.normalize_rotations();
}

}  // namespace tomo
