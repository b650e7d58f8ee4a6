#include "tomoforge/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "tomoforge/error.hpp"

namespace tomo {

namespace {

void check_grad(std::span<double> grad, std::size_t n, const char* what) {
  if (!grad.empty() && grad.size() != n)
    fail(ErrorCode::shape, std::string(what) + ": gradient buffer size mismatch");
}

std::vector<double> gaussian_window(const SsimConfig& cfg) {
  std::vector<double> w(cfg.window);
  const double c = 0.5 * (cfg.window - 1);
  double sum = 0.0;
  for (int i = 0; i < cfg.window; ++i) {
    w[i] = std::exp(-(i - c) * (i - c) / (2.0 * cfg.sigma * cfg.sigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Valid-mode separable filtering of an image of size w x h.
void filter_valid(const double* src, int w, int h, const std::vector<double>& win, double* tmp,
                  double* dst) {
  const int k = static_cast<int>(win.size());
  const int ow = w - k + 1, oh = h - k + 1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      const double* s = src + static_cast<std::size_t>(y) * w + x;
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += win[t] * s[t];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += win[t] * tmp[static_cast<std::size_t>(y + t) * ow + x];
      dst[static_cast<std::size_t>(y) * ow + x] = acc;
    }
}

// Adjoint of filter_valid: spreads an (ow x oh) map back onto w x h.
void filter_adjoint(const double* src, int w, int h, const std::vector<double>& win, double* tmp,
                    double* dst) {
  const int k = static_cast<int>(win.size());
  const int ow = w - k + 1, oh = h - k + 1;
  std::fill(tmp, tmp + static_cast<std::size_t>(ow) * h, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const double v = src[static_cast<std::size_t>(y) * ow + x];
      for (int t = 0; t < k; ++t) tmp[static_cast<std::size_t>(y + t) * ow + x] += win[t] * v;
    }
  std::fill(dst, dst + static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      const double v = tmp[static_cast<std::size_t>(y) * ow + x];
      double* d = dst + static_cast<std::size_t>(y) * w + x;
      for (int t = 0; t < k; ++t) d[t] += win[t] * v;
    }
}

// SSIM of two w x h buffers with a resolved dynamic range.
double ssim_buffers(const double* a, const double* b, int w, int h, const SsimConfig& cfg,
                    double range, double* grad, double weight) {
  if (w < cfg.window || h < cfg.window)
    fail(ErrorCode::config, "ssim: image " + std::to_string(w) + "x" + std::to_string(h) +
                                " smaller than the " + std::to_string(cfg.window) + "px window");
  const auto win = gaussian_window(cfg);
  const int ow = w - cfg.window + 1, oh = h - cfg.window + 1;
  const std::size_t n_in = static_cast<std::size_t>(w) * h;
  const std::size_t n_out = static_cast<std::size_t>(ow) * oh;
  const double c1 = (cfg.k1 * range) * (cfg.k1 * range);
  const double c2 = (cfg.k2 * range) * (cfg.k2 * range);

  std::vector<double> sq(n_in), tmp(static_cast<std::size_t>(ow) * h);
  std::vector<double> ma(n_out), mb(n_out), eaa(n_out), ebb(n_out), eab(n_out);
  filter_valid(a, w, h, win, tmp.data(), ma.data());
  filter_valid(b, w, h, win, tmp.data(), mb.data());
  for (std::size_t i = 0; i < n_in; ++i) sq[i] = a[i] * a[i];
  filter_valid(sq.data(), w, h, win, tmp.data(), eaa.data());
  for (std::size_t i = 0; i < n_in; ++i) sq[i] = b[i] * b[i];
  filter_valid(sq.data(), w, h, win, tmp.data(), ebb.data());
  for (std::size_t i = 0; i < n_in; ++i) sq[i] = a[i] * b[i];
  filter_valid(sq.data(), w, h, win, tmp.data(), eab.data());

  double total = 0.0;
  std::vector<double> g_m, g_aa, g_ab;
  if (grad) {
    g_m.resize(n_out);
    g_aa.resize(n_out);
    g_ab.resize(n_out);
  }
  const double inv_n = 1.0 / static_cast<double>(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double mua = ma[i], mub = mb[i];
    const double va = eaa[i] - mua * mua;
    const double vb = ebb[i] - mub * mub;
    const double cov = eab[i] - mua * mub;
    const double a1 = 2.0 * mua * mub + c1;
    const double a2 = 2.0 * cov + c2;
    const double b1 = mua * mua + mub * mub + c1;
    const double b2 = va + vb + c2;
    const double s = (a1 * a2) / (b1 * b2);
    total += s;
    if (grad) {
      const double inv = 1.0 / (b1 * b2);
      // Derivatives w.r.t. the raw windowed moments of a.
      g_ab[i] = 2.0 * a1 * inv * inv_n;
      g_aa[i] = -s / b2 * inv_n;
      g_m[i] = ((2.0 * mub * a2 - 2.0 * mub * a1) * inv - s * 2.0 * mua / b1 +
                s * 2.0 * mua / b2) *
               inv_n;
    }
  }
  if (grad) {
    std::vector<double> bm(n_in), baa(n_in), bab(n_in);
    filter_adjoint(g_m.data(), w, h, win, tmp.data(), bm.data());
    filter_adjoint(g_aa.data(), w, h, win, tmp.data(), baa.data());
    filter_adjoint(g_ab.data(), w, h, win, tmp.data(), bab.data());
    for (std::size_t i = 0; i < n_in; ++i)
      grad[i] += weight * (bm[i] + 2.0 * a[i] * baa[i] + b[i] * bab[i]);
  }
  return total * inv_n;
}

double tv_buffer(const double* v, int X, int Y, int Z, double* grad, double weight, double eps) {
  const std::size_t sy = static_cast<std::size_t>(X), sz = sy * Y;
  double total = 0.0;
  for (int z = 0; z < Z; ++z)
    for (int y = 0; y < Y; ++y)
      for (int x = 0; x < X; ++x) {
        const std::size_t i = x + y * sy + z * sz;
        const double dx = x + 1 < X ? v[i + 1] - v[i] : 0.0;
        const double dy = y + 1 < Y ? v[i + sy] - v[i] : 0.0;
        const double dz = z + 1 < Z ? v[i + sz] - v[i] : 0.0;
        const double n = std::sqrt(dx * dx + dy * dy + dz * dz + eps);
        total += n;
        if (grad) {
          const double k = weight / n;
          grad[i] -= k * (dx + dy + dz);
          if (x + 1 < X) grad[i + 1] += k * dx;
          if (y + 1 < Y) grad[i + sy] += k * dy;
          if (z + 1 < Z) grad[i + sz] += k * dz;
        }
      }
  return total;
}

}  // namespace

double SsimConfig::resolve_range(std::span<const double> a, std::span<const double> b) const {
  if (dynamic_range > 0) return dynamic_range;
  double m = 0.0;
  for (double v : a) m = std::max(m, v);
  for (double v : b) m = std::max(m, v);
  return m > 0 ? m : 1.0;
}

double l1_loss(std::span<const double> a, std::span<const double> b, std::span<double> grad,
               double weight) {
  if (a.size() != b.size() || a.empty()) fail(ErrorCode::shape, "l1_loss: operand sizes differ");
  check_grad(grad, a.size(), "l1_loss");
  const double inv_n = 1.0 / static_cast<double>(a.size());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    total += std::abs(d);
    if (!grad.empty() && d != 0.0) grad[i] += weight * (d > 0 ? inv_n : -inv_n);
  }
  return total * inv_n;
}

double ssim2d(const Image& a, const Image& b, const SsimConfig& cfg, std::span<double> grad,
              double weight) {
  if (a.width != b.width || a.height != b.height)
    fail(ErrorCode::shape, "ssim2d: image dims differ");
  check_grad(grad, a.data.size(), "ssim2d");
  const double range = cfg.resolve_range(a.data, b.data);
  return ssim_buffers(a.data.data(), b.data.data(), a.width, a.height, cfg, range,
                      grad.empty() ? nullptr : grad.data(), weight);
}

namespace {

double ssim3d_impl(const Volume& a, const Volume& b, const SsimConfig& cfg,
                   std::span<double> grad, double weight, std::array<double, 3>* axes) {
  if (a.dims != b.dims) fail(ErrorCode::shape, "ssim3d: volume dims differ");
  check_grad(grad, a.size(), "ssim3d");
  for (int d : a.dims)
    if (d < cfg.window)
      fail(ErrorCode::config, "ssim3d: every axis extent must be >= the window size");
  const double range = cfg.resolve_range(a.data, b.data);
  const SliceAxis order[3] = {SliceAxis::axial, SliceAxis::coronal, SliceAxis::sagittal};
  double total = 0.0;
  std::vector<double> sg;
  for (int k = 0; k < 3; ++k) {
    const SliceAxis axis = order[k];
    const int n = axis_extent(a.dims, axis);
    const double slice_weight = weight / (3.0 * n);
    double axis_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const SliceImage sa = extract_slice(a, axis, i);
      const SliceImage sb = extract_slice(b, axis, i);
      double* g = nullptr;
      if (!grad.empty()) {
        sg.assign(sa.data.size(), 0.0);
        g = sg.data();
      }
      axis_sum += ssim_buffers(sa.data.data(), sb.data.data(), sa.width, sa.height, cfg, range, g,
                               slice_weight);
      if (g) {
        for (int y = 0; y < sa.height; ++y)
          for (int x = 0; x < sa.width; ++x) {
            const double v = sg[static_cast<std::size_t>(y) * sa.width + x];
            switch (axis) {
              case SliceAxis::axial: grad[a.index(x, y, i)] += v; break;
              case SliceAxis::coronal: grad[a.index(x, i, y)] += v; break;
              case SliceAxis::sagittal: grad[a.index(i, x, y)] += v; break;
            }
          }
      }
    }
    const double mean = axis_sum / n;
    if (axes) (*axes)[k] = mean;
    total += mean;
  }
  return total / 3.0;
}

}  // namespace

std::array<double, 3> ssim3d_axes(const Volume& a, const Volume& b, const SsimConfig& cfg) {
  std::array<double, 3> axes{};
  ssim3d_impl(a, b, cfg, {}, 1.0, &axes);
  return axes;
}

double ssim3d(const Volume& a, const Volume& b, const SsimConfig& cfg, std::span<double> grad,
              double weight) {
  return ssim3d_impl(a, b, cfg, grad, weight, nullptr);
}

double tv3d(const Volume& v, std::span<double> grad, double weight, double eps) {
  check_grad(grad, v.size(), "tv3d");
  return tv_buffer(v.data.data(), v.dims[0], v.dims[1], v.dims[2],
                   grad.empty() ? nullptr : grad.data(), weight, eps);
}

double tv2d(const Image& img, std::span<double> grad, double weight, double eps) {
  check_grad(grad, img.data.size(), "tv2d");
  return tv_buffer(img.data.data(), img.width, img.height, 1,
                   grad.empty() ? nullptr : grad.data(), weight, eps);
}

}  // namespace tomo
