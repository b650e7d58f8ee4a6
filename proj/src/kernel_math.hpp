#pragma once

#include <array>
#include <span>
#include <type_traits>

#include "dual.hpp"
#include "tomoforge/gaussian.hpp"

namespace tomo::detail {

template <typename T>
using M3 = std::array<std::array<T, 3>, 3>;

template <typename T>
M3<T> quat_rotation(const T& w0, const T& x0, const T& y0, const T& z0) {
  using std::sqrt;
  const T inv = T(1.0) / sqrt(w0 * w0 + x0 * x0 + y0 * y0 + z0 * z0);
  const T w = w0 * inv, x = x0 * inv, y = y0 * inv, z = z0 * inv;
  const T one(1.0), two(2.0);
  M3<T> r;
  r[0] = {one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)};
  r[1] = {two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)};
  r[2] = {two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)};
  return r;
}

// R diag(s) R^T.
template <typename T>
M3<T> rotate_diag(const M3<T>& r, const std::array<T, 3>& s) {
  M3<T> m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      T acc(0.0);
      for (int k = 0; k < 3; ++k) acc += r[i][k] * s[k] * r[j][k];
      m[i][j] = acc;
    }
  return m;
}

template <typename T>
struct KernelTerms {
  T density;  // clamped to >= 0
  std::array<T, 3> center;
  M3<T> cov;
  M3<T> prec;
};

// Dual<11> variables seeded in checkpoint order when T is a dual.
template <typename T>
std::array<T, GaussianCloud::kStride> kernel_inputs(std::span<const double, GaussianCloud::kStride> p) {
  std::array<T, GaussianCloud::kStride> in;
  for (int i = 0; i < GaussianCloud::kStride; ++i) {
    if constexpr (std::is_same_v<T, double>) {
      in[i] = p[i];
    } else {
      in[i] = T::variable(p[i], i);
    }
  }
  return in;
}

template <typename T>
KernelTerms<T> kernel_terms(const std::array<T, GaussianCloud::kStride>& in) {
  using std::exp;
  using C = GaussianCloud;
  KernelTerms<T> k;
  k.density = relu(in[C::kDensity]);
  k.center = {in[C::kCenter], in[C::kCenter + 1], in[C::kCenter + 2]};
  const auto r = quat_rotation(in[C::kQuat], in[C::kQuat + 1], in[C::kQuat + 2], in[C::kQuat + 3]);
  std::array<T, 3> var, inv_var;
  for (int a = 0; a < 3; ++a) {
    var[a] = exp(T(2.0) * in[C::kLogScale + a]);
    inv_var[a] = exp(T(-2.0) * in[C::kLogScale + a]);
  }
  k.cov = rotate_diag(r, var);
  k.prec = rotate_diag(r, inv_var);
  return k;
}

}  // namespace tomo::detail
