#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tomoforge/geometry.hpp"

namespace tomo {

// Mixture of anisotropic 3D Gaussians. Parameters are packed 11 per kernel in
// checkpoint order: density, center (3, mm), log scales (3, ln mm), rotation
// quaternion (w, x, y, z). Covariance is R diag(exp(2 log_scale)) R^T, so it
// is positive definite for any finite parameters.
struct GaussianCloud {
  static constexpr int kStride = 11;
  static constexpr int kDensity = 0;
  static constexpr int kCenter = 1;
  static constexpr int kLogScale = 4;
  static constexpr int kQuat = 7;

  std::vector<double> params;

  std::size_t size() const { return params.size() / kStride; }
  bool empty() const { return params.empty(); }

  std::span<double, kStride> kernel(std::size_t i) {
    return std::span<double, kStride>(params.data() + i * kStride, kStride);
  }
  std::span<const double, kStride> kernel(std::size_t i) const {
    return std::span<const double, kStride>(params.data() + i * kStride, kStride);
  }

  void add(double density, Vec3 center, std::array<double, 3> log_scale,
           std::array<double, 4> quat = {1.0, 0.0, 0.0, 0.0});
  void add_isotropic(double density, Vec3 center, double scale) {
    const double ls = std::log(scale);
    add(density, center, {ls, ls, ls});
  }

  // Rescales every quaternion to unit norm.
  void normalize_rotations();
};

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 rotation_from_quat(std::span<const double, 4> quat);
Mat3 kernel_covariance(std::span<const double, GaussianCloud::kStride> kernel);

std::vector<std::uint8_t> encode_cloud(const GaussianCloud& cloud);
GaussianCloud decode_cloud(std::span<const std::uint8_t> bytes);
void write_cloud(const std::string& path, const GaussianCloud& cloud);
GaussianCloud read_cloud(const std::string& path);

}  // namespace tomo
