#pragma once

#include <array>
#include <span>

#include "tomoforge/volume.hpp"

namespace tomo {

// Every loss below returns its value and, when `grad` is non-empty, adds
// weight * d(loss)/d(a) into it.

// Mean absolute difference. Subgradient 0 where a == b.
double l1_loss(std::span<const double> a, std::span<const double> b,
               std::span<double> grad = {}, double weight = 1.0);

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  // <= 0: use the larger of the two operands' maxima (1 if both are zero).
  double dynamic_range = 0.0;

  double resolve_range(std::span<const double> a, std::span<const double> b) const;
};

// Mean of the local SSIM map over all fully-covered window positions.
double ssim2d(const Image& a, const Image& b, const SsimConfig& cfg = {},
              std::span<double> grad = {}, double weight = 1.0);

// Per-axis means of slice SSIM, ordered {axial, coronal, sagittal}.
std::array<double, 3> ssim3d_axes(const Volume& a, const Volume& b, const SsimConfig& cfg = {});

// Average over the three axes of the mean slice SSIM along that axis.
double ssim3d(const Volume& a, const Volume& b, const SsimConfig& cfg = {},
              std::span<double> grad = {}, double weight = 1.0);

inline constexpr double kTvEpsilon = 1e-8;

// Isotropic total variation with forward differences (zero past the last
// sample): sum over voxels of sqrt(dx^2 + dy^2 + dz^2 + eps).
double tv3d(const Volume& v, std::span<double> grad = {}, double weight = 1.0,
            double eps = kTvEpsilon);
double tv2d(const Image& img, std::span<double> grad = {}, double weight = 1.0,
            double eps = kTvEpsilon);

}  // namespace tomo
