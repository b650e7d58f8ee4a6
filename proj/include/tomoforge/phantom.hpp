#pragma once

#include <cstdint>

#include "tomoforge/volume.hpp"

namespace tomo {

// 3D modified Shepp-Logan head (ten ellipsoids, additive densities in
// [0, 1]) sampled at voxel centers of a [-1, 1]^3 box.
Volume shepp_logan_3d(const Dims3& dims, const Spacing3& spacing = {1.0, 1.0, 1.0});

// Seeded random ellipsoids painted in order (later ones overwrite), so
// densities stay in [0, 1].
Volume random_ellipsoids(const Dims3& dims, std::uint64_t seed, int count = 10,
                         const Spacing3& spacing = {1.0, 1.0, 1.0});

// Ellipsoid membership test shared with the tests' analytic oracle.
struct Ellipsoid {
  double density;
  double semi_axes[3];
  double center[3];
  double euler_deg[3];  // phi, theta, psi

  bool contains(double x, double y, double z) const;
};

const Ellipsoid* shepp_logan_table(int* count);

}  // namespace tomo
