#include "tomoforge/phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "tomoforge/error.hpp"

namespace tomo {

namespace {

constexpr Ellipsoid kSheppLogan[] = {
    {1.0, {0.6900, 0.920, 0.810}, {0.0, 0.0, 0.0}, {0, 0, 0}},
    {-0.8, {0.6624, 0.874, 0.780}, {0.0, -0.0184, 0.0}, {0, 0, 0}},
    {-0.2, {0.1100, 0.310, 0.220}, {0.22, 0.0, 0.0}, {-18, 0, 10}},
    {-0.2, {0.1600, 0.410, 0.280}, {-0.22, 0.0, 0.0}, {18, 0, 10}},
    {0.1, {0.2100, 0.250, 0.410}, {0.0, 0.35, -0.15}, {0, 0, 0}},
    {0.1, {0.0460, 0.046, 0.050}, {0.0, 0.1, 0.25}, {0, 0, 0}},
    {0.1, {0.0460, 0.046, 0.050}, {0.0, -0.1, 0.25}, {0, 0, 0}},
    {0.1, {0.0460, 0.023, 0.050}, {-0.08, -0.605, 0.0}, {0, 0, 0}},
    {0.1, {0.0230, 0.023, 0.020}, {0.0, -0.606, 0.0}, {0, 0, 0}},
    {0.1, {0.0230, 0.046, 0.020}, {0.06, -0.605, 0.0}, {0, 0, 0}},
};

void check_dims(const Dims3& dims) {
  for (int d : dims)
    if (d < 16) fail(ErrorCode::config, "phantom: every dimension must be >= 16");
}

double unit_coord(int i, int n) { return (i + 0.5) / n * 2.0 - 1.0; }

}  // namespace

bool Ellipsoid::contains(double x, double y, double z) const {
  constexpr double deg = std::numbers::pi / 180.0;
  const double phi = euler_deg[0] * deg, theta = euler_deg[1] * deg, psi = euler_deg[2] * deg;
  const double cphi = std::cos(phi), sphi = std::sin(phi);
  const double cth = std::cos(theta), sth = std::sin(theta);
  const double cpsi = std::cos(psi), spsi = std::sin(psi);
  // Z-X-Z Euler rotation applied to the sample point.
  const double r[3][3] = {
      {cpsi * cphi - cth * sphi * spsi, cpsi * sphi + cth * cphi * spsi, spsi * sth},
      {-spsi * cphi - cth * sphi * cpsi, -spsi * sphi + cth * cphi * cpsi, cpsi * sth},
      {sth * sphi, -sth * cphi, cth}};
  const double p[3] = {x, y, z};
  double q = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double c = r[a][0] * p[0] + r[a][1] * p[1] + r[a][2] * p[2] - center[a];
    q += c * c / (semi_axes[a] * semi_axes[a]);
  }
  return q <= 1.0;
}

const Ellipsoid* shepp_logan_table(int* count) {
  if (count) *count = static_cast<int>(std::size(kSheppLogan));
  return kSheppLogan;
}

Volume shepp_logan_3d(const Dims3& dims, const Spacing3& spacing) {
  check_dims(dims);
  Volume vol(dims, 0.0, spacing);
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) {
        const double px = unit_coord(x, dims[0]);
        const double py = unit_coord(y, dims[1]);
        const double pz = unit_coord(z, dims[2]);
        double v = 0.0;
        for (const auto& e : kSheppLogan)
          if (e.contains(px, py, pz)) v += e.density;
        // Additive densities can land a hair below zero in floating point.
        vol.at(x, y, z) = std::abs(v) < 1e-12 ? 0.0 : v;
      }
  return vol;
}

Volume random_ellipsoids(const Dims3& dims, std::uint64_t seed, int count,
                         const Spacing3& spacing) {
  check_dims(dims);
  if (count < 1) fail(ErrorCode::config, "phantom: ellipsoid count must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Ellipsoid> set;
  for (int k = 0; k < count; ++k) {
    Ellipsoid e{};
    // The first ellipsoid is a large body; the rest are inclusions.
    const double size_lo = k == 0 ? 0.6 : 0.08;
    const double size_hi = k == 0 ? 0.85 : 0.35;
    for (int a = 0; a < 3; ++a) {
      e.semi_axes[a] = size_lo + (size_hi - size_lo) * u(rng);
      e.center[a] = k == 0 ? 0.0 : (u(rng) - 0.5) * 0.9;
      e.euler_deg[a] = (u(rng) - 0.5) * 180.0;
    }
    e.density = k == 0 ? 0.3 + 0.4 * u(rng) : u(rng);
    set.push_back(e);
  }
  Volume vol(dims, 0.0, spacing);
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) {
        const double px = unit_coord(x, dims[0]);
        const double py = unit_coord(y, dims[1]);
        const double pz = unit_coord(z, dims[2]);
        double v = 0.0;
        for (const auto& e : set)
          if (e.contains(px, py, pz)) v = e.density;
        vol.at(x, y, z) = v;
      }
  return vol;
}

}  // namespace tomo
