#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tomoforge/gaussian.hpp"
#include "tomoforge/geometry.hpp"
#include "tomoforge/volume.hpp"

namespace tomo {

enum class Interpolation { nearest, trilinear };

struct MarchConfig {
  double step_length = 0.0;  // mm; <= 0 selects half the smallest voxel spacing
  int samples_per_ray_cap = 4096;
  Interpolation interpolation = Interpolation::trilinear;

  double resolved_step(const ConeBeamGeometry& geom) const;
  void validate() const;
};

// Ray-marched line integrals: each ray's [s_near, s_far] chord is split into
// P = ceil(chord / step) equal segments (capped) and sampled at midpoints.
ProjectionStack forward_project(const Volume& vol, const ConeBeamGeometry& geom,
                                const MarchConfig& cfg = {});
void forward_project_view(const Volume& vol, const ConeBeamGeometry& geom, std::size_t view,
                          const MarchConfig& cfg, std::span<double> out);

// Exact transpose of forward_project.
Volume backproject(const ProjectionStack& stack, const ConeBeamGeometry& geom,
                   const MarchConfig& cfg = {});
// Accumulates A_view^T * pixels into `accum` (must match geometry dims).
void backproject_view(std::span<const double> pixels, const ConeBeamGeometry& geom,
                      std::size_t view, const MarchConfig& cfg, Volume& accum);

struct SplatConfig {
  // Footprints are cut at this Mahalanobis radius (no renormalization).
  double cutoff_sigma = 3.0;
};

ProjectionStack splat_project(const GaussianCloud& cloud, const ConeBeamGeometry& geom,
                              const SplatConfig& cfg = {});
void splat_project_view(const GaussianCloud& cloud, const ConeBeamGeometry& geom,
                        std::size_t view, const SplatConfig& cfg, std::span<double> out);

// Gradient of sum(upstream * splat) with respect to every packed cloud
// parameter (same layout as GaussianCloud::params), accumulated into `grad`.
std::vector<double> splat_project_grad(const GaussianCloud& cloud, const ConeBeamGeometry& geom,
                                       const ProjectionStack& upstream,
                                       const SplatConfig& cfg = {});
void splat_project_view_grad(const GaussianCloud& cloud, const ConeBeamGeometry& geom,
                             std::size_t view, std::span<const double> upstream,
                             const SplatConfig& cfg, std::span<double> grad);

// Poisson counts with mean photons * exp(-p), re-logged with counts clamped
// at 1. Deterministic for a given seed.
ProjectionStack add_photon_noise(const ProjectionStack& stack, double photons_per_ray,
                                 std::uint64_t seed);

namespace detail {
// Parallel-beam variants of the splat passes, used by the quadrature oracle
// tests: rays follow the central axis of each view and detector coordinates
// are unmagnified.
void splat_project_view_parallel(const GaussianCloud& cloud, const ConeBeamGeometry& geom,
                                 std::size_t view, const SplatConfig& cfg, std::span<double> out);
void splat_project_view_grad_parallel(const GaussianCloud& cloud, const ConeBeamGeometry& geom,
                                      std::size_t view, std::span<const double> upstream,
                                      const SplatConfig& cfg, std::span<double> grad);
}  // namespace detail

}  // namespace tomo
