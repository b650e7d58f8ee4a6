#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tomoforge/gaussian.hpp"
#include "tomoforge/geometry.hpp"
#include "tomoforge/projector.hpp"
#include "tomoforge/volume.hpp"

namespace tomo {

struct AdamState {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<double> m;
  std::vector<double> v;
  // Optional per-slot learning-rate multipliers, applied periodically
  // (parameter i uses lr * lr_pattern[i % size]).
  std::vector<double> lr_pattern;
};

// Bias-corrected Adam update. A non-finite gradient raises a numeric error
// naming `name` and the offending index; params are untouched in that case.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::string_view name);

// Trainable dense grid standing in for a neural field: rendering is the
// ray-marched projector and queries return the grid itself.
struct VoxelField {
  Volume grid;
};

// Voxel centers of a dims grid covering the same world box as `spacing`
// implies: center(i) = (i + 0.5) * s - dims * s / 2.
Volume query_volume(const VoxelField& field, const Dims3& dims);
Volume query_volume(const GaussianCloud& cloud, const Dims3& dims, const Spacing3& spacing,
                    double cutoff_sigma = 3.0);
// Adds d(sum(upstream * query))/d(params) into grad.
void query_volume_grad(const GaussianCloud& cloud, const Dims3& dims, const Spacing3& spacing,
                       std::span<const double> upstream, std::span<double> grad,
                       double cutoff_sigma = 3.0);

// Trilinear resampling of a volume onto another grid over the same box.
Volume resample_trilinear(const Volume& vol, const Dims3& dims);

Image render(const VoxelField& field, const ConeBeamGeometry& geom, std::size_t view,
             const MarchConfig& cfg = {});
Image render(const GaussianCloud& cloud, const ConeBeamGeometry& geom, std::size_t view,
             const SplatConfig& cfg = {});

// Centers drawn with probability proportional to the (clamped) coarse density
// and jittered uniformly inside their voxel; density = coarse value there;
// isotropic scale = mean distance to the 3 nearest centers. An all-zero coarse
// volume falls back to uniform sampling with density 1e-3.
GaussianCloud init_cloud_from_volume(const Volume& coarse, std::size_t m, std::uint64_t seed);

inline std::size_t default_kernel_count(const Dims3& dims) {
  return std::max<std::size_t>(2000, voxel_count(dims) / 512);
}

// Interface the optimization loop drives. Gradients accumulate between
// zero_grad() and step().
class Representation {
 public:
  virtual ~Representation() = default;

  virtual std::string_view kind() const = 0;
  virtual void render(std::size_t view, std::span<double> out) const = 0;
  virtual void render_backward(std::size_t view, std::span<const double> upstream) = 0;
  virtual Volume query() const = 0;
  virtual void query_backward(std::span<const double> upstream) = 0;
  virtual void zero_grad() = 0;
  virtual void step() = 0;
  // Multiplies the configured learning rates from the next step on.
  virtual void set_lr_scale(double scale) = 0;
  virtual std::span<const double> gradient() const = 0;
  virtual std::span<double> parameters() = 0;
};

struct VoxelFieldOptions {
  MarchConfig march;
  double lr = 0.01;
};

class VoxelFieldModel final : public Representation {
 public:
  VoxelFieldModel(const ConeBeamGeometry& geom, VoxelField init, VoxelFieldOptions opts = {});

  std::string_view kind() const override { return "voxel_field"; }
  void render(std::size_t view, std::span<double> out) const override;
  void render_backward(std::size_t view, std::span<const double> upstream) override;
  Volume query() const override;
  void query_backward(std::span<const double> upstream) override;
  void zero_grad() override;
  void step() override;
  void set_lr_scale(double scale) override { adam_.lr = opts_.lr * scale; }
  std::span<const double> gradient() const override { return grad_.data; }
  std::span<double> parameters() override { return field_.grid.data; }

  const VoxelField& field() const { return field_; }

 private:
  ConeBeamGeometry geom_;
  VoxelField field_;
  VoxelFieldOptions opts_;
  Volume grad_;
  AdamState adam_;
};

struct GaussianCloudOptions {
  SplatConfig splat;
  double query_cutoff_sigma = 3.0;
  // Learning rates per parameter group. Center rate is in mm per step and
  // defaults (when <= 0) to 0.05 of the smallest voxel spacing.
  double lr_density = 0.01;
  double lr_center = 0.0;
  double lr_log_scale = 0.01;
  double lr_rotation = 0.005;
};

class GaussianCloudModel final : public Representation {
 public:
  GaussianCloudModel(const ConeBeamGeometry& geom, GaussianCloud init,
                     GaussianCloudOptions opts = {});

  std::string_view kind() const override { return "gaussian_cloud"; }
  void render(std::size_t view, std::span<double> out) const override;
  void render_backward(std::size_t view, std::span<const double> upstream) override;
  Volume query() const override;
  void query_backward(std::span<const double> upstream) override;
  void zero_grad() override;
  void step() override;  // includes quaternion renormalization
  void set_lr_scale(double scale) override { adam_.lr = scale; }
  std::span<const double> gradient() const override { return grad_; }
  std::span<double> parameters() override { return cloud_.params; }

  const GaussianCloud& cloud() const { return cloud_; }

 private:
  ConeBeamGeometry geom_;
  GaussianCloud cloud_;
  GaussianCloudOptions opts_;
  std::vector<double> grad_;
  AdamState adam_;
};

}  // namespace tomo
