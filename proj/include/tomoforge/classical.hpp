#pragma once

#include "tomoforge/geometry.hpp"
#include "tomoforge/projector.hpp"
#include "tomoforge/volume.hpp"

namespace tomo {

struct SartConfig {
  int n_iterations = 20;
  double relaxation = 1.0;  // in (0, 2]
  bool nonneg_clamp = true;
  MarchConfig march;
  void validate() const;
};

struct AsdPocsConfig {
  SartConfig sart;
  int n_tv_steps = 20;
  double tv_step_init = 0.002;  // alpha
  double alpha_reduction = 0.95;
  double ratio_cap = 0.95;  // r_max
  void validate() const;
};

// Views are visited in ascending angle order. `init` defaults to zeros.
Volume sart_reconstruct(const ProjectionStack& stack, const ConeBeamGeometry& geom,
                        const SartConfig& cfg = {}, const Volume* init = nullptr);
Volume asdpocs_reconstruct(const ProjectionStack& stack, const ConeBeamGeometry& geom,
                           const AsdPocsConfig& cfg = {}, const Volume* init = nullptr);

}  // namespace tomo
