#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tomoforge/diffnr.hpp"
#include "tomoforge/geometry.hpp"
#include "tomoforge/volume.hpp"

namespace tomo {

enum class ViewMode : std::uint16_t { uniform = 0, nonuniform = 1 };

// Template geometry with uniform_angles(k_views, 2 pi).
ConeBeamGeometry dense_geometry(const ConeBeamGeometry& tmpl, int k_views);
ProjectionStack synthesize_dense(const Volume& vol, const ConeBeamGeometry& tmpl, int k_views,
                                 const MarchConfig& march = {});

// Uniform: indices floor(i * K / n). Nonuniform: n indices drawn without
// replacement with weights from a wrapped Gaussian whose mean and width are
// drawn per call from the seed. Indices are returned ascending.
std::vector<std::size_t> sample_view_indices(std::size_t k_views, std::size_t n, ViewMode mode,
                                             std::uint64_t seed);
ProjectionStack sample_views(const ProjectionStack& stack, std::size_t n, ViewMode mode,
                             std::uint64_t seed);
// The template geometry restricted to a stack's angles.
ConeBeamGeometry geometry_for(const ConeBeamGeometry& tmpl, const ProjectionStack& stack);

struct RecipeEntry {
  RepresentationKind kind = RepresentationKind::voxel_field;
  int n_views = 12;
  ViewMode mode = ViewMode::uniform;
  double fit_fraction = 0.5;  // in [0.25, 0.5] or exactly 1.0
  std::uint64_t seed = 0;
};

struct CurationConfig {
  int dense_views = 360;     // K
  DiffNrConfig training;     // total_iters is the full budget before scaling
  RepresentationSetup setup;
  bool balance = true;       // trim to an exact 1:1 voxel-field/cloud split
};

struct SlicePair {
  SliceImage corrupted;
  SliceImage clean;
  RepresentationKind kind = RepresentationKind::voxel_field;
  ViewMode mode = ViewMode::uniform;
  std::uint16_t n_views = 0;
  float fit_fraction = 0.0f;
  std::uint64_t seed = 0;
};

// The ground truth is min-max normalized first; clean slices are exact
// extracts of the normalized volume.
std::vector<SlicePair> generate_pairs(const Volume& gt, const ConeBeamGeometry& tmpl,
                                      const std::vector<RecipeEntry>& recipe,
                                      const CurationConfig& cfg = {});

// Records store the view mode in bit 15 of the kind field.
std::vector<std::uint8_t> encode_pairs(const std::vector<SlicePair>& pairs);
std::vector<SlicePair> decode_pairs(std::span<const std::uint8_t> bytes);
void write_pairs(const std::string& path, const std::vector<SlicePair>& pairs);
std::vector<SlicePair> read_pairs(const std::string& path);

}  // namespace tomo
