#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "tomoforge/geometry.hpp"
#include "tomoforge/representations.hpp"
#include "tomoforge/slice_fixer.hpp"
#include "tomoforge/volume.hpp"

namespace tomo {

enum class AugmentLoss { ssim3d, l1 };

struct DiffNrConfig {
  int total_iters = 3000;     // J
  int ref_interval = 0;       // l; 0 = max(1, round(J * 10000 / 13500))
  int aug_period = 0;         // tau; 0 = 10 for clouds, 20 for voxel fields
  double lambda_diff = 0.5;
  double tv_weight = 0.05;    // multiplies the per-voxel mean TV
  double ssim2d_weight = 0.25;
  // Learning rates decay exponentially to this fraction at the last iteration.
  double lr_final_fraction = 0.1;
  int upsample_width = 0;     // X'; 0 = twice the queried X
  int upsample_height = 0;    // Y'; 0 = twice the queried Y
  std::uint64_t seed = 0;
  AugmentLoss augment_loss = AugmentLoss::ssim3d;
  std::string prompt = "a clean CT slice without streak artifacts";
  int log_every = 100;
  // Volumes with any side above this get TV on a random crop of tv_crop^3.
  int tv_full_limit = 128;
  int tv_crop = 64;

  int resolved_ref_interval() const;
  int resolved_aug_period(std::string_view kind) const;
  void validate() const;
};

struct PseudoReference {
  Volume volume;
  int created_at_iter = 0;
};

struct DiffNrLogRow {
  int iter = 0;
  double data_loss = 0.0;   // mean over the rows's window
  double tv = 0.0;          // last per-voxel mean TV
  double ssim3d_term = -1;  // last augmentation term, -1 before the first
  double psnr_vs_gt = 0.0;  // NaN without ground truth
};

struct DiffNrResult {
  Volume volume;
  int reference_builds = 0;
  int augment_steps = 0;
  std::vector<double> loss_trace;  // total objective per iteration
  std::vector<DiffNrLogRow> log;
  // Augmentation term at each reference-creation iteration, when scheduled.
  std::vector<double> creation_terms;
};

// Query -> per axial slice: upsample, fix, downsample -> restack.
PseudoReference build_pseudo_reference(const Volume& queried, SliceFixer& fixer,
                                       const DiffNrConfig& cfg, const Image& cond_a,
                                       const Image& cond_b, int iter = 0);
PseudoReference build_pseudo_reference(const Representation& rep, SliceFixer& fixer,
                                       const DiffNrConfig& cfg, const Image& cond_a,
                                       const Image& cond_b, int iter = 0);

// The full repair-and-augment loop. `fixer` may be null only when
// lambda_diff == 0. `truth` adds PSNR to the log; `csv` receives log rows.
DiffNrResult diffnr_optimize(Representation& rep, const ProjectionStack& stack,
                             const ConeBeamGeometry& geom, const DiffNrConfig& cfg,
                             SliceFixer* fixer, const Volume* truth = nullptr,
                             std::ostream* csv = nullptr);

DiffNrResult plain_nr_optimize(Representation& rep, const ProjectionStack& stack,
                               const ConeBeamGeometry& geom, DiffNrConfig cfg,
                               const Volume* truth = nullptr, std::ostream* csv = nullptr);

void write_log_header(std::ostream& out);

// Representation construction shared by the CLI, curation and tests.
enum class RepresentationKind { voxel_field, gaussian_cloud };

struct RepresentationSetup {
  VoxelFieldOptions voxel;
  GaussianCloudOptions cloud;
  std::size_t n_kernels = 0;  // 0 = default_kernel_count
  int init_sart_sweeps = 2;   // coarse volume the cloud is seeded from
  std::uint64_t seed = 0;
};

// Voxel fields start at zero. Clouds are seeded from a short clamped SART and
// their densities rescaled by least squares against the measurements.
std::unique_ptr<Representation> make_representation(RepresentationKind kind,
                                                     const ProjectionStack& stack,
                                                     const ConeBeamGeometry& geom,
                                                     const RepresentationSetup& setup = {});

const char* representation_kind_name(RepresentationKind kind);

}  // namespace tomo
