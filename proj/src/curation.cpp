#include "tomoforge/curation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "binary_io.hpp"
#include "tomoforge/error.hpp"

namespace tomo {

ConeBeamGeometry dense_geometry(const ConeBeamGeometry& tmpl, int k_views) {
  if (k_views < 1) fail(ErrorCode::config, "synthesize_dense: k_views must be >= 1");
  ConeBeamGeometry g = tmpl;
  g.angles = uniform_angles(static_cast<std::size_t>(k_views), 2.0 * std::numbers::pi);
  return g;
}

ProjectionStack synthesize_dense(const Volume& vol, const ConeBeamGeometry& tmpl, int k_views,
                                 const MarchConfig& march) {
  return forward_project(vol, dense_geometry(tmpl, k_views), march);
}

std::vector<std::size_t> sample_view_indices(std::size_t k_views, std::size_t n, ViewMode mode,
                                             std::uint64_t seed) {
  if (n < 1) fail(ErrorCode::config, "sample_views: n must be >= 1");
  if (n > k_views)
    fail(ErrorCode::config, "sample_views: cannot draw " + std::to_string(n) + " of " +
                                std::to_string(k_views) + " views");
  std::vector<std::size_t> out;
  out.reserve(n);
  if (mode == ViewMode::uniform) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(i * k_views / n);
    return out;
  }
  std::mt19937_64 rng(seed);
  const double two_pi = 2.0 * std::numbers::pi;
  const double mu = std::uniform_real_distribution<double>(0.0, two_pi)(rng);
  const double sigma =
      std::uniform_real_distribution<double>(std::numbers::pi / 8, std::numbers::pi / 3)(rng);
  std::vector<double> w(k_views);
  for (std::size_t i = 0; i < k_views; ++i) {
    const double theta = two_pi * static_cast<double>(i) / static_cast<double>(k_views);
    double density = 0.0;
    for (int wrap = -2; wrap <= 2; ++wrap) {
      const double d = theta - mu + wrap * two_pi;
      density += std::exp(-d * d / (2.0 * sigma * sigma));
    }
    w[i] = density;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t draw = 0; draw < n; ++draw) {
    double total = 0.0;
    for (double v : w) total += v;
    double u = unit(rng) * total;
    std::size_t pick = k_views;
    for (std::size_t i = 0; i < k_views; ++i) {
      if (w[i] <= 0.0) continue;
      pick = i;
      if (u < w[i]) break;
      u -= w[i];
    }
    out.push_back(pick);
    w[pick] = 0.0;
  }
  std::sort(out.begin(), out.end());
  return out;
}

ProjectionStack sample_views(const ProjectionStack& stack, std::size_t n, ViewMode mode,
                             std::uint64_t seed) {
  const auto idx = sample_view_indices(static_cast<std::size_t>(stack.n_views), n, mode, seed);
  std::vector<double> angles;
  for (std::size_t i : idx) angles.push_back(stack.angles[i]);
  ProjectionStack out(static_cast<int>(idx.size()), stack.rows, stack.cols, angles);
  const std::size_t npix = static_cast<std::size_t>(stack.rows) * stack.cols;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto src = stack.view(static_cast<int>(idx[k]));
    std::copy(src.begin(), src.end(), out.data.begin() + k * npix);
  }
  return out;
}

ConeBeamGeometry geometry_for(const ConeBeamGeometry& tmpl, const ProjectionStack& stack) {
  if (stack.rows != tmpl.detector_rows || stack.cols != tmpl.detector_cols)
    fail(ErrorCode::shape, "projection stack detector does not match the geometry");
  ConeBeamGeometry g = tmpl;
  g.angles = stack.angles;
  g.validate();
  return g;
}

namespace {

void check_entry(const RecipeEntry& e) {
  const bool partial = e.fit_fraction >= 0.25 && e.fit_fraction <= 0.5;
  if (!partial && e.fit_fraction != 1.0)
    fail(ErrorCode::config, "curation: fit fraction must lie in [0.25, 0.5] or equal 1.0");
  if (e.n_views < 1 || e.n_views > 65535) fail(ErrorCode::config, "curation: bad view count");
}

}  // namespace

std::vector<SlicePair> generate_pairs(const Volume& gt_in, const ConeBeamGeometry& tmpl,
                                      const std::vector<RecipeEntry>& recipe,
                                      const CurationConfig& cfg) {
  if (recipe.empty()) fail(ErrorCode::config, "curation: empty recipe");
  Volume gt = gt_in;
  normalize_minmax(gt);
  for (const auto& e : recipe) check_entry(e);
  if (gt.dims != tmpl.volume_dims)
    fail(ErrorCode::shape, "curation: volume dims do not match the geometry");
  const ProjectionStack dense = synthesize_dense(gt, tmpl, cfg.dense_views);

  std::vector<SlicePair> voxel_pairs, cloud_pairs;
  for (const auto& e : recipe) {
    const ProjectionStack sub =
        sample_views(dense, static_cast<std::size_t>(e.n_views), e.mode, e.seed);
    const ConeBeamGeometry g = geometry_for(tmpl, sub);
    RepresentationSetup setup = cfg.setup;
    setup.seed = e.seed;
    auto rep = make_representation(e.kind, sub, g, setup);
    DiffNrConfig train = cfg.training;
    train.seed = e.seed;
    train.total_iters = std::max(1, static_cast<int>(std::lround(train.total_iters * e.fit_fraction)));
    train.ref_interval = 0;
    const Volume recon = plain_nr_optimize(*rep, sub, g, train).volume;
    auto& sink = e.kind == RepresentationKind::voxel_field ? voxel_pairs : cloud_pairs;
    for (int z = 0; z < gt.dims[2]; ++z) {
      SlicePair p;
      p.corrupted = extract_slice(recon, SliceAxis::axial, z);
      p.clean = extract_slice(gt, SliceAxis::axial, z);
      p.kind = e.kind;
      p.mode = e.mode;
      p.n_views = static_cast<std::uint16_t>(e.n_views);
      p.fit_fraction = static_cast<float>(e.fit_fraction);
      p.seed = e.seed;
      sink.push_back(std::move(p));
    }
  }
  if (cfg.balance) {
    if (voxel_pairs.empty() || cloud_pairs.empty())
      fail(ErrorCode::config, "curation: a balanced recipe needs both voxel-field and cloud entries");
    const std::size_t n = std::min(voxel_pairs.size(), cloud_pairs.size());
    voxel_pairs.resize(n);
    cloud_pairs.resize(n);
  }
  // Restore recipe order: entries of each kind keep their relative order.
  std::vector<SlicePair> out;
  out.reserve(voxel_pairs.size() + cloud_pairs.size());
  std::size_t vi = 0, ci = 0;
  for (const auto& e : recipe) {
    auto& src = e.kind == RepresentationKind::voxel_field ? voxel_pairs : cloud_pairs;
    auto& pos = e.kind == RepresentationKind::voxel_field ? vi : ci;
    for (int z = 0; z < gt.dims[2] && pos < src.size(); ++z) out.push_back(std::move(src[pos++]));
  }
  return out;
}

std::vector<std::uint8_t> encode_pairs(const std::vector<SlicePair>& pairs) {
  detail::ByteWriter w;
  w.magic("TOMOPAIR");
  w.put(static_cast<std::uint32_t>(pairs.size()));
  for (const auto& p : pairs) {
    if (p.corrupted.width != p.clean.width || p.corrupted.height != p.clean.height)
      fail(ErrorCode::shape, "pair file: corrupted and clean slices differ in size");
    w.put(static_cast<std::uint32_t>(p.clean.width));
    w.put(static_cast<std::uint32_t>(p.clean.height));
    for (double v : p.corrupted.data) w.f32(v);
    for (double v : p.clean.data) w.f32(v);
    std::uint16_t kind = p.kind == RepresentationKind::voxel_field ? 0 : 1;
    if (p.mode == ViewMode::nonuniform) kind |= 0x8000;
    w.put(kind);
    w.put(p.n_views);
    w.put(p.fit_fraction);
    w.put(p.seed);
  }
  return std::move(w.bytes());
}

std::vector<SlicePair> decode_pairs(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "pair file");
  r.expect_magic("TOMOPAIR");
  const auto count = r.get<std::uint32_t>();
  std::vector<SlicePair> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    SlicePair p;
    const int w = static_cast<int>(r.get<std::uint32_t>());
    const int h = static_cast<int>(r.get<std::uint32_t>());
    if (static_cast<std::uint64_t>(w) * h * 8 > r.remaining())
      fail(ErrorCode::io, "pair file: truncated");
    p.corrupted = SliceImage(w, h, SliceAxis::axial, 0);
    p.clean = SliceImage(w, h, SliceAxis::axial, 0);
    for (double& v : p.corrupted.data) v = r.f32();
    for (double& v : p.clean.data) v = r.f32();
    const auto kind = r.get<std::uint16_t>();
    if ((kind & 0x7fff) > 1) fail(ErrorCode::io, "pair file: unknown representation kind");
    p.kind = (kind & 0x7fff) == 0 ? RepresentationKind::voxel_field : RepresentationKind::gaussian_cloud;
    p.mode = (kind & 0x8000) ? ViewMode::nonuniform : ViewMode::uniform;
    p.n_views = r.get<std::uint16_t>();
    p.fit_fraction = r.get<float>();
    p.seed = r.get<std::uint64_t>();
    out.push_back(std::move(p));
  }
  r.expect_end();
  // Axial index is implied by position within a run of identical metadata.
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool continues = i > 0 && out[i - 1].kind == out[i].kind && out[i - 1].mode == out[i].mode &&
                           out[i - 1].n_views == out[i].n_views &&
                           out[i - 1].fit_fraction == out[i].fit_fraction && out[i - 1].seed == out[i].seed;
    const int index = continues ? out[i - 1].clean.index + 1 : 0;
    out[i].corrupted.index = out[i].clean.index = index;
  }
  return out;
}

void write_pairs(const std::string& path, const std::vector<SlicePair>& pairs) {
  write_file_bytes(path, encode_pairs(pairs));
}

std::vector<SlicePair> read_pairs(const std::string& path) {
  return decode_pairs(read_file_bytes(path));
}

}  // namespace tomo
