#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>

#include "doctest.h"
#include "test_util.hpp"
#include "tomoforge/curation.hpp"
#include "tomoforge/error.hpp"
#include "tomoforge/phantom.hpp"

using namespace tomo;

namespace {

double circular_variance(const std::vector<double>& angles) {
  std::complex<double> s = 0;
  for (double a : angles) s += std::polar(1.0, a);
  return 1.0 - std::abs(s) / static_cast<double>(angles.size());
}

ConeBeamGeometry small_template(const Dims3& dims) {
  return default_geometry(dims, {1, 1, 1}, {0.0});
}

}  // namespace

TEST_CASE("dense synthesis lays views on a full circle") {
  const Dims3 dims{16, 16, 16};
  const auto vol = shepp_logan_3d(dims);
  const auto tmpl = small_template(dims);
  const auto one = synthesize_dense(vol, tmpl, 1);
  REQUIRE(one.n_views == 1);
  CHECK(one.angles[0] == 0.0);
  const auto g = dense_geometry(tmpl, 360);
  for (int i = 0; i < 360; ++i) CHECK(g.angles[i] == doctest::Approx(i * std::numbers::pi / 180).epsilon(1e-12));
  CHECK_THROWS_AS(dense_geometry(tmpl, 0), Error);
}

TEST_CASE("uniform sampling strides, subsets match the dense stack bit-exactly") {
  const Dims3 dims{16, 16, 16};
  const auto dense = synthesize_dense(shepp_logan_3d(dims), small_template(dims), 40);
  const auto all = sample_view_indices(40, 40, ViewMode::uniform, 0);
  for (std::size_t i = 0; i < 40; ++i) CHECK(all[i] == i);
  const auto half = sample_view_indices(40, 20, ViewMode::uniform, 0);
  for (std::size_t i = 0; i < 20; ++i) CHECK(half[i] == 2 * i);

  for (ViewMode mode : {ViewMode::uniform, ViewMode::nonuniform}) {
    const auto idx = sample_view_indices(40, 7, mode, 5);
    const auto sub = sample_views(dense, 7, mode, 5);
    REQUIRE(sub.n_views == 7);
    for (int k = 0; k < 7; ++k) {
      CHECK(sub.angles[k] == dense.angles[idx[k]]);
      const auto a = sub.view(k);
      const auto b = dense.view(static_cast<int>(idx[k]));
      CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
  }
  CHECK_THROWS_AS(sample_views(dense, 41, ViewMode::uniform, 0), Error);
  try {
    sample_views(dense, 41, ViewMode::nonuniform, 0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::config);
  }
}

TEST_CASE("nonuniform sampling is seeded, distinct and clustered") {
  const std::size_t k = 360, n = 12;
  const auto a = sample_view_indices(k, n, ViewMode::nonuniform, 77);
  CHECK(a == sample_view_indices(k, n, ViewMode::nonuniform, 77));
  CHECK(a != sample_view_indices(k, n, ViewMode::nonuniform, 78));
  auto angles_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<double> out;
    for (std::size_t i : idx) out.push_back(2 * std::numbers::pi * static_cast<double>(i) / k);
    return out;
  };
  const double uniform_cv = circular_variance(angles_of(sample_view_indices(k, n, ViewMode::uniform, 0)));
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto idx = sample_view_indices(k, n, ViewMode::nonuniform, seed);
    REQUIRE(idx.size() == n);
    CHECK(std::adjacent_find(idx.begin(), idx.end(), [](auto x, auto y) { return x >= y; }) == idx.end());
    CHECK(circular_variance(angles_of(idx)) < uniform_cv);
  }
}

TEST_CASE("the phantom is already normalized") {
  auto sl = shepp_logan_3d({16, 16, 16});
  const auto before = sl.data;
  normalize_minmax(sl);
  CHECK(sl.data == before);
}

TEST_CASE("pairs balance 1:1, carry metadata and keep GT slices exact") {
  const Dims3 dims{16, 16, 16};
  const auto gt = shepp_logan_3d(dims);
  const auto tmpl = small_template(dims);
  CurationConfig cfg;
  cfg.dense_views = 36;
  cfg.training.total_iters = 40;
  cfg.setup.n_kernels = 300;
  std::vector<RecipeEntry> recipe;
  for (int i = 0; i < 4; ++i) {
    recipe.push_back({RepresentationKind::voxel_field, 6, ViewMode::uniform, 0.25, std::uint64_t(i)});
    recipe.push_back({RepresentationKind::gaussian_cloud, 6, ViewMode::nonuniform, 0.5, std::uint64_t(10 + i)});
  }
  const auto pairs = generate_pairs(gt, tmpl, recipe, cfg);
  REQUIRE(pairs.size() == 8u * 16u);
  std::size_t voxel = 0;
  for (const auto& p : pairs) voxel += p.kind == RepresentationKind::voxel_field;
  CHECK(voxel * 2 == pairs.size());

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const auto ref = extract_slice(gt, SliceAxis::axial, static_cast<int>(i % 16));
    CHECK(p.clean.data == ref.data);
    CHECK(p.n_views == 6);
  }
  CHECK(pairs[0].seed == 0);
  CHECK(pairs[16].kind == RepresentationKind::gaussian_cloud);
  CHECK(pairs[16].mode == ViewMode::nonuniform);
  CHECK(pairs[16].fit_fraction == 0.5f);

  // Regenerating one entry from its metadata reproduces its slices.
  const auto again = generate_pairs(gt, tmpl, {recipe[1]}, [&] {
    auto c = cfg;
    c.balance = false;
    return c;
  }());
  REQUIRE(again.size() == 16);
  for (int z = 0; z < 16; ++z) CHECK(again[z].corrupted.data == pairs[16 + z].corrupted.data);

  const std::string path = testing::temp_path("pairs.tomopair");
  write_pairs(path, pairs);
  const auto back = read_pairs(path);
  std::remove(path.c_str());
  REQUIRE(back.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(back[i].kind == pairs[i].kind);
    CHECK(back[i].mode == pairs[i].mode);
    CHECK(back[i].n_views == pairs[i].n_views);
    CHECK(back[i].fit_fraction == pairs[i].fit_fraction);
    CHECK(back[i].seed == pairs[i].seed);
    CHECK(back[i].clean.index == static_cast<int>(i % 16));
    for (std::size_t j = 0; j < pairs[i].clean.data.size(); ++j) {
      CHECK(back[i].clean.data[j] == static_cast<double>(static_cast<float>(pairs[i].clean.data[j])));
      CHECK(back[i].corrupted.data[j] == static_cast<double>(static_cast<float>(pairs[i].corrupted.data[j])));
    }
  }
}

TEST_CASE("unbalanced recipes are trimmed to the minority kind") {
  const Dims3 dims{16, 16, 16};
  const auto gt = shepp_logan_3d(dims);
  CurationConfig cfg;
  cfg.dense_views = 24;
  cfg.training.total_iters = 8;
  cfg.setup.n_kernels = 100;
  std::vector<RecipeEntry> recipe{{RepresentationKind::voxel_field, 6, ViewMode::uniform, 1.0, 1},
                                  {RepresentationKind::voxel_field, 6, ViewMode::uniform, 1.0, 2},
                                  {RepresentationKind::gaussian_cloud, 6, ViewMode::uniform, 1.0, 3}};
  const auto pairs = generate_pairs(gt, small_template(dims), recipe, cfg);
  CHECK(pairs.size() == 32);
  std::size_t voxel = 0;
  for (const auto& p : pairs) voxel += p.kind == RepresentationKind::voxel_field;
  CHECK(voxel == 16);

  CHECK_THROWS_AS(generate_pairs(gt, small_template(dims), {recipe[0]}, cfg), Error);
  auto bad = recipe;
  bad[0].fit_fraction = 0.7;
  CHECK_THROWS_AS(generate_pairs(gt, small_template(dims), bad, cfg), Error);
  CHECK_THROWS_AS(generate_pairs(gt, small_template(dims), {}, cfg), Error);
}

TEST_CASE("pair file rejects corruption") {
  SlicePair p;
  p.corrupted = SliceImage(3, 2, SliceAxis::axial, 0);
  p.clean = SliceImage(3, 2, SliceAxis::axial, 0);
  auto bytes = encode_pairs({p});
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_pairs(bad), Error);
  bytes.pop_back();
  CHECK_THROWS_AS(decode_pairs(bytes), Error);
}
