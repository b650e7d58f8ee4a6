#include <numbers>

#include "doctest.h"
#include "test_util.hpp"
#include "tomoforge/classical.hpp"
#include "tomoforge/error.hpp"
#include "tomoforge/objectives.hpp"
#include "tomoforge/phantom.hpp"

using namespace tomo;

namespace {

double residual(const Volume& x, const ProjectionStack& b, const ConeBeamGeometry& g) {
  const auto p = forward_project(x, g);
  double s = 0;
  for (std::size_t i = 0; i < p.data.size(); ++i) s += (b.data[i] - p.data[i]) * (b.data[i] - p.data[i]);
  return s;
}

struct SheppCase {
  ConeBeamGeometry geom;
  Volume truth;
  ProjectionStack data;
};

SheppCase shepp_case(std::size_t views) {
  const Dims3 dims{32, 32, 32};
  SheppCase c{default_geometry(dims, {1, 1, 1}, uniform_angles(views, 2 * std::numbers::pi)),
              shepp_logan_3d(dims), {}};
  c.data = forward_project(c.truth, c.geom);
  return c;
}

}  // namespace

TEST_CASE("sart fixed point at the true volume") {
  const auto g = testing::small_geometry({16, 16, 16}, 6);
  const Volume truth = random_ellipsoids({16, 16, 16}, 4);
  const auto b = forward_project(truth, g);
  SartConfig cfg;
  cfg.n_iterations = 1;
  const Volume x = sart_reconstruct(b, g, cfg, &truth);
  double change = 0;
  for (std::size_t i = 0; i < x.size(); ++i) change = std::max(change, std::abs(x.data[i] - truth.data[i]));
  CHECK(change <= 1e-7);
}

TEST_CASE("a sart sweep never increases the residual on consistent data") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto g = testing::small_geometry({16, 16, 16}, 3 + seed % 5);
    const Volume truth = random_ellipsoids({16, 16, 16}, 100 + seed, 6);
    const auto b = forward_project(truth, g);
    SartConfig cfg;
    cfg.n_iterations = 1;
    cfg.relaxation = seed % 2 ? 1.0 : 0.6;
    cfg.nonneg_clamp = false;
    Volume x = testing::random_volume(truth.dims, seed, 0.0, 0.3);
    double r = residual(x, b, g);
    for (int sweep = 0; sweep < 4; ++sweep) {
      x = sart_reconstruct(b, g, cfg, &x);
      const double next = residual(x, b, g);
      CAPTURE(seed);
      CHECK(next <= r * (1 + 1e-12));
      r = next;
    }
  }
}

TEST_CASE("sart and asd-pocs on Shepp-Logan") {
  const auto dense = shepp_case(60);
  const auto sparse = shepp_case(12);
  const Volume x60 = sart_reconstruct(dense.data, dense.geom);
  const Volume x12 = sart_reconstruct(sparse.data, sparse.geom);
  const double p60 = psnr(x60, dense.truth), p12 = psnr(x12, sparse.truth);
  MESSAGE("SART PSNR 60 views " << p60 << " dB, 12 views " << p12 << " dB");
  CHECK(p60 >= 25.0);
  CHECK(p12 < p60);

  const Volume tv12 = asdpocs_reconstruct(sparse.data, sparse.geom);
  SsimConfig sc;
  sc.dynamic_range = 1.0;
  const double s_sart = ssim3d(x12, sparse.truth, sc), s_pocs = ssim3d(tv12, sparse.truth, sc);
  MESSAGE("12-view SSIM SART " << s_sart << ", ASD-POCS " << s_pocs);
  CHECK(s_pocs >= s_sart);
  CHECK(tv3d(tv12) <= tv3d(x12));

  AsdPocsConfig plain;
  plain.n_tv_steps = 0;
  CHECK(asdpocs_reconstruct(sparse.data, sparse.geom, plain).data == x12.data);
  CHECK(sart_reconstruct(sparse.data, sparse.geom).data == x12.data);
}

TEST_CASE("solver configuration and shape errors") {
  const auto g = testing::small_geometry({8, 8, 8}, 2);
  const ProjectionStack b(2, g.detector_rows, g.detector_cols, g.angles);
  SartConfig bad;
  bad.relaxation = 2.5;
  CHECK_THROWS_AS(sart_reconstruct(b, g, bad), Error);
  AsdPocsConfig badp;
  badp.alpha_reduction = 1.0;
  CHECK_THROWS_AS(asdpocs_reconstruct(b, g, badp), Error);
  try {
    sart_reconstruct(ProjectionStack(1, 3, 3, {0.0}), g);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::shape);
  }
}
