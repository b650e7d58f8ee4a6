#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "tomoforge/config.hpp"
#include "tomoforge/curation.hpp"
#include "tomoforge/diffnr.hpp"
#include "tomoforge/objectives.hpp"
#include "tomoforge/phantom.hpp"
#include "tomoforge/projector.hpp"

using namespace tomo;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("tomoforge_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

// Runs the CLI with the given arguments; returns its exit status.
int cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" TOMO_CLI "\" " + args + " > \"" +
                          at("stdout.txt") + "\" 2> \"" + at("stderr.txt") + "\"";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string out_text() { return slurp(at("stdout.txt")); }

std::vector<double> csv_values(const std::string& text) {
  std::istringstream in(text);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "psnr,ssim3d,ssim_axial,ssim_coronal,ssim_sagittal");
  std::vector<double> out;
  std::stringstream cells(row);
  std::string cell;
  while (std::getline(cells, cell, ','))
    out.push_back(cell == "inf" ? std::numeric_limits<double>::infinity() : std::strtod(cell.c_str(), nullptr));
  return out;
}

std::vector<double> as_f32(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

struct Fixture {
  Fixture() {
    if (fs::exists(at("gt16.vol"))) return;
    REQUIRE(cli("phantom --dims 16 --out " + at("gt16.vol")) == 0);
    REQUIRE(cli("simulate --volume " + at("gt16.vol") + " --views 8 --out " + at("p16.prj") +
                " --geometry-out " + at("g16.json")) == 0);
  }
};

}  // namespace

TEST_CASE("phantom command") {
  REQUIRE(cli("phantom --kind shepp3d --dims 32 --out " + at("a.vol")) == 0);
  REQUIRE(cli("phantom --kind shepp3d --dims 32 --out " + at("b.vol")) == 0);
  CHECK(slurp(at("a.vol")) == slurp(at("b.vol")));
  const auto v = read_volume(at("a.vol"));
  CHECK(v.at(16, 16, 16) > 0.0);
  CHECK(v.at(0, 0, 0) == 0.0);
  CHECK(v.data == as_f32(shepp_logan_3d({32, 32, 32}).data));

  REQUIRE(cli("phantom --kind ellipsoids --dims 20 24 16 --seed 4 --out " + at("e1.vol")) == 0);
  REQUIRE(cli("phantom --kind ellipsoids --dims 20 24 16 --seed 4 --out " + at("e2.vol")) == 0);
  REQUIRE(cli("phantom --kind ellipsoids --dims 20 24 16 --seed 5 --out " + at("e3.vol")) == 0);
  CHECK(slurp(at("e1.vol")) == slurp(at("e2.vol")));
  CHECK(slurp(at("e1.vol")) != slurp(at("e3.vol")));
  CHECK(read_volume(at("e1.vol")).dims == Dims3{20, 24, 16});

  CHECK(cli("phantom --dims 8 --out " + at("x.vol")) == 1);
  CHECK(slurp(at("stderr.txt")).find(">= 16") != std::string::npos);
  CHECK(cli("phantom --kind cube --out " + at("x.vol")) == 2);
  CHECK(cli("phantom --dims 16 16 --out " + at("x.vol")) == 2);
}

TEST_CASE("simulate command") {
  Fixture f;
  REQUIRE(cli("simulate --volume " + at("gt16.vol") + " --views 12 --out " + at("s1.prj")) == 0);
  REQUIRE(cli("simulate --volume " + at("gt16.vol") + " --views 12 --out " + at("s2.prj")) == 0);
  CHECK(slurp(at("s1.prj")) == slurp(at("s2.prj")));
  const auto p = read_projections(at("s1.prj"));
  REQUIRE(p.n_views == 12);
  for (int i = 1; i < 12; ++i)
    CHECK(p.angles[i] - p.angles[i - 1] == doctest::Approx(std::numbers::pi / 6).epsilon(1e-6));

  auto geom = read_geometry(at("g16.json"));
  geom.angles = uniform_angles(12, 2 * std::numbers::pi);
  const auto gt = read_volume(at("gt16.vol"));
  CHECK(p.data == as_f32(forward_project(gt, geom).data));

  REQUIRE(cli("simulate --volume " + at("gt16.vol") + " --views 12 --photons 1e4 --seed 3 --out " + at("n1.prj")) == 0);
  REQUIRE(cli("simulate --volume " + at("gt16.vol") + " --views 12 --photons 1e4 --seed 3 --out " + at("n2.prj")) == 0);
  CHECK(slurp(at("n1.prj")) == slurp(at("n2.prj")));
  CHECK(slurp(at("n1.prj")) != slurp(at("s1.prj")));

  REQUIRE(cli("simulate --volume " + at("gt16.vol") + " --geometry " + at("g16.json") + " --views 12 --out " + at("s3.prj")) == 0);
  CHECK(slurp(at("s3.prj")) == slurp(at("s1.prj")));
  CHECK(cli("simulate --volume " + at("missing.vol") + " --out " + at("x.prj")) == 1);
  CHECK(slurp(at("stderr.txt")).find("missing.vol") != std::string::npos);
}

TEST_CASE("reconstruct: plain NR, flag semantics and the echo fixer") {
  Fixture f;
  const std::string base = "reconstruct --projections " + at("p16.prj") + " --geometry " + at("g16.json") +
                           " --method gaussnr --iters 30 --kernels 150 --seed 7 ";
  REQUIRE(cli(base + "--lambda-diff 0 --out " + at("r0.vol")) == 0);
  REQUIRE(cli(base + "--out " + at("r1.vol")) == 0);
  CHECK(slurp(at("r0.vol")) == slurp(at("r1.vol")));

  // Same run through the library directly.
  auto geom = read_geometry(at("g16.json"));
  const auto stack = read_projections(at("p16.prj"));
  geom.angles = stack.angles;
  RepresentationSetup setup;
  setup.n_kernels = 150;
  setup.seed = 7;
  auto rep = make_representation(RepresentationKind::gaussian_cloud, stack, geom, setup);
  DiffNrConfig cfg;
  cfg.total_iters = 30;
  cfg.seed = 7;
  cfg.log_every = 30;
  const auto direct = plain_nr_optimize(*rep, stack, geom, cfg);
  CHECK(read_volume(at("r0.vol")).data == as_f32(direct.volume.data));

  const std::string aug = base + "--lambda-diff 0.5 --ell 10 --tau 2 ";
  REQUIRE(cli(aug + "--fixer identity --out " + at("id.vol")) == 0);
  REQUIRE(cli(aug + "--fixer \"exec:" TOMO_ECHO_FIXER "\" --out " + at("echo.vol")) == 0);
  CHECK(slurp(at("id.vol")) == slurp(at("echo.vol")));
  CHECK(slurp(at("id.vol")) != slurp(at("r0.vol")));

  REQUIRE(cli(aug + "--fixer tvdenoise --log " + at("log.csv") + " --log-every 10 --gt " + at("gt16.vol") +
              " --out " + at("tv.vol")) == 0);
  const auto log = slurp(at("log.csv"));
  CHECK(log.rfind("iter,data_loss,tv,ssim3d_term,psnr_vs_gt\n10,", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 4);
  CHECK(csv_values(out_text()).size() == 5);

  CHECK(cli(aug + "--fixer \"exec:" TOMO_ECHO_FIXER " --truncate\" --out " + at("x.vol")) == 1);
  CHECK(slurp(at("stderr.txt")).find("protocol") != std::string::npos);
  CHECK(cli(base + "--lambda-diff 0.5 --out " + at("x.vol")) == 2);
  CHECK(cli(base + "--fixer magic --out " + at("x.vol")) == 2);
  CHECK(cli(base + "--method fbp --out " + at("x.vol")) == 2);
  CHECK(cli("reconstruct --projections " + at("p16.prj") + " --method sart --out " + at("x.vol")) == 2);
  CHECK(cli("reconstruct --projections " + at("p16.prj") + " --dims 20 --method sart --out " + at("x.vol")) == 1);
}

TEST_CASE("reconstruct: seeded runs are bit-reproducible") {
  Fixture f;
  const std::string cmd = "reconstruct --projections " + at("p16.prj") + " --geometry " + at("g16.json") +
                          " --method gaussnr --iters 24 --kernels 120 --seed 11 --lambda-diff 0.5 --ell 8 --tau 2"
                          " --fixer oracle:" + at("gt16.vol") + " --out ";
  REQUIRE(cli(cmd + at("d1.vol")) == 0);
  REQUIRE(cli(cmd + at("d2.vol")) == 0);
  CHECK(slurp(at("d1.vol")) == slurp(at("d2.vol")));
  REQUIRE(cli(cmd + at("d3.vol"), "TOMOFORGE_THREADS=1") == 0);
  CHECK(cli(cmd + at("d4.vol"), "TOMOFORGE_THREADS=x") == 2);
}

TEST_CASE("reconstruct: SART on 64^3 with 60 views") {
  REQUIRE(cli("phantom --dims 64 --out " + at("gt64.vol")) == 0);
  REQUIRE(cli("simulate --volume " + at("gt64.vol") + " --views 60 --out " + at("p64.prj") + " --geometry-out " +
              at("g64.json")) == 0);
  REQUIRE(cli("reconstruct --projections " + at("p64.prj") + " --geometry " + at("g64.json") +
              " --method sart --gt " + at("gt64.vol") + " --metrics " + at("m64.csv") + " --out " + at("s64.vol")) == 0);
  const auto m = csv_values(slurp(at("m64.csv")));
  REQUIRE(m.size() == 5);
  CHECK(m[0] >= 25.0);
  MESSAGE("SART 64^3/60 views PSNR " << m[0]);
}

TEST_CASE("eval command") {
  Fixture f;
  REQUIRE(cli("eval --volume " + at("gt16.vol") + " --gt " + at("gt16.vol")) == 0);
  CHECK(out_text() == "psnr,ssim3d,ssim_axial,ssim_coronal,ssim_sagittal\ninf,1,1,1,1\n");

  REQUIRE(cli("phantom --kind ellipsoids --dims 16 --seed 2 --out " + at("other16.vol")) == 0);
  REQUIRE(cli("eval --volume " + at("other16.vol") + " --gt " + at("gt16.vol")) == 0);
  const auto ab = csv_values(out_text());
  REQUIRE(cli("eval --volume " + at("gt16.vol") + " --gt " + at("other16.vol") + " --out " + at("ba.csv")) == 0);
  const auto ba = csv_values(slurp(at("ba.csv")));
  CHECK(std::abs(ab[1] - ba[1]) <= 1e-9);

  const auto a = read_volume(at("other16.vol"));
  const auto b = read_volume(at("gt16.vol"));
  const auto axes = ssim3d_axes(a, b);
  CHECK(ab[0] == psnr(a, b));
  CHECK(ab[1] == ssim3d(a, b));
  CHECK(ab[2] == axes[0]);
  CHECK(ab[3] == axes[1]);
  CHECK(ab[4] == axes[2]);

  REQUIRE(cli("phantom --dims 20 --out " + at("gt20.vol")) == 0);
  CHECK(cli("eval --volume " + at("gt20.vol") + " --gt " + at("gt16.vol")) == 1);
  CHECK(cli("eval --volume " + at("gt16.vol")) == 2);
}

TEST_CASE("curate command") {
  Fixture f;
  {
    std::ofstream r(at("recipe.json"));
    r << R"({"schema_version": 1, "entries": [
      {"kind": "voxel_field", "views": 6, "mode": "uniform", "fit_fraction": 0.5, "seed": 1},
      {"kind": "gaussian_cloud", "views": 6, "mode": "nonuniform", "fit_fraction": 1.0, "seed": 2}]})";
  }
  const std::string cmd = "curate --gt " + at("gt16.vol") + " --recipe " + at("recipe.json") +
                          " --dense-views 24 --iters 12 --kernels 80 --out ";
  REQUIRE(cli(cmd + at("pairs1.bin")) == 0);
  CHECK(out_text() == "32 pairs\n");
  REQUIRE(cli(cmd + at("pairs2.bin")) == 0);
  CHECK(slurp(at("pairs1.bin")) == slurp(at("pairs2.bin")));
  const auto pairs = read_pairs(at("pairs1.bin"));
  REQUIRE(pairs.size() == 32);
  CHECK(pairs[0].kind == RepresentationKind::voxel_field);
  CHECK(pairs[31].kind == RepresentationKind::gaussian_cloud);
  CHECK(pairs[31].mode == ViewMode::nonuniform);
  const auto bytes = slurp(at("pairs1.bin"));
  CHECK(encode_pairs(pairs) == std::vector<std::uint8_t>(bytes.begin(), bytes.end()));

  {
    std::ofstream r(at("bad.json"));
    r << R"({"schema_version": 1, "entries": [{"kind": "voxel_field", "views": 6, "fit_fraction": 0.5, "colour": 1}]})";
  }
  CHECK(cli("curate --gt " + at("gt16.vol") + " --recipe " + at("bad.json") + " --out " + at("x.bin")) == 1);
  CHECK(slurp(at("stderr.txt")).find("colour") != std::string::npos);
}

TEST_CASE("cleanup") { fs::remove_all(workdir()); }
