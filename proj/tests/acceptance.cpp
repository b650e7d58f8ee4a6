// Acceptance suite: one PASS/FAIL line per criterion. Run with criterion
// numbers as arguments to select a subset. "--allow-fail N" still reports N
// but keeps it out of the exit status.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tomoforge/classical.hpp"
#include "tomoforge/config.hpp"
#include "tomoforge/curation.hpp"
#include "tomoforge/diffnr.hpp"
#include "tomoforge/error.hpp"
#include "tomoforge/gaussian.hpp"
#include "tomoforge/objectives.hpp"
#include "tomoforge/phantom.hpp"
#include "tomoforge/projector.hpp"
#include "tomoforge/slice_fixer.hpp"

using namespace tomo;
namespace fs = std::filesystem;
using std::numbers::pi;

namespace {

// ---- pinned tolerances and instance parameters -----------------------------

constexpr double kAdjointTol = 1e-4;
constexpr double kAdjointSeconds = 30;
constexpr double kGradTol = 1e-3;
constexpr double kGradSeconds = 120;
constexpr double kQuadratureTol = 1e-3;
constexpr double kMetricTol = 1e-9;
constexpr double kDiffNrGainDb = 1.0;
constexpr double kDiffNrSeconds = 600;
constexpr double kOracleSigma = 0.05;

// Desk-scale DiffNR instance shared by criteria 6-8.
constexpr int kInstanceSize = 64;
constexpr std::size_t kInstanceViews = 12;
constexpr int kIters = 1000;
constexpr int kRefInterval = 100;
constexpr int kAugPeriod = 2;
constexpr std::uint64_t kOracleSeed = 1;
const std::vector<double> kLambdaSweep{0.3, 0.5, 0.7, 1.0, 1.5};

// ---- reporting -------------------------------------------------------------

std::vector<int> failed;
std::set<int> allowed;

void report(int id, bool pass, const std::string& detail, double seconds) {
  std::printf("criterion %2d: %s  %s  [%.1f s]\n", id, pass ? "PASS" : "FAIL", detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) failed.push_back(id);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <typename... T>
std::string fmtn(const char* f, T... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double rel(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-300});
}

// Relative error over coordinates whose derivative is not negligible.
struct FdStat {
  double worst = 0;
  int checked = 0;
  void add(double analytic, double fd, double floor) {
    if (std::max(std::abs(analytic), std::abs(fd)) < floor) return;
    worst = std::max(worst, rel(analytic, fd));
    ++checked;
  }
};

std::mt19937_64 rng_for(std::uint64_t seed) { return std::mt19937_64(seed); }

GaussianCloud random_cloud(std::size_t m, std::uint64_t seed, double extent, double s_lo, double s_hi) {
  auto rng = rng_for(seed);
  std::uniform_real_distribution<double> u(0, 1);
  GaussianCloud c;
  for (std::size_t k = 0; k < m; ++k)
    c.add(0.2 + u(rng), {(u(rng) - 0.5) * extent, (u(rng) - 0.5) * extent, (u(rng) - 0.5) * extent},
          {std::log(s_lo + (s_hi - s_lo) * u(rng)), std::log(s_lo + (s_hi - s_lo) * u(rng)),
           std::log(s_lo + (s_hi - s_lo) * u(rng))},
          {u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5});
  return c;
}

Volume random_volume(const Dims3& d, std::uint64_t seed, double lo = 0, double hi = 1) {
  auto rng = rng_for(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Volume v(d);
  for (double& x : v.data) x = u(rng);
  return v;
}

// ---- criterion 1 -----------------------------------------------------------

void criterion_adjoint() {
  const auto t0 = std::chrono::steady_clock::now();
  ConeBeamGeometry g;
  g.volume_dims = {32, 32, 32};
  g.voxel_size = {1, 1, 1};
  g.dist_source_origin = 150;
  g.dist_source_detector = 250;
  g.detector_rows = g.detector_cols = 32;
  g.detector_pixel_size = {2.2, 2.2};
  g.angles = uniform_angles(8, 2 * pi);
  double worst = 0;
  for (int draw = 0; draw < 20; ++draw) {
    const auto x = random_volume(g.volume_dims, 100 + draw, -1, 1);
    ProjectionStack y(8, 32, 32, g.angles);
    auto rng = rng_for(200 + draw);
    std::uniform_real_distribution<double> u(-1, 1);
    for (double& v : y.data) v = u(rng);
    const auto ax = forward_project(x, g);
    const auto aty = backproject(y, g);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y.data.size(); ++i) lhs += ax.data[i] * y.data[i];
    for (std::size_t i = 0; i < x.data.size(); ++i) rhs += x.data[i] * aty.data[i];
    worst = std::max(worst, std::abs(lhs - rhs) / std::abs(lhs));
  }
  const double s = seconds_since(t0);
  report(1, worst <= kAdjointTol && s < kAdjointSeconds,
         fmtn("max |<Ax,y>-<x,A'y>|/|<Ax,y>| = %.2e over 20 draws (tol %.0e, < %.0f s)", worst, kAdjointTol,
              kAdjointSeconds),
         s);
}

// ---- criterion 2 -----------------------------------------------------------

double view_l1(Representation& model, const ProjectionStack& target, bool backward) {
  const std::size_t npix = target.pixels_per_view();
  std::vector<double> img(npix), grad(npix);
  double loss = 0;
  for (int v = 0; v < target.n_views; ++v) {
    model.render(static_cast<std::size_t>(v), img);
    std::fill(grad.begin(), grad.end(), 0.0);
    loss += l1_loss(img, target.view(v), grad);
    if (backward) model.render_backward(static_cast<std::size_t>(v), grad);
  }
  return loss;
}

template <typename F>
void fd_params(std::span<double> params, const std::vector<double>& grad, const std::vector<std::size_t>& idx,
               double h, F&& f, FdStat& stat, double floor) {
  for (std::size_t i : idx) {
    const double keep = params[i];
    params[i] = keep + h;
    const double fp = f();
    params[i] = keep - h;
    const double fm = f();
    params[i] = keep;
    stat.add(grad[i], (fp - fm) / (2 * h), floor);
  }
}

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dims3 dims{16, 16, 16};
  auto g = default_geometry(dims, {1, 1, 1}, uniform_angles(4, 2 * pi));
  const auto target = forward_project(random_volume(dims, 30), g);
  std::vector<std::string> parts;
  bool pass = true;

  {  // splat parameters, through the cloud model
    GaussianCloudOptions o;
    o.splat.cutoff_sigma = 50.0;
    GaussianCloudModel model(g, random_cloud(3, 31, 8.0, 1.0, 2.5), o);
    model.zero_grad();
    view_l1(model, target, true);
    const std::vector<double> grad(model.gradient().begin(), model.gradient().end());
    std::vector<std::size_t> idx(grad.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    FdStat st;
    fd_params(model.parameters(), grad, idx, 1e-5, [&] { return view_l1(model, target, false); }, st, 1e-6);
    parts.push_back(fmtn("splat %.1e (%d)", st.worst, st.checked));
    pass &= st.worst <= kGradTol;
  }
  {  // voxel densities
    VoxelFieldModel model(g, VoxelField{random_volume(dims, 32, 0.0, 0.5)});
    model.zero_grad();
    view_l1(model, target, true);
    const std::vector<double> grad(model.gradient().begin(), model.gradient().end());
    auto rng = rng_for(33);
    std::vector<std::size_t> idx;
    for (int k = 0; k < 40; ++k)
      idx.push_back((4 + rng() % 8) + 16 * (4 + rng() % 8) + 256 * (4 + rng() % 8));
    FdStat st;
    fd_params(model.parameters(), grad, idx, 1e-6, [&] { return view_l1(model, target, false); }, st, 1e-6);
    parts.push_back(fmtn("voxel %.1e (%d)", st.worst, st.checked));
    pass &= st.worst <= kGradTol;
  }
  {  // SSIM2D
    Image a(16, 16), b(16, 16);
    auto rng = rng_for(40);
    std::uniform_real_distribution<double> u(0, 1);
    for (double& v : a.data) v = u(rng);
    for (double& v : b.data) v = u(rng);
    SsimConfig sc;
    sc.dynamic_range = 1.0;
    std::vector<double> grad(a.data.size(), 0.0);
    ssim2d(a, b, sc, grad);
    std::vector<std::size_t> idx(a.data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    FdStat st;
    fd_params(a.data, grad, idx, 1e-6, [&] { return ssim2d(a, b, sc); }, st, 1e-7);
    parts.push_back(fmtn("ssim2d %.1e (%d)", st.worst, st.checked));
    pass &= st.worst <= kGradTol;
  }
  {  // SSIM3D
    auto a = random_volume({14, 13, 12}, 41), b = random_volume({14, 13, 12}, 42);
    SsimConfig sc;
    sc.dynamic_range = 1.0;
    std::vector<double> grad(a.data.size(), 0.0);
    ssim3d(a, b, sc, grad);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < a.data.size(); i += 5) idx.push_back(i);
    FdStat st;
    fd_params(a.data, grad, idx, 1e-6, [&] { return ssim3d(a, b, sc); }, st, 1e-8);
    parts.push_back(fmtn("ssim3d %.1e (%d)", st.worst, st.checked));
    pass &= st.worst <= kGradTol;
  }
  {  // TV3D
    auto a = random_volume(dims, 43);
    std::vector<double> grad(a.data.size(), 0.0);
    tv3d(a, grad);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < a.data.size(); i += 7) idx.push_back(i);
    FdStat st;
    fd_params(a.data, grad, idx, 1e-6, [&] { return tv3d(a); }, st, 1e-6);
    parts.push_back(fmtn("tv3d %.1e (%d)", st.worst, st.checked));
    pass &= st.worst <= kGradTol;
  }
  const double s = seconds_since(t0);
  std::string detail = "max rel FD error:";
  for (const auto& p : parts) detail += " " + p;
  report(2, pass && s < kGradSeconds, detail + fmtn(" (tol %.0e)", kGradTol), s);
}

// ---- criterion 3 -----------------------------------------------------------

double parallel_splat_error(const GaussianCloud& cloud, const ConeBeamGeometry& g) {
  double worst = 0, peak = 0;
  for (std::size_t v = 0; v < g.n_views(); ++v) {
    std::vector<double> img(g.pixels_per_view(), 0.0);
    detail::splat_project_view_parallel(cloud, g, v, SplatConfig{50.0}, img);
    const auto fr = view_frame(g, v);
    for (int r = 0; r < g.detector_rows; ++r)
      for (int c = 0; c < g.detector_cols; ++c) {
        const double uu = (c - 0.5 * (g.detector_cols - 1)) * g.detector_pixel_size[0];
        const double ww = (r - 0.5 * (g.detector_rows - 1)) * g.detector_pixel_size[1];
        const Vec3 o = uu * fr.axis_u + ww * fr.axis_v;
        const double ref = testing::oracle_line_integral(cloud, o, fr.central_axis, -40, 40, 160);
        peak = std::max(peak, ref);
        worst = std::max(worst, std::abs(img[static_cast<std::size_t>(r) * g.detector_cols + c] - ref));
      }
  }
  return worst / peak;
}

void criterion_quadrature() {
  const auto t0 = std::chrono::steady_clock::now();
  auto g = default_geometry({16, 16, 16}, {1, 1, 1}, {0.0, 0.7, 2.0, 4.4});
  g.detector_rows = g.detector_cols = 25;
  g.detector_pixel_size = {1.0, 1.0};
  GaussianCloud single;
  single.add(1.0, {0.5, -0.3, 0.2}, {std::log(2.0), std::log(1.2), std::log(2.8)}, {0.9, 0.3, -0.2, 0.1});
  const double e1 = parallel_splat_error(single, g);
  const double e2 = parallel_splat_error(random_cloud(5, 31, 10.0, 1.0, 3.0), g);
  report(3, e1 <= kQuadratureTol && e2 <= kQuadratureTol,
         fmtn("max error / peak: single %.1e, 5-kernel mixture %.1e (tol %.0e)", e1, e2, kQuadratureTol),
         seconds_since(t0));
}

// ---- criterion 4 -----------------------------------------------------------

void criterion_metrics() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto a = random_volume({20, 18, 16}, 50);
  auto b = a;
  auto rng = rng_for(51);
  std::normal_distribution<double> n(0, 0.05);
  for (double& v : b.data) v += n(rng);
  Image ia(24, 20);
  for (std::size_t i = 0; i < ia.data.size(); ++i) ia.data[i] = a.data[i];

  const double self2 = ssim2d(ia, ia);
  const double self3 = ssim3d(a, a);
  double scale_dev = 0;
  for (double k : {0.01, 3.0, 250.0}) {
    Volume ka = a, kb = b;
    for (double& v : ka.data) v *= k;
    for (double& v : kb.data) v *= k;
    scale_dev = std::max(scale_dev, std::abs(psnr(kb, ka) - psnr(b, a)));
  }
  SsimConfig sc;
  sc.dynamic_range = 1.0;
  double oracle_dev = 0;
  for (const auto& d : std::vector<Dims3>{{20, 18, 16}, {16, 16, 16}, {12, 13, 14}}) {
    const auto x = random_volume(d, 52), y = random_volume(d, 53);
    double axes_sum = 0;
    for (SliceAxis ax : {SliceAxis::axial, SliceAxis::coronal, SliceAxis::sagittal}) {
      const int count = ax == SliceAxis::axial ? d[2] : (ax == SliceAxis::coronal ? d[1] : d[0]);
      double s = 0;
      for (int i = 0; i < count; ++i) {
        const auto sx = extract_slice(x, ax, i), sy = extract_slice(y, ax, i);
        s += testing::oracle_ssim2d(sx, sy, 1.0);
      }
      axes_sum += s / count;
    }
    oracle_dev = std::max(oracle_dev, std::abs(ssim3d(x, y, sc) - axes_sum / 3));
  }
  const bool pass = self2 == 1.0 && self3 == 1.0 && scale_dev <= kMetricTol && oracle_dev <= kMetricTol;
  report(4, pass,
         fmtn("SSIM2D(a,a)=%.15g SSIM3D(a,a)=%.15g; PSNR scale drift %.1e; 3D SSIM vs plane oracle %.1e (tol %.0e)",
              self2, self3, scale_dev, oracle_dev, kMetricTol),
         seconds_since(t0));
}

// ---- shared desk instance ----------------------------------------------------

struct DeskInstance {
  ConeBeamGeometry geom;
  Volume truth;
  ProjectionStack data;
};

const DeskInstance& desk() {
  static const DeskInstance inst = [] {
    const Dims3 d{kInstanceSize, kInstanceSize, kInstanceSize};
    DeskInstance c{default_geometry(d, {1, 1, 1}, uniform_angles(kInstanceViews, 2 * pi)),
                   shepp_logan_3d(d), {}};
    c.data = forward_project(c.truth, c.geom);
    return c;
  }();
  return inst;
}

double ssim_vs_truth(const Volume& v) {
  SsimConfig sc;
  sc.dynamic_range = 1.0;
  return ssim3d(v, desk().truth, sc);
}

// ---- criterion 5 -----------------------------------------------------------

void criterion_baselines() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& c = desk();
  const Volume sart = sart_reconstruct(c.data, c.geom);
  const Volume pocs = asdpocs_reconstruct(c.data, c.geom);
  const double s_sart = ssim_vs_truth(sart), s_pocs = ssim_vs_truth(pocs);
  report(5, s_pocs >= s_sart,
         fmtn("SSIM ASD-POCS %.4f vs SART %.4f (PSNR %.2f vs %.2f dB)", s_pocs,
              s_sart, psnr(pocs, c.truth), psnr(sart, c.truth)),
         seconds_since(t0));
}

// ---- criteria 6-8 ------------------------------------------------------------

struct RunResult {
  Volume volume;
  double psnr = 0, ssim = 0, seconds = 0;
  int builds = 0, aug = 0;
};

RunResult run_desk(double lambda, AugmentLoss loss = AugmentLoss::ssim3d) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& c = desk();
  RepresentationSetup setup;
  auto rep = make_representation(RepresentationKind::gaussian_cloud, c.data, c.geom, setup);
  DiffNrConfig cfg;
  cfg.total_iters = kIters;
  cfg.ref_interval = kRefInterval;
  cfg.aug_period = kAugPeriod;
  cfg.lambda_diff = lambda;
  cfg.augment_loss = loss;
  cfg.log_every = kIters;
  OracleFixer oracle(c.truth, kOracleSigma, kOracleSeed);
  auto r = diffnr_optimize(*rep, c.data, c.geom, cfg, lambda > 0 ? &oracle : nullptr);
  RunResult out;
  out.psnr = psnr(r.volume, c.truth);
  out.ssim = ssim_vs_truth(r.volume);
  out.builds = r.reference_builds;
  out.aug = r.augment_steps;
  out.volume = std::move(r.volume);
  out.seconds = seconds_since(t0);
  return out;
}

std::vector<RunResult> g_sweep;  // kLambdaSweep order, filled lazily
RunResult g_baseline;
bool g_have_baseline = false;

const RunResult& baseline() {
  if (!g_have_baseline) {
    g_baseline = run_desk(0.0);
    g_have_baseline = true;
  }
  return g_baseline;
}

const RunResult& sweep_at(std::size_t i) {
  if (g_sweep.empty()) g_sweep.resize(kLambdaSweep.size());
  if (g_sweep[i].seconds == 0) g_sweep[i] = run_desk(kLambdaSweep[i]);
  return g_sweep[i];
}

constexpr std::size_t kDefaultLambdaIndex = 1;  // 0.5

void criterion_diffnr_gain() {
  const auto& base = baseline();
  const auto& aug = sweep_at(kDefaultLambdaIndex);
  const double gain = aug.psnr - base.psnr;
  report(6, gain >= kDiffNrGainDb && aug.seconds < kDiffNrSeconds,
         fmtn("PSNR %.2f dB (lambda 0.5, %d builds, %d augment steps) vs %.2f dB plain: %+.2f dB (need >= %.1f); "
              "SSIM %.4f vs %.4f",
              aug.psnr, aug.builds, aug.aug, base.psnr, gain, kDiffNrGainDb, aug.ssim, base.ssim),
         base.seconds + aug.seconds);
}

void criterion_lambda_sweep() {
  double total = 0;
  std::string curve;
  std::size_t best = 0;
  for (std::size_t i = 0; i < kLambdaSweep.size(); ++i) {
    const bool fresh = g_sweep.empty() || g_sweep.size() <= i || g_sweep[i].seconds == 0;
    const auto& r = sweep_at(i);
    if (fresh) total += r.seconds;
    curve += fmtn("%s%.1f:%.2f", i ? " " : "", kLambdaSweep[i], r.psnr);
    if (r.psnr > g_sweep[best].psnr) best = i;
  }
  const bool interior = best > 0 && best + 1 < kLambdaSweep.size();
  report(7, interior,
         "PSNR by lambda {" + curve + "}; argmax " + fmt("%.1f", kLambdaSweep[best]) +
             (interior ? " is interior" : " is at the sweep boundary (no interior maximum)"),
         total);
}

void criterion_augment_loss() {
  const auto& ssim_run = sweep_at(kDefaultLambdaIndex);
  const auto l1_run = run_desk(0.5, AugmentLoss::l1);
  report(8, l1_run.ssim < ssim_run.ssim,
         fmtn("SSIM with L1 augmentation %.4f (PSNR %.2f) vs 3D-SSIM augmentation %.4f (PSNR %.2f)",
              l1_run.ssim, l1_run.psnr, ssim_run.ssim, ssim_run.psnr),
         l1_run.seconds);
}

// ---- criterion 9 -------------------------------------------------------------

void criterion_protocol() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dims3 d{24, 24, 24};
  const auto g = default_geometry(d, {1, 1, 1}, uniform_angles(8, 2 * pi));
  const auto truth = shepp_logan_3d(d);
  const auto stack = forward_project(truth, g);
  auto run = [&](SliceFixer& fixer) {
    RepresentationSetup setup;
    setup.n_kernels = 400;
    setup.seed = 3;
    auto rep = make_representation(RepresentationKind::gaussian_cloud, stack, g, setup);
    DiffNrConfig cfg;
    cfg.total_iters = 60;
    cfg.ref_interval = 20;
    cfg.aug_period = 2;
    cfg.log_every = 60;
    return diffnr_optimize(*rep, stack, g, cfg, &fixer).volume;
  };
  IdentityFixer identity;
  ExternalFixer echo({TOMO_ECHO_FIXER, 30.0});
  const auto a = run(identity);
  const auto b = run(echo);
  const bool same = a.data == b.data;

  ErrorCode code{};
  std::string message;
  try {
    ExternalFixer bad({std::string(TOMO_ECHO_FIXER) + " --truncate", 30.0});
    run(bad);
  } catch (const Error& e) {
    code = e.code();
    message = e.what();
  }
  report(9, same && code == ErrorCode::protocol,
         std::string("echo worker vs identity: ") + (same ? "bit-identical volumes" : "volumes differ") +
             "; truncated frame -> " + (code == ErrorCode::protocol ? "protocol error" : "wrong outcome") +
             (message.empty() ? "" : " (\"" + message + "\")"),
         seconds_since(t0));
}

// ---- criterion 10 ------------------------------------------------------------

fs::path workdir() {
  static const fs::path dir = [] {
    auto p = fs::temp_directory_path() / ("tomoforge_accept_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

bool cli(const std::string& args) {
  const std::string cmd = "\"" TOMO_CLI "\" " + args + " > /dev/null 2> \"" + at("stderr.txt") + "\"";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) && WEXITSTATUS(raw) == 0;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::uint8_t> bytes_of(const std::string& path) {
  const auto s = slurp(path);
  return {s.begin(), s.end()};
}

void criterion_determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> broken;
  for (const std::string run : {"run1", "run2"}) {
    fs::create_directories(workdir() / run);
    std::ofstream r(at(run + "/recipe.json"));
    r << R"({"schema_version": 1, "entries": [
      {"kind": "voxel_field", "views": 6, "mode": "nonuniform", "fit_fraction": 0.5, "seed": 1},
      {"kind": "gaussian_cloud", "views": 6, "fit_fraction": 0.25, "seed": 2}]})";
  }
  const std::vector<std::pair<std::string, std::string>> pipeline{
      {"phantom", "phantom --kind ellipsoids --dims 24 --seed 9 --out %s/gt.vol"},
      {"simulate", "simulate --volume %s/gt.vol --views 10 --photons 5e4 --seed 4 --geometry-out %s/g.json --out %s/p.prj"},
      {"sart", "reconstruct --projections %s/p.prj --geometry %s/g.json --method sart --sart-iters 4 --out %s/sart.vol"},
      {"asdpocs", "reconstruct --projections %s/p.prj --geometry %s/g.json --method asdpocs --sart-iters 4 --out %s/pocs.vol"},
      {"voxelnr", "reconstruct --projections %s/p.prj --geometry %s/g.json --method voxelnr --iters 40 --seed 5 "
                  "--fixer tvdenoise --ell 20 --tau 4 --out %s/vnr.vol"},
      {"gaussnr", "reconstruct --projections %s/p.prj --geometry %s/g.json --method gaussnr --iters 40 --kernels 300 "
                  "--seed 6 --fixer oracle:%s/gt.vol --ell 10 --tau 2 --log %s/log.csv --out %s/gnr.vol"},
      {"curate", "curate --gt %s/gt.vol --recipe %s/recipe.json --dense-views 36 --iters 20 --kernels 150 --out %s/pairs.bin"},
  };
  const std::vector<std::string> outputs{"gt.vol", "p.prj", "g.json", "sart.vol", "pocs.vol", "vnr.vol", "gnr.vol",
                                         "log.csv", "pairs.bin"};
  auto expand = [&](std::string tmpl, const std::string& dir) {
    std::string out;
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
      if (tmpl.compare(i, 2, "%s") == 0) {
        out += dir;
        ++i;
      } else {
        out += tmpl[i];
      }
    }
    return out;
  };
  for (const std::string run : {"run1", "run2"}) {
    for (const auto& [name, tmpl] : pipeline)
      if (!cli(expand(tmpl, at(run)))) {
        auto msg = slurp(at("stderr.txt"));
        while (!msg.empty() && msg.back() == '\n') msg.pop_back();
        broken.push_back(name + " failed: " + msg);
      }
  }
  int identical = 0;
  for (const auto& f : outputs) {
    if (slurp(at("run1/" + f)) == slurp(at("run2/" + f)) && !slurp(at("run1/" + f)).empty())
      ++identical;
    else
      broken.push_back(f + " differs between runs");
  }

  // write -> read -> write byte identity for every format.
  int formats = 0;
  auto round_trip = [&](const std::string& label, const std::vector<std::uint8_t>& first,
                        const std::vector<std::uint8_t>& second) {
    if (first == second && !first.empty()) ++formats;
    else broken.push_back(label + " does not round-trip");
  };
  try {
    const auto b = bytes_of(at("run1/gt.vol"));
    round_trip("volume", b, encode_volume(decode_volume(b)));
    const auto p = bytes_of(at("run1/p.prj"));
    round_trip("projections", p, encode_projections(decode_projections(p)));
    const auto s = slurp(at("run1/g.json"));
    round_trip("geometry", {s.begin(), s.end()}, [&] {
      const auto t = geometry_to_json(geometry_from_json(s));
      return std::vector<std::uint8_t>(t.begin(), t.end());
    }());
    const auto pr = bytes_of(at("run1/pairs.bin"));
    round_trip("pairs", pr, encode_pairs(decode_pairs(pr)));
    const auto cloud = encode_cloud(random_cloud(7, 70, 10, 0.5, 2));
    round_trip("cloud checkpoint", cloud, encode_cloud(decode_cloud(cloud)));
    FixerRequest req;
    req.slice = extract_slice(decode_volume(b), SliceAxis::axial, 5);
    req.cond_a = Image(6, 5);
    req.cond_b = Image(6, 5);
    req.prompt = "a clean CT slice";
    const auto wire = encode_fixer_request(req);
    round_trip("fixer request", wire, encode_fixer_request(decode_fixer_request(wire)));
    FixerResponse resp{req.slice};
    const auto rw = encode_fixer_response(resp);
    round_trip("fixer response", rw, encode_fixer_response(decode_fixer_response(rw, req.slice)));
    // PNG export is lossy by design; check it is deterministic instead.
    const auto img = extract_slice(decode_volume(b), SliceAxis::axial, 12);
    write_slice_png(at("s1.png"), img);
    write_slice_png(at("s2.png"), img);
    if (slurp(at("s1.png")) == slurp(at("s2.png")) && slurp(at("s1.png.window.txt")) == slurp(at("s2.png.window.txt")))
      ++formats;
    else
      broken.push_back("PNG export is not deterministic");
  } catch (const std::exception& e) {
    broken.push_back(std::string("format check threw: ") + e.what());
  }
  std::string detail = fmtn("%d/%zu CLI outputs bit-identical across reruns; %d/8 formats byte-stable", identical,
                            outputs.size(), formats);
  for (const auto& b : broken) detail += "; " + b;
  report(10, broken.empty(), detail, seconds_since(t0));
}

// ---- criterion 11 ------------------------------------------------------------

void criterion_curation() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dims3 d{32, 32, 32};
  const auto gt = shepp_logan_3d(d);
  const auto tmpl = default_geometry(d, {1, 1, 1}, {0.0});
  CurationConfig cfg;
  cfg.dense_views = 360;
  cfg.training.total_iters = 800;
  cfg.training.log_every = 800;
  cfg.setup.n_kernels = 2000;
  std::vector<RecipeEntry> recipe;
  for (auto kind : {RepresentationKind::voxel_field, RepresentationKind::gaussian_cloud}) {
    recipe.push_back({kind, 12, ViewMode::uniform, 0.25, 11});
    recipe.push_back({kind, 12, ViewMode::nonuniform, 0.5, 12});
    recipe.push_back({kind, 120, ViewMode::uniform, 1.0, 13});
  }
  const auto pairs = generate_pairs(gt, tmpl, recipe, cfg);
  std::size_t voxel = 0;
  for (const auto& p : pairs) voxel += p.kind == RepresentationKind::voxel_field;
  const bool balanced = voxel * 2 == pairs.size() && !pairs.empty();

  // Per-entry volume PSNR of corrupted vs clean slices.
  auto entry_psnr = [&](std::size_t entry) {
    std::vector<double> a, b;
    for (int z = 0; z < d[2]; ++z) {
      const auto& p = pairs[entry * d[2] + z];
      a.insert(a.end(), p.corrupted.data.begin(), p.corrupted.data.end());
      b.insert(b.end(), p.clean.data.begin(), p.clean.data.end());
    }
    return psnr(a, b);
  };
  bool ordered = true;
  std::string detail = fmtn("%zu pairs, %zu voxel-field / %zu cloud", pairs.size(), voxel, pairs.size() - voxel);
  for (std::size_t k = 0; k < 2; ++k) {
    const double under = entry_psnr(3 * k), half = entry_psnr(3 * k + 1), full = entry_psnr(3 * k + 2);
    ordered &= under < full && half < full;
    detail += fmtn("; %s PSNR 25%%/12v %.2f, 50%%/12v-nonuniform %.2f, 100%%/120v %.2f",
                   k == 0 ? "voxel" : "cloud", under, half, full);
  }
  report(11, balanced && ordered, detail, seconds_since(t0));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--allow-fail" && i + 1 < argc)
      allowed.insert(std::atoi(argv[++i]));
    else
      only.insert(std::atoi(argv[i]));
  }
  auto want = [&](int id) { return only.empty() || only.count(id); };
  const std::vector<std::pair<int, std::function<void()>>> suite{
      {1, criterion_adjoint},      {2, criterion_gradients},     {3, criterion_quadrature},
      {4, criterion_metrics},      {5, criterion_baselines},     {6, criterion_diffnr_gain},
      {7, criterion_lambda_sweep}, {8, criterion_augment_loss},  {9, criterion_protocol},
      {10, criterion_determinism}, {11, criterion_curation},
  };
  for (const auto& [id, fn] : suite) {
    if (!want(id)) continue;
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, false, std::string("threw: ") + e.what(), 0);
    }
  }
  fs::remove_all(workdir());
  int blocking = 0;
  std::string list;
  for (int id : failed) {
    list += fmtn(" %d%s", id, allowed.count(id) ? " (allowed)" : "");
    blocking += !allowed.count(id);
  }
  std::printf("%zu criterion(s) failed%s\n", failed.size(), list.empty() ? "" : (":" + list).c_str());
  return blocking == 0 ? 0 : 1;
}
