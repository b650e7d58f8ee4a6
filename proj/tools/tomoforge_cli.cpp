#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tomoforge/tomoforge.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Failure {
  int exit_code;
  std::string message;
};

void check(tf_status s) {
  if (s != TF_OK)
    throw Failure{kExitRuntime, std::string(tf_status_name(s)) + ": " + tf_last_error()};
}

[[noreturn]] void usage(const std::string& message) { throw Failure{kExitUsage, message}; }

template <typename T, void (*Free)(T*)>
struct Owned {
  T* p = nullptr;
  Owned() = default;
  Owned(const Owned&) = delete;
  Owned& operator=(const Owned&) = delete;
  ~Owned() { Free(p); }
  T** out() { return &p; }
  T* get() const { return p; }
};
using VolumeH = Owned<tf_volume, tf_volume_free>;
using GeometryH = Owned<tf_geometry, tf_geometry_free>;
using ProjectionsH = Owned<tf_projections, tf_projections_free>;
using FixerH = Owned<tf_fixer, tf_fixer_free>;

std::array<int, 3> parse_dims(const std::vector<int>& d) {
  if (d.size() == 1) return {d[0], d[0], d[0]};
  if (d.size() == 3) return {d[0], d[1], d[2]};
  usage("--dims takes one or three integers");
}

std::string number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* kMetricsHeader = "psnr,ssim3d,ssim_axial,ssim_coronal,ssim_sagittal";

std::string metrics_row(const tf_metrics& m) {
  return number(m.psnr) + "," + number(m.ssim3d) + "," + number(m.ssim_axial) + "," +
         number(m.ssim_coronal) + "," + number(m.ssim_sagittal);
}

void emit_metrics(const tf_metrics& m, const std::string& path) {
  const std::string text = std::string(kMetricsHeader) + "\n" + metrics_row(m) + "\n";
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Failure{kExitRuntime, path + ": cannot write metrics"};
}

void load_geometry(const std::string& path, const std::vector<int>& dims, GeometryH& geom) {
  if (!path.empty()) {
    check(tf_geometry_read(path.c_str(), geom.out()));
  } else if (!dims.empty()) {
    const auto d = parse_dims(dims);
    check(tf_geometry_default(d[0], d[1], d[2], geom.out()));
  } else {
    usage("either --geometry or --dims is required");
  }
}

// ---- commands -------------------------------------------------------------

struct PhantomArgs {
  std::string kind = "shepp3d";
  std::vector<int> dims{64};
  std::uint64_t seed = 0;
  int count = 10;
  std::string out;
};

int run_phantom(const PhantomArgs& a) {
  const auto d = parse_dims(a.dims);
  VolumeH vol;
  if (a.kind == "shepp3d")
    check(tf_phantom_shepp3d(d[0], d[1], d[2], vol.out()));
  else
    check(tf_phantom_ellipsoids(d[0], d[1], d[2], a.seed, a.count, vol.out()));
  check(tf_volume_write(vol.get(), a.out.c_str()));
  return kExitOk;
}

struct SimulateArgs {
  std::string volume, geometry, geometry_out, out;
  int views = 12;
  double photons = 0;
  std::uint64_t seed = 0;
};

int run_simulate(const SimulateArgs& a) {
  VolumeH vol;
  check(tf_volume_read(a.volume.c_str(), vol.out()));
  GeometryH geom;
  if (a.geometry.empty()) {
    int d[3];
    check(tf_volume_dims(vol.get(), d));
    check(tf_geometry_default(d[0], d[1], d[2], geom.out()));
  } else {
    check(tf_geometry_read(a.geometry.c_str(), geom.out()));
  }
  ProjectionsH proj;
  check(tf_simulate(vol.get(), geom.get(), a.views, a.photons, a.seed, proj.out()));
  check(tf_projections_write(proj.get(), a.out.c_str()));
  if (!a.geometry_out.empty()) check(tf_geometry_write(geom.get(), a.geometry_out.c_str()));
  return kExitOk;
}

struct ReconstructArgs {
  std::string projections, geometry, method = "gaussnr", out, gt, metrics, log, fixer;
  std::string augment_loss = "ssim3d";
  std::vector<int> dims;
  double lambda_diff = -1;  // unset
  double oracle_sigma = 0.05;
  int fixer_timeout = 60;
  int tau = 0, ell = 0, iters = -1, kernels = 0, sart_iters = -1, tv_steps = -1, log_every = -1;
  double tv_weight = -1, lr_final = -1;
  std::uint64_t seed = 0;
};

int run_reconstruct(const ReconstructArgs& a) {
  static const std::map<std::string, tf_method> methods{{"sart", TF_METHOD_SART},
                                                        {"asdpocs", TF_METHOD_ASDPOCS},
                                                        {"voxelnr", TF_METHOD_VOXELNR},
                                                        {"gaussnr", TF_METHOD_GAUSSNR}};
  const tf_method method = methods.at(a.method);
  const bool neural = method == TF_METHOD_VOXELNR || method == TF_METHOD_GAUSSNR;

  tf_recon_options opts;
  tf_recon_options_init(&opts);
  opts.method = method;
  opts.lambda_diff = a.lambda_diff >= 0 ? a.lambda_diff : (a.fixer.empty() ? 0.0 : opts.lambda_diff);
  if (neural && opts.lambda_diff > 0 && a.fixer.empty())
    usage("--lambda-diff > 0 needs --fixer");
  if (a.iters >= 0) opts.iters = a.iters;
  if (a.sart_iters >= 0) opts.sart_iterations = a.sart_iters;
  if (a.tv_steps >= 0) opts.tv_steps = a.tv_steps;
  if (a.tv_weight >= 0) opts.tv_weight = a.tv_weight;
  if (a.lr_final >= 0) opts.lr_final_fraction = a.lr_final;
  if (a.log_every >= 0) opts.log_every = a.log_every;
  opts.tau = a.tau;
  opts.ell = a.ell;
  opts.n_kernels = a.kernels;
  opts.seed = a.seed;
  opts.augment_loss = a.augment_loss == "l1" ? TF_AUGMENT_L1 : TF_AUGMENT_SSIM3D;
  if (neural && opts.log_every > opts.iters) opts.log_every = opts.iters;

  ProjectionsH proj;
  check(tf_projections_read(a.projections.c_str(), proj.out()));
  GeometryH geom;
  load_geometry(a.geometry, a.dims, geom);
  VolumeH truth;
  if (!a.gt.empty()) check(tf_volume_read(a.gt.c_str(), truth.out()));
  FixerH fixer;
  if (neural && opts.lambda_diff > 0)
    check(tf_fixer_create(a.fixer.c_str(), a.oracle_sigma, a.seed, a.fixer_timeout, fixer.out()));

  VolumeH result;
  check(tf_reconstruct(proj.get(), geom.get(), &opts, fixer.get(), truth.get(),
                       neural && !a.log.empty() ? a.log.c_str() : nullptr, result.out()));
  check(tf_volume_write(result.get(), a.out.c_str()));
  if (truth.get()) {
    tf_metrics m;
    check(tf_evaluate(result.get(), truth.get(), &m));
    emit_metrics(m, a.metrics);
  }
  return kExitOk;
}

struct EvalArgs {
  std::string volume, gt, out;
};

int run_eval(const EvalArgs& a) {
  VolumeH vol, gt;
  check(tf_volume_read(a.volume.c_str(), vol.out()));
  check(tf_volume_read(a.gt.c_str(), gt.out()));
  tf_metrics m;
  check(tf_evaluate(vol.get(), gt.get(), &m));
  emit_metrics(m, a.out);
  return kExitOk;
}

struct CurateArgs {
  std::string gt, geometry, recipe, out;
  int dense_views = -1, iters = -1, kernels = 0;
  bool no_balance = false;
};

std::vector<tf_recipe_entry> read_recipe(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{kExitRuntime, path + ": cannot open recipe"};
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Failure{kExitRuntime, path + ": malformed recipe: " + e.what()};
  }
  auto bad = [&](const std::string& why) -> Failure { return {kExitRuntime, path + ": " + why}; };
  if (!doc.is_object()) throw bad("recipe must be an object");
  for (const auto& [key, _] : doc.items())
    if (key != "schema_version" && key != "entries") throw bad("unknown key \"" + key + "\"");
  if (doc.value("schema_version", 0) != 1) throw bad("schema_version must be 1");
  if (!doc.contains("entries") || !doc["entries"].is_array()) throw bad("\"entries\" must be an array");
  std::vector<tf_recipe_entry> out;
  for (const auto& e : doc["entries"]) {
    if (!e.is_object()) throw bad("recipe entries must be objects");
    for (const auto& [key, _] : e.items())
      if (key != "kind" && key != "views" && key != "mode" && key != "fit_fraction" && key != "seed")
        throw bad("unknown entry key \"" + key + "\"");
    try {
      tf_recipe_entry r{};
      const auto kind = e.at("kind").get<std::string>();
      if (kind != "voxel_field" && kind != "gaussian_cloud") throw bad("unknown kind \"" + kind + "\"");
      r.kind = kind == "voxel_field" ? TF_KIND_VOXEL_FIELD : TF_KIND_GAUSSIAN_CLOUD;
      r.n_views = e.at("views").get<int>();
      const auto mode = e.value("mode", std::string("uniform"));
      if (mode != "uniform" && mode != "nonuniform") throw bad("unknown mode \"" + mode + "\"");
      r.nonuniform = mode == "nonuniform";
      r.fit_fraction = e.at("fit_fraction").get<double>();
      r.seed = e.value("seed", std::uint64_t{0});
      out.push_back(r);
    } catch (const nlohmann::json::exception& ex) {
      throw bad(std::string("bad recipe entry: ") + ex.what());
    }
  }
  return out;
}

int run_curate(const CurateArgs& a) {
  const auto recipe = read_recipe(a.recipe);
  VolumeH gt;
  check(tf_volume_read(a.gt.c_str(), gt.out()));
  GeometryH geom;
  if (a.geometry.empty()) {
    int d[3];
    check(tf_volume_dims(gt.get(), d));
    check(tf_geometry_default(d[0], d[1], d[2], geom.out()));
  } else {
    check(tf_geometry_read(a.geometry.c_str(), geom.out()));
  }
  tf_curation_options opts;
  tf_curation_options_init(&opts);
  if (a.dense_views > 0) opts.dense_views = a.dense_views;
  if (a.iters > 0) opts.iters = a.iters;
  opts.n_kernels = a.kernels;
  opts.balance = a.no_balance ? 0 : 1;
  std::size_t n = 0;
  check(tf_curate(gt.get(), geom.get(), recipe.data(), recipe.size(), &opts, a.out.c_str(), &n));
  std::cout << n << " pairs\n";
  return kExitOk;
}

bool valid_fixer(const std::string& spec) {
  return spec == "identity" || spec == "tvdenoise" || (spec.rfind("oracle:", 0) == 0 && spec.size() > 7) ||
         (spec.rfind("exec:", 0) == 0 && spec.size() > 5);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tomoforge: sparse-view cone-beam CT reconstruction"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = auto); TOMOFORGE_THREADS overrides")
      ->check(CLI::NonNegativeNumber);

  PhantomArgs ph;
  auto* c_ph = app.add_subcommand("phantom", "generate a phantom volume");
  c_ph->add_option("--kind", ph.kind)->check(CLI::IsMember({"shepp3d", "ellipsoids"}));
  c_ph->add_option("--dims", ph.dims, "N or X Y Z")->expected(1, 3);
  c_ph->add_option("--seed", ph.seed);
  c_ph->add_option("--count", ph.count, "ellipsoid count");
  c_ph->add_option("--out", ph.out)->required();

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "forward-project a volume");
  c_sim->add_option("--volume", sim.volume)->required();
  c_sim->add_option("--geometry", sim.geometry, "geometry JSON (default: derived from the volume)");
  c_sim->add_option("--geometry-out", sim.geometry_out, "write the geometry used");
  c_sim->add_option("--views", sim.views)->check(CLI::PositiveNumber);
  c_sim->add_option("--photons", sim.photons, "photons per ray (0 = noiseless)");
  c_sim->add_option("--seed", sim.seed);
  c_sim->add_option("--out", sim.out)->required();

  ReconstructArgs rec;
  auto* c_rec = app.add_subcommand("reconstruct", "reconstruct a volume from projections");
  c_rec->add_option("--projections", rec.projections)->required();
  c_rec->add_option("--geometry", rec.geometry);
  c_rec->add_option("--dims", rec.dims, "default geometry for N or X Y Z")->expected(1, 3);
  c_rec->add_option("--method", rec.method)->check(CLI::IsMember({"sart", "asdpocs", "voxelnr", "gaussnr"}));
  c_rec->add_option("--out", rec.out)->required();
  c_rec->add_option("--gt", rec.gt, "ground truth for metrics and PSNR logging");
  c_rec->add_option("--metrics", rec.metrics, "metrics CSV path (default: stdout)");
  c_rec->add_option("--log", rec.log, "training log CSV path");
  c_rec->add_option("--fixer", rec.fixer, "identity|tvdenoise|oracle:<gt_path>|exec:<cmd>");
  c_rec->add_option("--oracle-sigma", rec.oracle_sigma, "oracle noise as a fraction of the range");
  c_rec->add_option("--fixer-timeout", rec.fixer_timeout, "seconds per external request");
  c_rec->add_option("--lambda-diff", rec.lambda_diff);
  c_rec->add_option("--tau", rec.tau);
  c_rec->add_option("--ell", rec.ell);
  c_rec->add_option("--iters", rec.iters);
  c_rec->add_option("--seed", rec.seed);
  c_rec->add_option("--kernels", rec.kernels, "Gaussian count (0 = auto)");
  c_rec->add_option("--augment-loss", rec.augment_loss)->check(CLI::IsMember({"ssim3d", "l1"}));
  c_rec->add_option("--tv-weight", rec.tv_weight);
  c_rec->add_option("--lr-final", rec.lr_final, "final learning-rate fraction");
  c_rec->add_option("--log-every", rec.log_every);
  c_rec->add_option("--sart-iters", rec.sart_iters);
  c_rec->add_option("--tv-steps", rec.tv_steps);

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "compare a volume with ground truth");
  c_ev->add_option("--volume", ev.volume)->required();
  c_ev->add_option("--gt", ev.gt)->required();
  c_ev->add_option("--out", ev.out, "CSV path (default: stdout)");

  CurateArgs cu;
  auto* c_cu = app.add_subcommand("curate", "build a paired slice dataset");
  c_cu->add_option("--gt", cu.gt)->required();
  c_cu->add_option("--geometry", cu.geometry);
  c_cu->add_option("--recipe", cu.recipe, "recipe JSON")->required();
  c_cu->add_option("--out", cu.out)->required();
  c_cu->add_option("--dense-views", cu.dense_views);
  c_cu->add_option("--iters", cu.iters, "full training budget");
  c_cu->add_option("--kernels", cu.kernels);
  c_cu->add_flag("--no-balance", cu.no_balance, "keep all pairs instead of trimming to 1:1");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (const char* env = std::getenv("TOMOFORGE_THREADS")) {
      char* end = nullptr;
      const long v = std::strtol(env, &end, 10);
      if (end == env || *end != '\0' || v < 0) usage("TOMOFORGE_THREADS must be a non-negative integer");
      threads = static_cast<int>(v);
    }
    check(tf_set_threads(threads));
    if (c_rec->parsed() && !rec.fixer.empty() && !valid_fixer(rec.fixer))
      usage("unknown fixer \"" + rec.fixer + "\" (identity, tvdenoise, oracle:<gt_path>, exec:<cmd>)");
    if (c_ph->parsed()) return run_phantom(ph);
    if (c_sim->parsed()) return run_simulate(sim);
    if (c_rec->parsed()) return run_reconstruct(rec);
    if (c_ev->parsed()) return run_eval(ev);
    if (c_cu->parsed()) return run_curate(cu);
  } catch (const Failure& f) {
    std::cerr << "tomoforge: " << f.message << "\n";
    return f.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "tomoforge: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
