#include "tomoforge/slice_fixer.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <thread>

#include "binary_io.hpp"
#include "tomoforge/error.hpp"
#include "tomoforge/objectives.hpp"

namespace tomo {

namespace {

std::string provenance(const SliceImage& s) {
  return std::string(axis_name(s.axis)) + " slice " + std::to_string(s.index);
}

std::pair<double, double> value_range(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

constexpr std::uint32_t kMaxPayload = 1u << 30;

}  // namespace

FixerResponse fix_slice(SliceFixer& fixer, const FixerRequest& req) {
  for (double v : req.slice.data)
    if (!std::isfinite(v))
      fail(ErrorCode::fixer, "fixer request for " + provenance(req.slice) + " is not finite");
  FixerResponse resp = fixer.fix(req);
  if (resp.slice.width != req.slice.width || resp.slice.height != req.slice.height ||
      resp.slice.data.size() != req.slice.data.size())
    fail(ErrorCode::fixer, std::string(fixer.name()) + " fixer changed the dims of " +
                               provenance(req.slice));
  for (double v : resp.slice.data)
    if (!std::isfinite(v))
      fail(ErrorCode::fixer, std::string(fixer.name()) + " fixer returned non-finite values for " +
                                 provenance(req.slice));
  resp.slice.axis = req.slice.axis;
  resp.slice.index = req.slice.index;
  return resp;
}

FixerResponse IdentityFixer::fix(const FixerRequest& req) { return {req.slice}; }

TvDenoiseFixer::TvDenoiseFixer(int steps, double step_fraction)
    : steps_(steps), step_fraction_(step_fraction) {
  if (steps < 0) fail(ErrorCode::config, "tv fixer: steps must be >= 0");
  if (!(step_fraction > 0.0)) fail(ErrorCode::config, "tv fixer: step fraction must be > 0");
}

FixerResponse TvDenoiseFixer::fix(const FixerRequest& req) {
  SliceImage x = req.slice;
  const auto [lo, hi] = value_range(x.data);
  double step = step_fraction_ * (hi - lo);
  if (!(step > 0.0)) return {x};
  std::vector<double> grad(x.data.size());
  Image trial(x.width, x.height);
  double tv = tv2d(x);
  for (int k = 0; k < steps_; ++k) {
    std::fill(grad.begin(), grad.end(), 0.0);
    tv2d(x, grad);
    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::abs(g));
    if (!(gmax > 0.0)) break;
    for (int tries = 0; tries < 30; ++tries) {
      for (std::size_t i = 0; i < grad.size(); ++i) trial.data[i] = x.data[i] - step * grad[i] / gmax;
      const double next = tv2d(trial);
      if (next < tv) {
        x.data = trial.data;
        tv = next;
        break;
      }
      step *= 0.5;
    }
  }
  return {x};
}

OracleFixer::OracleFixer(Volume truth, double sigma_fraction, std::uint64_t seed)
    : truth_(std::move(truth)), seed_(seed) {
  if (!(sigma_fraction >= 0.0)) fail(ErrorCode::config, "oracle fixer: sigma must be >= 0");
  const auto [lo, hi] = value_range(truth_.data);
  sigma_ = sigma_fraction * (hi - lo);
}

FixerResponse OracleFixer::fix(const FixerRequest& req) {
  const SliceImage gt = extract_slice(truth_, req.slice.axis, req.slice.index);
  SliceImage out = resample_bilinear(gt, req.slice.width, req.slice.height);
  if (sigma_ > 0.0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(req.slice.axis),
                      static_cast<std::uint32_t>(req.slice.index)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> noise(0.0, sigma_);
    for (double& v : out.data) v += noise(rng);
  }
  return {out};
}

// --- wire format ---------------------------------------------------------

namespace {

void put_image(detail::ByteWriter& w, const Image& img) {
  for (double v : img.data) w.f32(v);
}

std::vector<std::uint8_t> frame(std::string_view magic, std::vector<std::uint8_t> payload) {
  detail::ByteWriter w;
  w.magic(magic);
  w.put(static_cast<std::uint32_t>(payload.size()));
  w.raw(payload);
  return std::move(w.bytes());
}

}  // namespace

std::vector<std::uint8_t> encode_fixer_request(const FixerRequest& req) {
  if (req.cond_a.width != req.cond_b.width || req.cond_a.height != req.cond_b.height)
    fail(ErrorCode::shape, "fixer request: conditioning projections differ in size");
  detail::ByteWriter w;
  w.put(static_cast<std::uint32_t>(req.slice.width));
  w.put(static_cast<std::uint32_t>(req.slice.height));
  put_image(w, req.slice);
  w.put(static_cast<std::uint32_t>(req.cond_a.height));
  w.put(static_cast<std::uint32_t>(req.cond_a.width));
  put_image(w, req.cond_a);
  put_image(w, req.cond_b);
  w.put(static_cast<std::uint32_t>(req.prompt.size()));
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>(req.prompt.data()), req.prompt.size()));
  w.put(static_cast<std::uint32_t>(req.slice.axis));
  w.put(static_cast<std::uint32_t>(req.slice.index));
  return frame("FXRQ", std::move(w.bytes()));
}

FixerRequest decode_fixer_request(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "fixer request", ErrorCode::protocol);
  r.expect_magic("FXRQ");
  const auto len = r.get<std::uint32_t>();
  if (len != r.remaining()) fail(ErrorCode::protocol, "fixer request: payload length mismatch");
  FixerRequest req;
  const int w = static_cast<int>(r.get<std::uint32_t>());
  const int h = static_cast<int>(r.get<std::uint32_t>());
  if (static_cast<std::uint64_t>(w) * h * 4 > r.remaining())
    fail(ErrorCode::protocol, "fixer request: truncated");
  req.slice = SliceImage(w, h, SliceAxis::axial, 0);
  for (double& v : req.slice.data) v = r.f32();
  const int rows = static_cast<int>(r.get<std::uint32_t>());
  const int cols = static_cast<int>(r.get<std::uint32_t>());
  if (static_cast<std::uint64_t>(rows) * cols * 8 > r.remaining())
    fail(ErrorCode::protocol, "fixer request: truncated");
  req.cond_a = Image(cols, rows);
  req.cond_b = Image(cols, rows);
  for (double& v : req.cond_a.data) v = r.f32();
  for (double& v : req.cond_b.data) v = r.f32();
  const auto plen = r.get<std::uint32_t>();
  const auto prompt = r.raw(plen);
  req.prompt.assign(prompt.begin(), prompt.end());
  const auto axis = r.get<std::uint32_t>();
  if (axis > 2) fail(ErrorCode::protocol, "fixer request: bad slice axis");
  req.slice.axis = static_cast<SliceAxis>(axis);
  req.slice.index = static_cast<int>(r.get<std::uint32_t>());
  r.expect_end();
  return req;
}

std::vector<std::uint8_t> encode_fixer_response(const FixerResponse& resp) {
  detail::ByteWriter w;
  put_image(w, resp.slice);
  return frame("FXRS", std::move(w.bytes()));
}

FixerResponse decode_fixer_response(std::span<const std::uint8_t> bytes, const SliceImage& like) {
  detail::ByteReader r(bytes, "fixer response for " + provenance(like), ErrorCode::protocol);
  r.expect_magic("FXRS");
  const auto len = r.get<std::uint32_t>();
  if (len != like.data.size() * 4 || len != r.remaining())
    fail(ErrorCode::protocol, "fixer response for " + provenance(like) + ": expected " +
                                  std::to_string(like.data.size() * 4) + " payload bytes, got " +
                                  std::to_string(len));
  FixerResponse resp{SliceImage(like.width, like.height, like.axis, like.index)};
  for (double& v : resp.slice.data) v = r.f32();
  return resp;
}

// --- external process ----------------------------------------------------

ExternalFixer::ExternalFixer(ExternalFixerOptions opts) : opts_(std::move(opts)) {
  if (opts_.command.empty()) fail(ErrorCode::config, "external fixer: empty command");
  if (!(opts_.timeout_seconds > 0.0)) fail(ErrorCode::config, "external fixer: timeout must be > 0");
  int sv[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0)
    fail(ErrorCode::fixer, std::string("external fixer: socketpair failed: ") + std::strerror(errno));
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(sv[0]);
    ::close(sv[1]);
    fail(ErrorCode::fixer, std::string("external fixer: fork failed: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::setpgid(0, 0);  // own group, so a shell's children die with it
    ::dup2(sv[1], STDIN_FILENO);
    ::dup2(sv[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", opts_.command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(sv[1]);
  fd_ = sv[0];
  pid_ = pid;
}

ExternalFixer::~ExternalFixer() { shutdown(); }

void ExternalFixer::shutdown() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
  if (pid_ > 0) {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + std::chrono::seconds(2);
    int status = 0;
    while (::waitpid(pid_, &status, WNOHANG) == 0) {
      if (clock::now() > deadline) {
        ::kill(-pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    pid_ = -1;
  }
}

void ExternalFixer::child_failed(const std::string& where, const std::string& what) {
  std::string status_text;
  if (pid_ > 0) {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
    int status = 0;
    pid_t done = 0;
    for (int i = 0; i < 200 && done == 0; ++i) {
      done = ::waitpid(pid_, &status, WNOHANG);
      if (done == 0) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    if (done == 0) {
      ::kill(-pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
      status_text = " (process killed)";
    } else if (WIFEXITED(status)) {
      status_text = " (process exited with status " + std::to_string(WEXITSTATUS(status)) + ")";
    } else if (WIFSIGNALED(status)) {
      status_text = " (process killed by signal " + std::to_string(WTERMSIG(status)) + ")";
    }
    pid_ = -1;
  }
  fail(ErrorCode::fixer, "external fixer failed on " + where + ": " + what + status_text);
}

void ExternalFixer::write_all(const std::vector<std::uint8_t>& bytes, const std::string& where) {
  std::size_t done = 0;
  const int timeout_ms = static_cast<int>(opts_.timeout_seconds * 1000);
  while (done < bytes.size()) {
    pollfd p{fd_, POLLOUT, 0};
    const int ready = ::poll(&p, 1, timeout_ms);
    if (ready == 0) child_failed(where, "timed out writing the request");
    if (ready < 0) {
      if (errno == EINTR) continue;
      child_failed(where, std::strerror(errno));
    }
    const ssize_t n = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      child_failed(where, std::string("write failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

void ExternalFixer::read_exact(std::uint8_t* out, std::size_t n, const std::string& where,
                               bool mid_frame) {
  std::size_t done = 0;
  const int timeout_ms = static_cast<int>(opts_.timeout_seconds * 1000);
  while (done < n) {
    pollfd p{fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, timeout_ms);
    if (ready == 0) child_failed(where, "timed out waiting for the response");
    if (ready < 0) {
      if (errno == EINTR) continue;
      child_failed(where, std::strerror(errno));
    }
    const ssize_t got = ::recv(fd_, out + done, n - done, 0);
    if (got == 0 && (mid_frame || done > 0)) {
      // The worker sent part of a frame and hung up.
      shutdown();
      fail(ErrorCode::protocol, "external fixer: truncated response frame for " + where);
    }
    if (got == 0) child_failed(where, "stream closed before the response");
    if (got < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      child_failed(where, std::string("read failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(got);
  }
}

FixerResponse ExternalFixer::fix(const FixerRequest& req) {
  const std::string where = provenance(req.slice);
  if (fd_ < 0) fail(ErrorCode::fixer, "external fixer is no longer running (" + where + ")");
  write_all(encode_fixer_request(req), where);
  std::vector<std::uint8_t> bytes(8);
  read_exact(bytes.data(), 8, where);
  if (std::memcmp(bytes.data(), "FXRS", 4) != 0) {
    shutdown();
    fail(ErrorCode::protocol, "external fixer: bad response magic for " + where);
  }
  std::uint32_t len;
  std::memcpy(&len, bytes.data() + 4, 4);
  if (len > kMaxPayload || len != req.slice.data.size() * 4) {
    shutdown();
    fail(ErrorCode::protocol, "external fixer: response for " + where + " has " +
                                  std::to_string(len) + " payload bytes, expected " +
                                  std::to_string(req.slice.data.size() * 4));
  }
  bytes.resize(8 + len);
  read_exact(bytes.data() + 8, len, where, true);
  return decode_fixer_response(bytes, req.slice);
}

// --- conditioning ---------------------------------------------------------

std::pair<std::size_t, std::size_t> select_conditioning(const ConeBeamGeometry& geom) {
  if (geom.n_views() < 2)
    fail(ErrorCode::config, "select_conditioning: need at least two views");
  auto nearest = [&](double target) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t i = 0; i < geom.n_views(); ++i) {
      double d = std::fmod(std::abs(geom.angles[i] - target), 2 * std::numbers::pi);
      d = std::min(d, 2 * std::numbers::pi - d);
      if (d < best_d - 1e-12) {
        best_d = d;
        best = i;
      }
    }
    return best;
  };
  return {nearest(0.0), nearest(0.5 * std::numbers::pi)};
}

std::pair<Image, Image> conditioning_images(const ProjectionStack& stack,
                                            const ConeBeamGeometry& geom) {
  const auto [a, b] = select_conditioning(geom);
  if (static_cast<std::size_t>(stack.n_views) != geom.n_views())
    fail(ErrorCode::shape, "conditioning: stack does not match geometry");
  return {stack.view_image(static_cast<int>(a)), stack.view_image(static_cast<int>(b))};
}

bool is_fixer_spec(const std::string& spec) {
  return spec == "identity" || spec == "tvdenoise" ||
         (spec.rfind("oracle:", 0) == 0 && spec.size() > 7) ||
         (spec.rfind("exec:", 0) == 0 && spec.size() > 5);
}

std::unique_ptr<SliceFixer> make_fixer(const std::string& spec, double oracle_sigma,
                                       std::uint64_t seed, double timeout_seconds) {
  if (!is_fixer_spec(spec))
    fail(ErrorCode::config,
         "unknown fixer \"" + spec + "\" (identity, tvdenoise, oracle:<gt_path>, exec:<cmd>)");
  if (spec == "identity") return std::make_unique<IdentityFixer>();
  if (spec == "tvdenoise") return std::make_unique<TvDenoiseFixer>();
  if (spec.rfind("oracle:", 0) == 0)
    return std::make_unique<OracleFixer>(read_volume(spec.substr(7)), oracle_sigma, seed);
  return std::make_unique<ExternalFixer>(ExternalFixerOptions{spec.substr(5), timeout_seconds});
}

}  // namespace tomo
