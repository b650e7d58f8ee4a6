#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tomoforge/geometry.hpp"
#include "tomoforge/volume.hpp"

namespace tomo {

struct FixerRequest {
  SliceImage slice;  // carries axis and index
  Image cond_a;
  Image cond_b;
  std::string prompt;  // opaque UTF-8
};

struct FixerResponse {
  SliceImage slice;
};

class SliceFixer {
 public:
  virtual ~SliceFixer() = default;
  virtual std::string_view name() const = 0;
  // Built-in fixers may be called for different slices concurrently.
  virtual bool parallel_safe() const { return true; }
  virtual FixerResponse fix(const FixerRequest& req) = 0;
};

// Checks the response against the request and returns it; the single entry
// point the engine uses.
FixerResponse fix_slice(SliceFixer& fixer, const FixerRequest& req);

class IdentityFixer final : public SliceFixer {
 public:
  std::string_view name() const override { return "identity"; }
  FixerResponse fix(const FixerRequest& req) override;
};

// Total-variation smoothing: `steps` gradient steps whose largest per-pixel
// move is step_fraction * (max - min) of the input, halved whenever a step
// would raise the TV.
class TvDenoiseFixer final : public SliceFixer {
 public:
  explicit TvDenoiseFixer(int steps = 30, double step_fraction = 0.1);
  std::string_view name() const override { return "tvdenoise"; }
  FixerResponse fix(const FixerRequest& req) override;

 private:
  int steps_;
  double step_fraction_;
};

// Returns the ground-truth slice (resampled to the request size) plus
// Gaussian noise of stddev sigma_fraction * (max - min of the truth volume).
// The noise stream depends only on (seed, axis, index).
class OracleFixer final : public SliceFixer {
 public:
  OracleFixer(Volume truth, double sigma_fraction, std::uint64_t seed);
  std::string_view name() const override { return "oracle"; }
  FixerResponse fix(const FixerRequest& req) override;

 private:
  Volume truth_;
  double sigma_;
  std::uint64_t seed_;
};

struct ExternalFixerOptions {
  std::string command;  // run through /bin/sh -c
  double timeout_seconds = 60.0;
};

// Talks to a child process over its stdin/stdout with the framed protocol.
class ExternalFixer final : public SliceFixer {
 public:
  explicit ExternalFixer(ExternalFixerOptions opts);
  ~ExternalFixer() override;
  ExternalFixer(const ExternalFixer&) = delete;
  ExternalFixer& operator=(const ExternalFixer&) = delete;

  std::string_view name() const override { return "external"; }
  bool parallel_safe() const override { return false; }
  FixerResponse fix(const FixerRequest& req) override;

 private:
  void write_all(const std::vector<std::uint8_t>& bytes, const std::string& where);
  void read_exact(std::uint8_t* out, std::size_t n, const std::string& where,
                  bool mid_frame = false);
  [[noreturn]] void child_failed(const std::string& where, const std::string& what);
  void shutdown();

  ExternalFixerOptions opts_;
  int fd_ = -1;
  int pid_ = -1;
};

// Wire format.
std::vector<std::uint8_t> encode_fixer_request(const FixerRequest& req);
FixerRequest decode_fixer_request(std::span<const std::uint8_t> frame);
std::vector<std::uint8_t> encode_fixer_response(const FixerResponse& resp);
// The expected dims come from the request; the payload carries only samples.
FixerResponse decode_fixer_response(std::span<const std::uint8_t> frame, const SliceImage& like);

// Measured views nearest to 0 and pi/2 (circular distance, ties to the lower
// index).
std::pair<std::size_t, std::size_t> select_conditioning(const ConeBeamGeometry& geom);
std::pair<Image, Image> conditioning_images(const ProjectionStack& stack,
                                            const ConeBeamGeometry& geom);

// Builds a fixer from "identity", "tvdenoise", "oracle:<volume path>" or
// "exec:<shell command>"; anything else is a config error.
bool is_fixer_spec(const std::string& spec);
std::unique_ptr<SliceFixer> make_fixer(const std::string& spec, double oracle_sigma = 0.05,
                                       std::uint64_t seed = 0, double timeout_seconds = 60.0);

}  // namespace tomo
