#include "tomoforge/gaussian.hpp"

#include <cmath>

#include "binary_io.hpp"
#include "kernel_math.hpp"
#include "tomoforge/error.hpp"
#include "tomoforge/volume.hpp"

namespace tomo {

void GaussianCloud::add(double density, Vec3 center, std::array<double, 3> log_scale,
                        std::array<double, 4> quat) {
  params.insert(params.end(), {density, center.x, center.y, center.z, log_scale[0],
                               log_scale[1], log_scale[2], quat[0], quat[1], quat[2], quat[3]});
}

void GaussianCloud::normalize_rotations() {
  for (std::size_t i = 0; i < size(); ++i) {
    auto k = kernel(i);
    double n = 0.0;
    for (int j = 0; j < 4; ++j) n += k[kQuat + j] * k[kQuat + j];
    n = std::sqrt(n);
    if (!(n > 0.0) || !std::isfinite(n)) {
      k[kQuat] = 1.0;
      k[kQuat + 1] = k[kQuat + 2] = k[kQuat + 3] = 0.0;
      continue;
    }
    for (int j = 0; j < 4; ++j) k[kQuat + j] /= n;
  }
}

Mat3 rotation_from_quat(std::span<const double, 4> q) {
  return detail::quat_rotation(q[0], q[1], q[2], q[3]);
}

Mat3 kernel_covariance(std::span<const double, GaussianCloud::kStride> kernel) {
  return detail::kernel_terms(detail::kernel_inputs<double>(kernel)).cov;
}

std::vector<std::uint8_t> encode_cloud(const GaussianCloud& cloud) {
  detail::ByteWriter w;
  w.magic("TOMOGSC1");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cloud.size()));
  for (double v : cloud.params) w.f32(v);
  return std::move(w.bytes());
}

GaussianCloud decode_cloud(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "cloud checkpoint");
  r.expect_magic("TOMOGSC1");
  const auto m = r.get<std::uint32_t>();
  if (r.remaining() != static_cast<std::size_t>(m) * GaussianCloud::kStride * sizeof(float))
    fail(ErrorCode::io, "cloud checkpoint: payload size does not match kernel count");
  GaussianCloud cloud;
  cloud.params.resize(static_cast<std::size_t>(m) * GaussianCloud::kStride);
  for (auto& v : cloud.params) {
    v = r.f32();
    if (!std::isfinite(v)) fail(ErrorCode::io, "cloud checkpoint: non-finite parameter");
  }
  r.expect_end();
  return cloud;
}

void write_cloud(const std::string& path, const GaussianCloud& cloud) {
  write_file_bytes(path, encode_cloud(cloud));
}

GaussianCloud read_cloud(const std::string& path) {
  try {
    return decode_cloud(read_file_bytes(path));
  } catch (const Error& e) {
    fail(e.code(), path + ": " + e.what());
  }
}

}  // namespace tomo
