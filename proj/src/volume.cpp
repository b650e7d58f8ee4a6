#include "tomoforge/volume.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <memory>

#include "binary_io.hpp"
#include "tomoforge/error.hpp"

namespace tomo {

namespace {

constexpr std::uint32_t kDtypeFloat32 = 1;

// Source coordinate and tap pair for half-pixel-centered resampling. Near
// the borders the two outermost samples are extrapolated linearly, which
// keeps linear ramps exact through up/down round trips.
struct Tap {
  int i0;
  int i1;
  double t;
};

std::vector<Tap> make_taps(int src, int dst) {
  std::vector<Tap> taps(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int d = 0; d < dst; ++d) {
    const double x = (d + 0.5) * scale - 0.5;
    if (src == 1) {
      taps[d] = {0, 0, 0.0};
      continue;
    }
    int i0 = static_cast<int>(std::floor(x));
    i0 = std::clamp(i0, 0, src - 2);
    taps[d] = {i0, i0 + 1, x - i0};
  }
  return taps;
}

}  // namespace

const char* axis_name(SliceAxis axis) {
  switch (axis) {
    case SliceAxis::axial: return "axial";
    case SliceAxis::coronal: return "coronal";
    case SliceAxis::sagittal: return "sagittal";
  }
  return "?";
}

Image ProjectionStack::view_image(int i) const {
  Image img(cols, rows);
  auto v = view(i);
  std::copy(v.begin(), v.end(), img.data.begin());
  return img;
}

int axis_extent(const Dims3& dims, SliceAxis axis) {
  switch (axis) {
    case SliceAxis::axial: return dims[2];
    case SliceAxis::coronal: return dims[1];
    case SliceAxis::sagittal: return dims[0];
  }
  return 0;
}

SliceImage extract_slice(const Volume& vol, SliceAxis axis, int index) {
  const auto [X, Y, Z] = vol.dims;
  if (index < 0 || index >= axis_extent(vol.dims, axis))
    fail(ErrorCode::index, "slice index out of range");
  switch (axis) {
    case SliceAxis::axial: {
      SliceImage s(X, Y, axis, index);
      const auto begin = vol.data.begin() + static_cast<std::ptrdiff_t>(vol.index(0, 0, index));
      std::copy(begin, begin + static_cast<std::ptrdiff_t>(X) * Y, s.data.begin());
      return s;
    }
    case SliceAxis::coronal: {
      SliceImage s(X, Z, axis, index);
      for (int z = 0; z < Z; ++z)
        for (int x = 0; x < X; ++x) s.at(x, z) = vol.at(x, index, z);
      return s;
    }
    case SliceAxis::sagittal: {
      SliceImage s(Y, Z, axis, index);
      for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y) s.at(y, z) = vol.at(index, y, z);
      return s;
    }
  }
  fail(ErrorCode::invalid_argument, "unknown slice axis");
}

std::vector<SliceImage> extract_slices(const Volume& vol, SliceAxis axis) {
  if (vol.data.empty()) fail(ErrorCode::invalid_argument, "extract_slices: empty volume");
  const int n = axis_extent(vol.dims, axis);
  std::vector<SliceImage> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(extract_slice(vol, axis, i));
  return out;
}

Volume stack_slices(const std::vector<SliceImage>& slices, SliceAxis axis,
                    const Spacing3& spacing) {
  if (slices.empty()) fail(ErrorCode::shape, "stack_slices: no slices");
  const int w = slices.front().width;
  const int h = slices.front().height;
  const int n = static_cast<int>(slices.size());
  for (const auto& s : slices) {
    if (s.width != w || s.height != h || s.axis != axis)
      fail(ErrorCode::shape, "stack_slices: inconsistent slice dims or axis");
    if (s.data.size() != static_cast<std::size_t>(w) * h)
      fail(ErrorCode::shape, "stack_slices: slice buffer size mismatch");
  }
  Dims3 dims{};
  switch (axis) {
    case SliceAxis::axial: dims = {w, h, n}; break;
    case SliceAxis::coronal: dims = {w, n, h}; break;
    case SliceAxis::sagittal: dims = {n, w, h}; break;
  }
  Volume vol(dims, 0.0, spacing);
  for (int i = 0; i < n; ++i) {
    const auto& s = slices[i];
    for (int b = 0; b < h; ++b)
      for (int a = 0; a < w; ++a) {
        switch (axis) {
          case SliceAxis::axial: vol.at(a, b, i) = s.at(a, b); break;
          case SliceAxis::coronal: vol.at(a, i, b) = s.at(a, b); break;
          case SliceAxis::sagittal: vol.at(i, a, b) = s.at(a, b); break;
        }
      }
  }
  return vol;
}

Image resample_bilinear(const Image& img, int new_width, int new_height) {
  if (new_width < 1 || new_height < 1)
    fail(ErrorCode::invalid_argument, "resample_bilinear: target dims must be >= 1");
  if (new_width == img.width && new_height == img.height) return img;
  const auto tx = make_taps(img.width, new_width);
  const auto ty = make_taps(img.height, new_height);

  // Rows first, then columns.
  Image tmp(new_width, img.height);
  for (int y = 0; y < img.height; ++y) {
    const double* row = img.data.data() + static_cast<std::size_t>(y) * img.width;
    for (int x = 0; x < new_width; ++x) {
      const auto& t = tx[x];
      const double a = row[t.i0];
      tmp.at(x, y) = a + t.t * (row[t.i1] - a);
    }
  }
  Image out(new_width, new_height);
  for (int y = 0; y < new_height; ++y) {
    const auto& t = ty[y];
    for (int x = 0; x < new_width; ++x) {
      const double a = tmp.at(x, t.i0);
      out.at(x, y) = a + t.t * (tmp.at(x, t.i1) - a);
    }
  }
  return out;
}

SliceImage resample_bilinear(const SliceImage& img, int new_width, int new_height) {
  SliceImage out;
  static_cast<Image&>(out) =
      resample_bilinear(static_cast<const Image&>(img), new_width, new_height);
  out.axis = img.axis;
  out.index = img.index;
  return out;
}

double psnr(std::span<const double> test, std::span<const double> reference) {
  if (test.size() != reference.size() || test.empty())
    fail(ErrorCode::shape, "psnr: operand sizes differ");
  double sse = 0.0;
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < test.size(); ++i) {
    const double d = test[i] - reference[i];
    sse += d * d;
    peak = std::max(peak, reference[i]);
  }
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sse / static_cast<double>(test.size());
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Volume& test, const Volume& reference) {
  if (test.dims != reference.dims) fail(ErrorCode::shape, "psnr: volume dims differ");
  return psnr(std::span<const double>(test.data), std::span<const double>(reference.data));
}

VolumeStats volume_stats(std::span<const double> values) {
  VolumeStats s;
  if (values.empty()) return s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

void clamp_nonneg(Volume& vol) {
  for (double& v : vol.data) v = std::max(v, 0.0);
}

void normalize_minmax(Volume& vol) {
  const auto s = volume_stats(vol.data);
  const double range = s.max - s.min;
  for (double& v : vol.data) v = range > 0 ? (v - s.min) / range : 0.0;
}

// --- formats ---------------------------------------------------------------

std::vector<std::uint8_t> encode_volume(const Volume& vol) {
  detail::ByteWriter w;
  w.magic("TOMOVOL1");
  for (int a = 0; a < 3; ++a) w.put<std::uint32_t>(static_cast<std::uint32_t>(vol.dims[a]));
  w.put<std::uint32_t>(kDtypeFloat32);
  w.zeros(8);
  for (double v : vol.data) w.f32(v);
  return std::move(w.bytes());
}

Volume decode_volume(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "volume file");
  r.expect_magic("TOMOVOL1");
  Dims3 dims{};
  for (int a = 0; a < 3; ++a) dims[a] = static_cast<int>(r.get<std::uint32_t>());
  const auto dtype = r.get<std::uint32_t>();
  if (dtype != kDtypeFloat32)
    fail(ErrorCode::io, "volume file: unsupported dtype tag " + std::to_string(dtype));
  r.skip(8);
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1) fail(ErrorCode::io, "volume file: zero dims");
  if (r.remaining() != voxel_count(dims) * sizeof(float))
    fail(ErrorCode::io, "volume file: payload size does not match dims");
  Volume vol(dims);
  for (auto& v : vol.data) {
    v = r.f32();
    if (!std::isfinite(v)) fail(ErrorCode::io, "volume file: non-finite voxel");
  }
  r.expect_end();
  return vol;
}

std::vector<std::uint8_t> encode_projections(const ProjectionStack& stack) {
  detail::ByteWriter w;
  w.magic("TOMOPRJ1");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(stack.n_views));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(stack.rows));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(stack.cols));
  for (double a : stack.angles) w.f32(a);
  for (double v : stack.data) w.f32(v);
  return std::move(w.bytes());
}

ProjectionStack decode_projections(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "projection file");
  r.expect_magic("TOMOPRJ1");
  const int n = static_cast<int>(r.get<std::uint32_t>());
  const int rows = static_cast<int>(r.get<std::uint32_t>());
  const int cols = static_cast<int>(r.get<std::uint32_t>());
  if (n < 1 || rows < 1 || cols < 1) fail(ErrorCode::io, "projection file: zero dims");
  const std::size_t expected =
      (static_cast<std::size_t>(n) + static_cast<std::size_t>(n) * rows * cols) * sizeof(float);
  if (r.remaining() != expected)
    fail(ErrorCode::io, "projection file: payload size does not match dims");
  std::vector<double> angles(n);
  for (auto& a : angles) a = r.f32();
  ProjectionStack stack(n, rows, cols, std::move(angles));
  for (auto& v : stack.data) {
    v = r.f32();
    if (!std::isfinite(v)) fail(ErrorCode::io, "projection file: non-finite pixel");
  }
  r.expect_end();
  return stack;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot create " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io, "write failed: " + path);
}

void write_volume(const std::string& path, const Volume& vol) {
  write_file_bytes(path, encode_volume(vol));
}

Volume read_volume(const std::string& path) {
  try {
    return decode_volume(read_file_bytes(path));
  } catch (const Error& e) {
    fail(e.code(), path + ": " + e.what());
  }
}

void write_projections(const std::string& path, const ProjectionStack& stack) {
  write_file_bytes(path, encode_projections(stack));
}

ProjectionStack read_projections(const std::string& path) {
  try {
    return decode_projections(read_file_bytes(path));
  } catch (const Error& e) {
    fail(e.code(), path + ": " + e.what());
  }
}

void write_slice_png(const std::string& path, const Image& img) {
  if (img.width < 1 || img.height < 1) fail(ErrorCode::invalid_argument, "png: empty image");
  const auto stats = volume_stats(img.data);
  const double range = stats.max - stats.min;

  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) fail(ErrorCode::io, "cannot create " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "png: write failed for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 2);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double t = range > 0 ? (img.at(x, y) - stats.min) / range : 0.0;
      const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(t, 0.0, 1.0) * 65535.0));
      row[2 * x] = static_cast<std::uint8_t>(v >> 8);  // PNG is big-endian
      row[2 * x + 1] = static_cast<std::uint8_t>(v & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);

  std::ofstream side(path + ".window.txt");
  if (!side) fail(ErrorCode::io, "cannot create " + path + ".window.txt");
  side.precision(9);
  side << stats.min << ' ' << stats.max << '\n';
}

}  // namespace tomo
