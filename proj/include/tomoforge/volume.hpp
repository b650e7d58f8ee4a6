#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tomoforge/geometry.hpp"

namespace tomo {

// Dense density grid, x fastest then y then z. Units: mm^-1.
struct Volume {
  Dims3 dims{};
  Spacing3 spacing{1.0, 1.0, 1.0};
  std::vector<double> data;

  Volume() = default;
  explicit Volume(const Dims3& d, double fill = 0.0, const Spacing3& s = {1.0, 1.0, 1.0})
      : dims(d), spacing(s), data(voxel_count(d), fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
  }
  double& at(int x, int y, int z) { return data[index(x, y, z)]; }
  double at(int x, int y, int z) const { return data[index(x, y, z)]; }
};

// 2D scalar image, column (x) fastest.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

enum class SliceAxis : std::uint32_t { axial = 0, coronal = 1, sagittal = 2 };

const char* axis_name(SliceAxis axis);

// A volume slice; in-plane dims are (X, Y) axial, (X, Z) coronal, (Y, Z)
// sagittal.
struct SliceImage : Image {
  SliceAxis axis = SliceAxis::axial;
  int index = 0;

  SliceImage() = default;
  SliceImage(int w, int h, SliceAxis a, int idx, double fill = 0.0)
      : Image(w, h, fill), axis(a), index(idx) {}
};

// Log-domain projections: col fastest, then row, then view.
struct ProjectionStack {
  int n_views = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> angles;
  std::vector<double> data;

  ProjectionStack() = default;
  ProjectionStack(int n, int r, int c, std::vector<double> a)
      : n_views(n), rows(r), cols(c), angles(std::move(a)),
        data(static_cast<std::size_t>(n) * r * c, 0.0) {}

  std::size_t pixels_per_view() const { return static_cast<std::size_t>(rows) * cols; }
  std::span<double> view(int i) {
    return {data.data() + pixels_per_view() * i, pixels_per_view()};
  }
  std::span<const double> view(int i) const {
    return {data.data() + pixels_per_view() * i, pixels_per_view()};
  }
  Image view_image(int i) const;
};

int axis_extent(const Dims3& dims, SliceAxis axis);

SliceImage extract_slice(const Volume& vol, SliceAxis axis, int index);
std::vector<SliceImage> extract_slices(const Volume& vol, SliceAxis axis);
Volume stack_slices(const std::vector<SliceImage>& slices, SliceAxis axis,
                    const Spacing3& spacing = {1.0, 1.0, 1.0});

// Separable bilinear resampling with half-pixel centers (align-corners off),
// edge samples clamped.
Image resample_bilinear(const Image& img, int new_width, int new_height);
SliceImage resample_bilinear(const SliceImage& img, int new_width, int new_height);

// PSNR in dB with peak = max of the reference operand. Identical inputs give
// +infinity.
double psnr(std::span<const double> test, std::span<const double> reference);
double psnr(const Volume& test, const Volume& reference);

struct VolumeStats {
  double min = 0, max = 0, mean = 0, stddev = 0;
};
VolumeStats volume_stats(std::span<const double> values);

void clamp_nonneg(Volume& vol);
// Min-max normalization to [0, 1]; a constant volume maps to zeros.
void normalize_minmax(Volume& vol);

// --- on-disk formats -------------------------------------------------------

std::vector<std::uint8_t> encode_volume(const Volume& vol);
Volume decode_volume(std::span<const std::uint8_t> bytes);
void write_volume(const std::string& path, const Volume& vol);
Volume read_volume(const std::string& path);

std::vector<std::uint8_t> encode_projections(const ProjectionStack& stack);
ProjectionStack decode_projections(std::span<const std::uint8_t> bytes);
void write_projections(const std::string& path, const ProjectionStack& stack);
ProjectionStack read_projections(const std::string& path);

// 16-bit grayscale PNG windowed to the image's [min, max]; the window is
// written to "<path>.window.txt" as "min max".
void write_slice_png(const std::string& path, const Image& img);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace tomo
