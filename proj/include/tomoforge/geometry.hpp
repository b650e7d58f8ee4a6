#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace tomo {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend constexpr bool operator==(Vec3, Vec3) = default;
};

constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) { return (1.0 / norm(a)) * a; }

using Dims3 = std::array<int, 3>;
using Spacing3 = std::array<double, 3>;

inline std::size_t voxel_count(const Dims3& d) {
  return static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1]) *
         static_cast<std::size_t>(d[2]);
}

// Circular cone-beam scanner. The volume is centered at the world origin,
// the source orbits in the z = 0 plane at dist_source_origin and the flat
// detector faces it through the origin. Angles are counterclockwise from +x.
struct ConeBeamGeometry {
  double dist_source_origin = 0;    // mm
  double dist_source_detector = 0;  // mm
  int detector_rows = 0;            // along z
  int detector_cols = 0;            // along the in-plane detector axis
  std::array<double, 2> detector_pixel_size{};  // mm, {col pitch, row pitch}
  std::array<double, 2> detector_offset{};      // mm, {u, v}
  Dims3 volume_dims{};
  Spacing3 voxel_size{};
  std::vector<double> angles;  // radians

  std::size_t n_views() const { return angles.size(); }
  std::size_t pixels_per_view() const {
    return static_cast<std::size_t>(detector_rows) * static_cast<std::size_t>(detector_cols);
  }
  // Half extents of the axis-aligned volume box.
  Vec3 half_extent() const;

  // Throws config error when an invariant is violated.
  void validate() const;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit norm
  double s_near = 0;
  double s_far = 0;

  bool hits() const { return s_far > s_near; }
};

// Per-view frame: source position and detector basis.
struct ViewFrame {
  Vec3 source;
  Vec3 detector_center;
  Vec3 axis_u;        // detector column direction
  Vec3 axis_v;        // detector row direction (+z)
  Vec3 central_axis;  // unit, source toward detector
};

ViewFrame view_frame(const ConeBeamGeometry& geom, std::size_t view_index);

// World position of a detector pixel center.
Vec3 pixel_position(const ConeBeamGeometry& geom, const ViewFrame& frame, int row, int col);

// Slab intersection with the volume box; s_near = s_far = 0 on a miss.
void clip_to_volume(const ConeBeamGeometry& geom, Ray& ray);

Ray make_ray(const ConeBeamGeometry& geom, const ViewFrame& frame, int row, int col);

// Row-major grid (col fastest) of rows x cols rays for one view.
std::vector<Ray> rays_for_view(const ConeBeamGeometry& geom, std::size_t view_index);

std::vector<double> uniform_angles(std::size_t n_views, double full_range);

// A geometry whose detector covers the whole volume at every angle: source at
// four times the largest extent, magnification 1.5, detector grid matching the
// volume's in-plane/axial sample counts.
ConeBeamGeometry default_geometry(const Dims3& dims, const Spacing3& voxel,
                                  std::vector<double> angles);

}  // namespace tomo
