#include "tomoforge/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <string>

#include "tomoforge/error.hpp"

namespace tomo {

Vec3 ConeBeamGeometry::half_extent() const {
  return {0.5 * volume_dims[0] * voxel_size[0], 0.5 * volume_dims[1] * voxel_size[1],
          0.5 * volume_dims[2] * voxel_size[2]};
}

void ConeBeamGeometry::validate() const {
  if (!(dist_source_origin > 0) || !(dist_source_detector > dist_source_origin))
    fail(ErrorCode::config, "geometry: require dist_source_detector > dist_source_origin > 0");
  if (detector_rows < 1 || detector_cols < 1)
    fail(ErrorCode::config, "geometry: detector rows/cols must be >= 1");
  if (!(detector_pixel_size[0] > 0) || !(detector_pixel_size[1] > 0))
    fail(ErrorCode::config, "geometry: detector pixel size must be > 0");
  for (int a = 0; a < 3; ++a) {
    if (volume_dims[a] < 1) fail(ErrorCode::config, "geometry: volume dims must be >= 1");
    if (!(voxel_size[a] > 0)) fail(ErrorCode::config, "geometry: voxel size must be > 0");
  }
  if (angles.empty()) fail(ErrorCode::config, "geometry: at least one view angle required");
  for (double a : angles) {
    if (!(a >= 0.0 && a < 2.0 * std::numbers::pi))
      fail(ErrorCode::config, "geometry: angle " + std::to_string(a) + " outside [0, 2pi)");
  }
}

ViewFrame view_frame(const ConeBeamGeometry& geom, std::size_t view_index) {
  if (view_index >= geom.angles.size())
    fail(ErrorCode::index, "view index " + std::to_string(view_index) + " out of range (" +
                               std::to_string(geom.angles.size()) + " views)");
  const double c = std::cos(geom.angles[view_index]);
  const double s = std::sin(geom.angles[view_index]);
  ViewFrame f;
  f.source = {geom.dist_source_origin * c, geom.dist_source_origin * s, 0.0};
  f.central_axis = {-c, -s, 0.0};
  const double det_dist = geom.dist_source_detector - geom.dist_source_origin;
  f.detector_center = {-det_dist * c, -det_dist * s, 0.0};
  f.axis_u = {-s, c, 0.0};
  f.axis_v = {0.0, 0.0, 1.0};
  return f;
}

Vec3 pixel_position(const ConeBeamGeometry& geom, const ViewFrame& frame, int row, int col) {
  const double u = (col - 0.5 * (geom.detector_cols - 1)) * geom.detector_pixel_size[0] +
                   geom.detector_offset[0];
  const double v = (row - 0.5 * (geom.detector_rows - 1)) * geom.detector_pixel_size[1] +
                   geom.detector_offset[1];
  return frame.detector_center + u * frame.axis_u + v * frame.axis_v;
}

void clip_to_volume(const ConeBeamGeometry& geom, Ray& ray) {
  const Vec3 h = geom.half_extent();
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a];
    const double d = ray.direction[a];
    const double lo = -h[a];
    const double hi = h[a];
    if (std::abs(d) < 1e-15) {
      if (o < lo || o > hi) {
        ray.s_near = ray.s_far = 0.0;
        return;
      }
      continue;
    }
    double ta = (lo - o) / d;
    double tb = (hi - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) {
    ray.s_near = ray.s_far = 0.0;
    return;
  }
  ray.s_near = t0;
  ray.s_far = t1;
}

Ray make_ray(const ConeBeamGeometry& geom, const ViewFrame& frame, int row, int col) {
  Ray ray;
  ray.origin = frame.source;
  ray.direction = normalized(pixel_position(geom, frame, row, col) - frame.source);
  clip_to_volume(geom, ray);
  return ray;
}

std::vector<Ray> rays_for_view(const ConeBeamGeometry& geom, std::size_t view_index) {
  const ViewFrame frame = view_frame(geom, view_index);
  std::vector<Ray> rays;
  rays.reserve(geom.pixels_per_view());
  for (int r = 0; r < geom.detector_rows; ++r)
    for (int c = 0; c < geom.detector_cols; ++c) rays.push_back(make_ray(geom, frame, r, c));
  return rays;
}

std::vector<double> uniform_angles(std::size_t n_views, double full_range) {
  if (n_views == 0) fail(ErrorCode::invalid_argument, "uniform_angles: n_views must be >= 1");
  std::vector<double> angles(n_views);
  for (std::size_t k = 0; k < n_views; ++k)
    angles[k] = static_cast<double>(k) * full_range / static_cast<double>(n_views);
  return angles;
}

ConeBeamGeometry default_geometry(const Dims3& dims, const Spacing3& voxel,
                                  std::vector<double> angles) {
  ConeBeamGeometry g;
  g.volume_dims = dims;
  g.voxel_size = voxel;
  g.angles = std::move(angles);
  const double ex = dims[0] * voxel[0];
  const double ey = dims[1] * voxel[1];
  const double ez = dims[2] * voxel[2];
  const double largest = std::max({ex, ey, ez});
  g.dist_source_origin = 4.0 * largest;
  g.dist_source_detector = 6.0 * largest;
  const double mag = g.dist_source_detector / g.dist_source_origin;
  const double pitch_u = mag * std::min(voxel[0], voxel[1]);
  const double pitch_v = mag * voxel[2];
  g.detector_pixel_size = {pitch_u, pitch_v};

  // In-plane: tangent to the circle enclosing the xy footprint. Axial: the
  // nearest box face edge seen from the source.
  const double r_xy = 0.5 * std::hypot(ex, ey);
  const double sin_a = r_xy / g.dist_source_origin;
  const double u_max = g.dist_source_detector * sin_a / std::sqrt(1.0 - sin_a * sin_a);
  const double v_max = g.dist_source_detector * 0.5 * ez / (g.dist_source_origin - r_xy);
  g.detector_cols = static_cast<int>(std::ceil(2.0 * u_max / pitch_u)) + 2;
  g.detector_rows = static_cast<int>(std::ceil(2.0 * v_max / pitch_v)) + 2;
  return g;
}

}  // namespace tomo
