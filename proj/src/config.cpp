#include "tomoforge/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tomoforge/error.hpp"

namespace tomo {

namespace {

using nlohmann::json;

void only_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) fail(ErrorCode::config, "geometry: " + where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) fail(ErrorCode::config, "geometry: unknown key \"" + where + key + "\"");
  for (const auto& key : allowed)
    if (!obj.contains(key)) fail(ErrorCode::config, "geometry: missing key \"" + where + key + "\"");
}

template <typename T>
T number(const json& obj, const std::string& key, const std::string& where) {
  const auto& v = obj.at(key);
  if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) fail(ErrorCode::config, "geometry: \"" + where + key + "\" must be an integer");
  } else {
    if (!v.is_number()) fail(ErrorCode::config, "geometry: \"" + where + key + "\" must be a number");
  }
  return v.get<T>();
}

template <typename T, std::size_t N>
std::array<T, N> numbers(const json& obj, const std::string& key, const std::string& where) {
  const auto& v = obj.at(key);
  if (!v.is_array() || v.size() != N)
    fail(ErrorCode::config, "geometry: \"" + where + key + "\" must be an array of " + std::to_string(N));
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    const bool ok = std::is_integral_v<T> ? v[i].is_number_integer() : v[i].is_number();
    if (!ok) fail(ErrorCode::config, "geometry: \"" + where + key + "\" has a non-numeric entry");
    out[i] = v[i].get<T>();
  }
  return out;
}

}  // namespace

std::string geometry_to_json(const ConeBeamGeometry& g) {
  json doc = {
      {"schema_version", kGeometrySchemaVersion},
      {"source_origin_mm", g.dist_source_origin},
      {"source_detector_mm", g.dist_source_detector},
      {"detector",
       {{"rows", g.detector_rows},
        {"cols", g.detector_cols},
        {"pixel_mm", g.detector_pixel_size},
        {"offset_mm", g.detector_offset}}},
      {"volume", {{"dims", g.volume_dims}, {"voxel_mm", g.voxel_size}}},
  };
  return doc.dump(2) + "\n";
}

ConeBeamGeometry geometry_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::config, std::string("geometry: malformed JSON: ") + e.what());
  }
  only_keys(doc, "", {"schema_version", "source_origin_mm", "source_detector_mm", "detector", "volume"});
  const int version = number<int>(doc, "schema_version", "");
  if (version != kGeometrySchemaVersion)
    fail(ErrorCode::config, "geometry: unsupported schema_version " + std::to_string(version));
  ConeBeamGeometry g;
  g.dist_source_origin = number<double>(doc, "source_origin_mm", "");
  g.dist_source_detector = number<double>(doc, "source_detector_mm", "");
  const auto& det = doc.at("detector");
  only_keys(det, "detector.", {"rows", "cols", "pixel_mm", "offset_mm"});
  g.detector_rows = number<int>(det, "rows", "detector.");
  g.detector_cols = number<int>(det, "cols", "detector.");
  g.detector_pixel_size = numbers<double, 2>(det, "pixel_mm", "detector.");
  g.detector_offset = numbers<double, 2>(det, "offset_mm", "detector.");
  const auto& vol = doc.at("volume");
  only_keys(vol, "volume.", {"dims", "voxel_mm"});
  g.volume_dims = numbers<int, 3>(vol, "dims", "volume.");
  g.voxel_size = numbers<double, 3>(vol, "voxel_mm", "volume.");
  g.angles = {0.0};
  g.validate();
  g.angles.clear();
  return g;
}

void write_geometry(const std::string& path, const ConeBeamGeometry& geom) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, path + ": cannot open for writing");
  out << geometry_to_json(geom);
  if (!out) fail(ErrorCode::io, path + ": write failed");
}

ConeBeamGeometry read_geometry(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, path + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return geometry_from_json(ss.str());
  } catch (const Error& e) {
    fail(e.code(), path + ": " + e.what());
  }
}

}  // namespace tomo
