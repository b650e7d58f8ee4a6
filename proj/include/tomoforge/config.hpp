#pragma once

#include <string>

#include "tomoforge/geometry.hpp"

namespace tomo {

inline constexpr int kGeometrySchemaVersion = 1;

// JSON document:
//   {"schema_version": 1,
//    "source_origin_mm": .., "source_detector_mm": ..,
//    "detector": {"rows": .., "cols": .., "pixel_mm": [u, v], "offset_mm": [u, v]},
//    "volume": {"dims": [X, Y, Z], "voxel_mm": [x, y, z]}}
// Angles are not part of the document; they travel with projection stacks.
// Unknown keys, missing keys or a different schema version raise config errors.
std::string geometry_to_json(const ConeBeamGeometry& geom);
ConeBeamGeometry geometry_from_json(const std::string& text);

void write_geometry(const std::string& path, const ConeBeamGeometry& geom);
ConeBeamGeometry read_geometry(const std::string& path);

}  // namespace tomo
