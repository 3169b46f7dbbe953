#pragma once

#include <map>
#include <string>

#include "cellvit/pipeline.hpp"

namespace cellvit {

/// Names used in the GeoJSON "classification" property. Ids without an
/// entry render as "Class <id>".
std::map<std::size_t, std::string> default_class_names();

/// Writes the result JSON (schema cellvit-result/1): sorted keys, fixed
/// float formatting (4 decimals for coordinates, 6 for embeddings), so
/// identical inputs produce identical bytes. Contours are exported closed.
void export_json(const WsiResult& result, const std::string& path, bool include_embeddings);
std::string result_to_json(const WsiResult& result, bool include_embeddings);

/// Parses a result JSON back into a WsiResult (contour closing vertex is
/// stripped). Throws IoError on malformed input.
WsiResult import_json(const std::string& path);
WsiResult result_from_json(const std::string& text);

/// RFC 7946 FeatureCollection of Polygon features, coordinates in
/// (col, row) order, classification name in properties.
void export_geojson(const WsiResult& result, const std::string& path,
                    const std::map<std::size_t, std::string>& class_names = default_class_names());
std::string result_to_geojson(const WsiResult& result,
                              const std::map<std::size_t, std::string>& class_names =
                                  default_class_names());

} // namespace cellvit
