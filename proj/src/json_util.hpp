#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "orthoseg/raster.hpp"

namespace orthoseg::jsonutil {

/// Catalog as `[{"name": ..., "color": [r, g, b]}, ...]` including entry 0.
nlohmann::json catalog_to_json(const ClassCatalog& catalog);
ClassCatalog catalog_from_json(const nlohmann::json& j, const std::string& where);

nlohmann::json rgb_to_json(Rgb8 c);
Rgb8 rgb_from_json(const nlohmann::json& j, const std::string& where);

nlohmann::json read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it over the target.
void write_atomic(const std::filesystem::path& path, const std::string& content);

} // namespace orthoseg::jsonutil
