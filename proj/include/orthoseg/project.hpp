#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthoseg/model.hpp"
#include "orthoseg/raster.hpp"
#include "orthoseg/region.hpp"

namespace orthoseg {

inline constexpr int project_format_version = 1;
inline constexpr std::size_t journal_depth = 64;

struct MapRecord {
    std::string id;
    /// Image path as stored: relative to the project directory when possible.
    std::string path;
    double pixel_size_mm = 1.0;
    std::string acquisition_date;
    nlohmann::json extras = nlohmann::json::object();

    friend bool operator==(const MapRecord&, const MapRecord&) = default;
};

struct RegionOp {
    enum class Kind { create, remove, replace };
    Kind kind = Kind::create;
    std::string map;     // create only
    std::int64_t id = 0; // remove and replace
    Region region;       // create and replace

    static RegionOp create(std::string map, Region r) { return {Kind::create, std::move(map), 0, std::move(r)}; }
    static RegionOp remove(std::int64_t id) { return {Kind::remove, {}, id, {}}; }
    static RegionOp replace(std::int64_t id, Region r) { return {Kind::replace, {}, id, std::move(r)}; }
};

using Transaction = std::vector<RegionOp>;

/// Rounds every vertex to 1/1000 px, the precision persisted in project and vector files.
Region quantize(Region r);

/// Annotation project: catalog, maps, per-map regions and model metadata. Region edits go
/// through apply(), which keeps a bounded undo journal.
class Project {
public:
    Project() = default;
    explicit Project(ClassCatalog catalog) : catalog_(std::move(catalog)) {}

    const ClassCatalog& catalog() const { return catalog_; }
    const std::vector<MapRecord>& maps() const { return maps_; }
    const MapRecord& map(const std::string& id) const;
    bool has_map(const std::string& id) const;
    /// Regions of one map in creation order.
    const std::vector<Region>& regions(const std::string& map) const;
    const Region& region(std::int64_t id) const;
    /// Map holding the region, throws not_found.
    const std::string& map_of(std::int64_t id) const;
    std::size_t region_count() const;
    std::int64_t next_id() const { return next_id_; }

    const std::vector<ModelHandle>& models() const { return models_; }
    void add_model(const ModelHandle& handle);

    /// Registers a map; the path is stored relative to `project_dir` when it lies below it.
    void add_map(MapRecord record, const std::filesystem::path& project_dir = {});
    /// Appends a class to the catalog.
    std::uint16_t add_class(const std::string& name, Rgb8 color);
    /// Opens a registered map relative to `project_dir`.
    OrthoMap open_map(const std::string& id, const std::filesystem::path& project_dir) const;

    /// Validates every op, then applies all of them or none. Returns the ids of created regions.
    std::vector<std::int64_t> apply(const Transaction& tx);
    void undo();
    std::size_t undo_depth() const { return journal_.size(); }

    /// Fields that are not part of the schema, preserved on save.
    nlohmann::json& extras() { return extras_; }
    const std::map<std::int64_t, nlohmann::json>& region_extras() const { return region_extras_; }

    nlohmann::json to_json() const;
    static Project from_json(const nlohmann::json& j);

    void save(const std::filesystem::path& file) const;
    static Project load(const std::filesystem::path& file);

    /// Equality of the persisted fields; coordinates compare after quantisation.
    friend bool operator==(const Project& a, const Project& b);

private:
    struct JournalEntry {
        std::map<std::string, std::vector<Region>> regions;
        std::map<std::int64_t, nlohmann::json> region_extras;
        std::int64_t next_id;
    };

    ClassCatalog catalog_;
    std::vector<MapRecord> maps_;
    std::map<std::string, std::vector<Region>> regions_;
    std::vector<ModelHandle> models_;
    std::int64_t next_id_ = 1;
    nlohmann::json extras_ = nlohmann::json::object();
    std::map<std::int64_t, nlohmann::json> region_extras_;
    std::deque<JournalEntry> journal_;
};

nlohmann::json region_to_json(const Region& r);
/// Parses a region object; `where` is the JSON pointer used in error messages.
Region region_from_json(const nlohmann::json& j, const std::string& where);

/// GeoJSON FeatureCollection with one Polygon feature per region and a `class_name` property.
nlohmann::json regions_to_geojson(std::span<const Region> regions, const ClassCatalog& catalog);
std::vector<Region> regions_from_geojson(const nlohmann::json& doc, const ClassCatalog& catalog);
void export_vector(std::span<const Region> regions, const ClassCatalog& catalog, const std::filesystem::path& path);
std::vector<Region> import_vector(const std::filesystem::path& path, const ClassCatalog& catalog);

/// Appends regions with fresh ids as one transaction.
std::vector<std::int64_t> commit_regions(Project& project, const std::string& map, std::span<const Region> regions);

} // namespace orthoseg
