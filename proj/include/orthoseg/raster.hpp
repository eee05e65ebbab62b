#pragma once

#include <cstdint>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "orthoseg/image.hpp"

namespace orthoseg {

inline constexpr int max_map_dimension = 1 << 20;
inline constexpr int pyramid_tile_size = 256;

struct ClassEntry {
    std::string name;
    Rgb8 color;
    friend bool operator==(const ClassEntry&, const ClassEntry&) = default;
};

/// Ordered list of annotation classes. Entry 0 is always ("unlabeled", black).
class ClassCatalog {
public:
    ClassCatalog();

    /// Appends a class; names and colours must be unique.
    std::uint16_t add(std::string name, Rgb8 color);

    std::size_t size() const { return entries_.size(); }
    const ClassEntry& operator[](std::size_t i) const { return entries_.at(i); }
    const std::vector<ClassEntry>& entries() const { return entries_; }

    std::optional<std::uint16_t> find(const std::string& name) const;
    std::optional<std::uint16_t> find(Rgb8 color) const;

    friend bool operator==(const ClassCatalog&, const ClassCatalog&) = default;

private:
    std::vector<ClassEntry> entries_;
};

/// Dense class-index raster covering a rectangle of a map.
struct LabelRaster {
    PixelPoint origin;
    int width = 0, height = 0;
    std::vector<std::uint16_t> labels;

    LabelRaster() = default;
    LabelRaster(PixelPoint o, int w, int h, std::uint16_t fill = 0)
        : origin(o), width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill) {}

    std::uint16_t operator()(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::uint16_t& operator()(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
    PixelRect rect() const { return {origin.x, origin.y, width, height}; }

    friend bool operator==(const LabelRaster&, const LabelRaster&) = default;
};

/// Pixels read from one pyramid level of a map.
struct RasterWindow {
    PixelPoint origin;
    int level = 0;
    ImageRgb pixels;

    int width() const { return pixels.width(); }
    int height() const { return pixels.height(); }
};

struct OrthoMapInfo {
    std::string id;
    int width = 0, height = 0;
    double pixel_size_mm = 1.0;
    std::string acquisition_date; // ISO yyyy-mm-dd, may be empty
    std::filesystem::path source_path;
    int pyramid_levels = 1;
};

/// Number of power-of-two levels needed until the image fits one cache tile.
int pyramid_level_count(int width, int height);

/// An opened orthoimage. Pixels are served from the `<image>.pyr/` tile cache, so the
/// full image is never resident. Reads are thread-safe.
class OrthoMap {
public:
    OrthoMap(OrthoMapInfo info, std::filesystem::path cache_dir);

    const OrthoMapInfo& info() const { return info_; }
    const std::string& id() const { return info_.id; }
    int width() const { return info_.width; }
    int height() const { return info_.height; }
    double pixel_size_mm() const { return info_.pixel_size_mm; }
    int levels() const { return info_.pyramid_levels; }
    const std::filesystem::path& cache_dir() const { return cache_dir_; }

    /// Dimensions of pyramid level L: ceil(width / 2^L) x ceil(height / 2^L).
    std::pair<int, int> level_size(int level) const;
    std::pair<int, int> level_tiles(int level) const;
    std::filesystem::path tile_path(int level, int tx, int ty) const;

    RasterWindow read_window(PixelPoint origin, int w, int h, int level = 0) const;

private:
    std::shared_ptr<const ImageRgb> tile(int level, int tx, int ty) const;

    OrthoMapInfo info_;
    std::filesystem::path cache_dir_;

    struct TileCache {
        std::mutex mutex;
        std::list<std::pair<std::uint64_t, std::shared_ptr<const ImageRgb>>> lru;
        std::unordered_map<std::uint64_t, decltype(lru)::iterator> index;
    };
    std::shared_ptr<TileCache> cache_ = std::make_shared<TileCache>();
};

struct OpenOptions {
    std::string id;               // defaults to the file stem
    std::string acquisition_date; // optional
    bool rebuild_pyramid = false;
};

/// Opens a PNG orthoimage, building its sidecar tile pyramid on first use.
OrthoMap open_orthomap(const std::filesystem::path& path, double pixel_size_mm, const OpenOptions& options = {});

/// Convenience wrapper around OrthoMap::read_window.
inline RasterWindow read_window(const OrthoMap& map, PixelPoint origin, int w, int h, int level = 0) {
    return map.read_window(origin, w, h, level);
}

struct LabelImport {
    LabelRaster raster;
    /// Colours not present in the catalog with their pixel counts (lenient mode only).
    std::vector<std::pair<Rgb8, std::size_t>> unmatched;
};

/// Reads a colour-coded PNG label map; each pixel colour must match a catalog colour exactly.
LabelImport import_labelmap(const std::filesystem::path& path, const ClassCatalog& catalog, const PixelRect& window,
                            bool strict);

void export_labelmap(const LabelRaster& raster, const ClassCatalog& catalog, const std::filesystem::path& path);

ImageRgb colorize(const LabelRaster& raster, const ClassCatalog& catalog);

std::string format_rgb(Rgb8 c);

} // namespace orthoseg
