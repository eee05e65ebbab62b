#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "orthoseg/progress.hpp"
#include "orthoseg/raster.hpp"
#include "orthoseg/region.hpp"

namespace orthoseg {

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

enum class SplitKind { random, spatial_bands };
enum class Axis { x, y };

struct SplitCriterion {
    SplitKind kind = SplitKind::random;
    std::uint64_t seed = 42;
    Axis axis = Axis::x;
    std::array<double, 3> fractions{0.70, 0.15, 0.15};
};

struct TileEntry {
    std::string image; // relative to the dataset root
    std::string label;
    Split split = Split::train;
    PixelPoint origin;
    std::string source; // map id, or "<map id>#<k>" for merged tiles
    friend bool operator==(const TileEntry&, const TileEntry&) = default;
};

struct TileDataset {
    std::filesystem::path root;
    std::vector<TileEntry> tiles;
    int tile_size = 1024;
    int stride = 1024;
    double pixel_size_mm = 1.0;
    ClassCatalog catalog;
    SplitCriterion criterion;
    PixelRect area;
    std::string source_map;
    std::vector<std::string> warnings;

    std::size_t count(Split s) const;
};

/// Split sizes by largest-remainder rounding; equal remainders favour the later split.
std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& fractions);

/// 1-D tile origins: start, start + stride, ... while the tile fits inside [start, start + length).
std::vector<int> grid_origins(int start, int length, int tile, int stride);

/// Cuts the area into image/label tile pairs, assigns splits and writes `dataset.json`.
/// Regions are rendered in the given order, later ones winning overlaps.
TileDataset export_dataset(const OrthoMap& map, std::span<const Region> regions, const ClassCatalog& catalog,
                           const PixelRect& area, const SplitCriterion& criterion, int tile_size, int stride,
                           const std::filesystem::path& out_dir, const Progress& progress = {});

void write_manifest(const TileDataset& ds);
TileDataset load_dataset(const std::filesystem::path& dir);

/// Resamples both datasets to `target_pixel_size_mm` (bilinear images, nearest labels),
/// pads or crops tiles to the first dataset's tile size and writes a merged dataset.
TileDataset merge_datasets(const TileDataset& a, const TileDataset& b, double target_pixel_size_mm,
                           const std::filesystem::path& out_dir);

/// Bilinear resize with pixel-centre alignment.
ImageRgb resize_bilinear(const ImageRgb& img, int w, int h);
ImageRgb resize_nearest(const ImageRgb& img, int w, int h);

} // namespace orthoseg
