#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "orthoseg/model.hpp"
#include "orthoseg/progress.hpp"
#include "orthoseg/raster.hpp"
#include "orthoseg/region.hpp"

namespace orthoseg {

/// Largest area (in pixels) returned as an in-memory raster; larger areas must stream.
inline constexpr std::int64_t max_in_memory_pixels = std::int64_t{8192} * 8192;

struct InferenceConfig {
    int tile_size = 1024;
    int stride = 512;
    double weight_floor = 1e-6;
    int min_region_px = 4;
    /// Shift of the tile grid relative to the area origin.
    PixelPoint grid_offset;
    /// Parallel tile predictions; 0 uses the hardware concurrency.
    int workers = 0;
};

/// h(i) = max(floor, 0.5 - 0.5 cos(2 pi (i + 0.5) / T)) for i in [0, T).
std::vector<float> window_weights_1d(int size, double floor);
/// Separable T x T window w(x, y) = h(x) h(y), row-major.
std::vector<float> window_weight(int size, double floor);

/// Tile origins along one axis: grid positions start + offset + k * stride whose tile meets
/// [start, start + length), clamped into the range and deduplicated.
std::vector<int> tile_origins(int start, int length, int tile, int stride, int offset = 0);

/// Receives finished label rows top to bottom; `y` is relative to the area.
using LabelRowSink = std::function<void(int y, std::span<const std::uint16_t> labels)>;

/// Sliding-window prediction with raised-cosine blending. Rows are accumulated in bands
/// and handed to `sink` once no later tile overlaps them. Output is independent of the
/// worker count.
void run_tiled(const OrthoMap& map, const PixelClassifier& model, const PixelRect& area, const InferenceConfig& config,
               const LabelRowSink& sink, const Progress& progress = {});

struct InferenceResult {
    LabelRaster raster;
    std::vector<Region> regions;
};

/// In-memory inference plus vectorisation; the model must match the catalog.
InferenceResult run_inference(const OrthoMap& map, const PixelClassifier& model, const ClassCatalog& catalog,
                              const PixelRect& area, const InferenceConfig& config = {}, const Progress& progress = {});

/// Label raster for the part of `area` inside the map, without vectorisation.
LabelRaster preview(const OrthoMap& map, const PixelClassifier& model, const PixelRect& area,
                    const InferenceConfig& config = {}, const Progress& progress = {});

/// Streams a colour-coded label map of `area` to a PNG without holding the area in memory.
void infer_to_png(const OrthoMap& map, const PixelClassifier& model, const ClassCatalog& catalog, const PixelRect& area,
                  const InferenceConfig& config, const std::filesystem::path& out, const Progress& progress = {});

/// One region per connected component of every class, dropping components below `min_region_px`.
std::vector<Region> regions_from_labels(const LabelRaster& labels, std::size_t classes, int min_region_px);

} // namespace orthoseg
