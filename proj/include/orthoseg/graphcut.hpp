#pragma once

#include <cstdint>
#include <vector>

#include "orthoseg/image.hpp"
#include "orthoseg/maxflow.hpp"
#include "orthoseg/raster.hpp"
#include "orthoseg/region.hpp"

namespace orthoseg {

struct RefineParams {
    int band_width = 30;  // px
    double lambda = 50.0; // pairwise weight
    int hist_bins = 16;   // per channel
};

void validate(const RefineParams& p);

/// Squared Euclidean distance from every pixel centre to the nearest pixel of `seeds`
/// (exact separable two-pass transform). Pixels are at infinity when there are no seeds.
std::vector<double> squared_distance_transform(const Mask& seeds);

/// Pixels that have a 4-neighbour with a different mask value (both sides of the boundary).
Mask boundary_pixels(const Mask& mask);

/// Per-pixel role in a binary cut.
enum class PixelRole : std::uint8_t { free, foreground, background };

/// Pixel labelling problem: free pixels become flow nodes; fixed pixels supply the
/// colour models and fold their pairwise terms into the terminal arcs.
struct PixelCut {
    int width = 0, height = 0;
    std::vector<PixelRole> roles;
    /// Node index per pixel, -1 for fixed pixels. Terminals are the last two nodes.
    std::vector<int> node_of;
    FlowNetwork network{2, 0, 1};
    double beta = 0;
};

/// Builds the min-cut network for the given roles. Unaries are -log of add-one
/// smoothed RGB histograms over the fixed foreground and background pixels.
PixelCut build_pixel_cut(const ImageRgb& image, std::vector<PixelRole> roles, double lambda, int hist_bins);

/// Solves the cut and returns the foreground mask (fixed foreground plus free pixels on the source side).
Mask solve_pixel_cut(const PixelCut& cut);

/// Distance from every pixel centre of `window` to the nearest edge of the region's rings.
/// Pixels farther than `radius` are at infinity.
std::vector<double> ring_distance(const Region& region, const PixelRect& window, double radius);

/// Band-limited refinement network for `region` over `window`: pixels lying entirely within
/// band_width of the input boundary are free, the others are fixed to their current side.
PixelCut build_refine_network(const RasterWindow& window, const Region& region, const RefineParams& params);

/// Refines a region inside `window` (level-0 pixels). The result keeps the id and
/// class of the input, has provenance `refined`, and is the largest component of the cut.
Region refine(const RasterWindow& window, const Region& region, const RefineParams& params = {});

/// Window around the region's bounding box with a margin of band_width + 2 pixels, clipped to the map.
PixelRect refine_window(const Region& region, int band_width, const PixelRect& map_bounds);

/// Reads refine_window() from the map at full resolution and refines the region there.
Region refine_on_map(const OrthoMap& map, const Region& region, const RefineParams& params = {});

} // namespace orthoseg
