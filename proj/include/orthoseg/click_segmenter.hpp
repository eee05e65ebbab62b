#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "orthoseg/image.hpp"
#include "orthoseg/raster.hpp"
#include "orthoseg/region.hpp"

namespace orthoseg {

inline constexpr int segment_protocol_version = 1;

/// Four clicks on the leftmost, rightmost, topmost and bottommost points of an object.
struct ExtremeClicks {
    std::array<Point, 4> points;
};

struct ClickSet {
    std::vector<Point> positives;
    std::vector<Point> negatives;
    /// Existing mask being edited, same size as the window.
    std::optional<Mask> prior_mask;
};

enum class BackendKind { builtin, external };

struct SegmenterBackend {
    BackendKind kind = BackendKind::builtin;
    std::string endpoint; // e.g. http://127.0.0.1:8500
    double timeout_s = 30.0;
};


/// Segments the object outlined by extreme clicks. Click coordinates are map pixels;
/// the mask covers `window`.
Mask segment_extreme(const RasterWindow& window, const ExtremeClicks& clicks, const SegmenterBackend& backend);

/// Segments from positive and negative clicks, optionally editing a prior mask.
Mask segment_clicks(const RasterWindow& window, const ClickSet& clicks, const SegmenterBackend& backend);

/// Contract checks applied to every mask, whichever backend produced it. Throw
/// contract_violation with a description of the first failure.
void check_extreme_contract(const RasterWindow& window, const ExtremeClicks& clicks, const Mask& mask);
void check_clicks_contract(const RasterWindow& window, const ClickSet& clicks, const Mask& mask);

/// Sends the handshake and verifies the protocol version.
void handshake(const SegmenterBackend& backend);

/// Runs segment_extreme() on a map window around the clicks and returns the largest component
/// as an assisted-click region of the given class.
Region extreme_click_region(const OrthoMap& map, const ExtremeClicks& clicks, std::uint16_t class_index,
                            const SegmenterBackend& backend);

/// Runs segment_clicks() on a map window covering the clicks (and `prior`, which becomes the prior
/// mask) plus `margin` pixels. Returns the mask components as regions, largest first.
std::vector<Region> click_regions(const OrthoMap& map, const std::vector<Point>& positives,
                                  const std::vector<Point>& negatives, const std::optional<Region>& prior,
                                  std::uint16_t class_index, const SegmenterBackend& backend, int margin = 128);

} // namespace orthoseg
