#pragma once

#include <cstdint>
#include <vector>

#include "orthoseg/region.hpp"

namespace orthoseg {

/// Open polyline drawn by the user, in sub-pixel image coordinates.
struct Sketch {
    std::vector<Point> points;
};

/// Inserts points so no two consecutive points are more than `max_spacing` apart.
Sketch resample(const Sketch& sketch, double max_spacing);

/// Closes the polyline and keeps the largest simple loop it encloses.
Region freehand_close(const Sketch& sketch, std::uint16_t class_index);

/// Splits the region along the sketch. The first part keeps the region id; the others
/// have id 0 so the caller can assign fresh ones.
std::vector<Region> cut(const Region& region, const Sketch& sketch);

/// Replaces boundary arcs by the sketch sub-curves that cross the region, removing
/// lobes cut off from inside and adding lobes drawn outside.
Region edit_border(const Region& region, const Sketch& sketch);

} // namespace orthoseg
