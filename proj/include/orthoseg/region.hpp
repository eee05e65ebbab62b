#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orthoseg/image.hpp"
#include "orthoseg/raster.hpp"

namespace orthoseg {

/// Image-space point in pixels; pixel (i, j) covers [i, i+1) x [j, j+1).
struct Point {
    double x = 0, y = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Closed polygon; the closing edge back to the first vertex is implicit.
using Ring = std::vector<Point>;

enum class Provenance { manual, assisted_click, refined, automatic, imported, edited };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct BBox {
    double x = 0, y = 0, w = 0, h = 0;
};

struct RegionStats {
    double area_px = 0;
    double area_mm2 = 0;
    double perimeter_px = 0;
    double perimeter_mm = 0;
    Point centroid;
    BBox bbox;
};

/// A labelled area: outer ring with positive signed area, hole rings with negative
/// signed area, i.e. the interior always lies to the left of every directed edge.
struct Region {
    std::int64_t id = 0;
    std::uint16_t class_index = 0;
    Ring outer;
    std::vector<Ring> holes;
    Provenance provenance = Provenance::manual;
    std::optional<RegionStats> cached_stats;
};

double signed_area(const Ring& ring);
double ring_length(const Ring& ring);
BBox bounding_box(const Ring& ring);
/// Area of the outer ring minus the hole areas.
double region_area(const Region& r);

/// Reverses rings as needed so the outer is positive and holes negative.
void normalize_orientation(Region& r);
/// Orientation-normalised copy with every ring rotated to start at its smallest vertex.
Region canonical(Region r);

/// Empty string when valid, otherwise a description of the first violation.
std::string validation_error(const Region& r);
inline bool is_valid(const Region& r) { return validation_error(r).empty(); }

/// Even-odd point test against all rings of the region.
bool contains(const Region& r, Point p);

/// Pixel (x, y) of `window` is set iff its centre is inside the region. Centres on an
/// edge count when the interior lies towards +x (half-open spans [x0, x1)).
Mask rasterize(const Region& region, const PixelRect& window);

struct VectorizeOptions {
    /// Components whose pixel count is below this are dropped.
    double min_area_px = 0;
    std::uint16_t class_index = 0;
    Provenance provenance = Provenance::automatic;
};

/// Traces one region per 4-connected foreground component along pixel boundaries.
/// Holes are 8-connected background components enclosed by the foreground.
std::vector<Region> vectorize(const Mask& mask, PixelPoint origin, const VectorizeOptions& options = {});

/// Area and centroid are exact polygon quantities. Perimeter is the polygon length,
/// except that rings which are pixel staircases are measured along a
/// de-staircased curve so vectorised outlines do not report Manhattan lengths.
RegionStats compute_stats(const Region& region, double pixel_size_mm);

/// Union of same-class regions. Disjoint inputs come back as separate regions.
std::vector<Region> merge(std::span<const Region> regions);
std::vector<Region> subtract(const Region& a, const Region& b);
std::vector<Region> intersect(const Region& a, const Region& b);

/// Paints regions in order (later wins) into a raster of class indices.
LabelRaster render_labels(std::span<const Region> regions, const PixelRect& window);

} // namespace orthoseg
