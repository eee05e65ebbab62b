#pragma once

// Exact planar arrangement on a 1/1024 px integer grid. Shared by the polygon
// booleans, the cut and freehand tools and region validation.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "orthoseg/region.hpp"

namespace orthoseg::planar {

using i64 = std::int64_t;
using i128 = __int128;

inline constexpr double grid_scale = 1024.0;

struct IPoint {
    i64 x = 0, y = 0;
    friend bool operator==(const IPoint&, const IPoint&) = default;
    friend auto operator<=>(const IPoint&, const IPoint&) = default;
};

struct IPointHash {
    std::size_t operator()(const IPoint& p) const noexcept {
        return std::hash<i64>{}(p.x * 0x9E3779B97F4A7C15ULL ^ (p.y + 0x632BE59BD9B4E019ULL));
    }
};

using IRing = std::vector<IPoint>;

IPoint snap(Point p);
Point to_point(IPoint p);
IRing snap(const Ring& r);
Ring to_ring(const IRing& r);

inline i128 cross(IPoint o, IPoint a, IPoint b) {
    return i128(a.x - o.x) * (b.y - o.y) - i128(a.y - o.y) * (b.x - o.x);
}

/// Twice the signed area, exact.
i128 area2(const IRing& ring);
double length(const IRing& ring);

struct Segment {
    IPoint a, b;
    std::uint32_t tag = 0;
};

/// Splits every segment at all intersections with the others. Crossing points are
/// rounded to the grid and the process repeats until no crossings remain.
std::vector<Segment> split_segments(std::vector<Segment> segs);

/// True if any segment crosses or touches the interior of another (shared endpoints are fine).
bool has_interior_contacts(std::span<const Segment> segs);

struct Graph {
    struct Edge {
        int u = 0, v = 0;                  // canonical direction u -> v
        std::vector<std::uint32_t> fwd;    // tags of input segments running u -> v
        std::vector<std::uint32_t> bwd;    // tags running v -> u
    };
    std::vector<IPoint> vertices;
    std::vector<Edge> edges;

    /// Half-edge h = 2*e + dir; dir 0 runs u -> v.
    int origin(int h) const { return h & 1 ? edges[h >> 1].v : edges[h >> 1].u; }
    int target(int h) const { return h & 1 ? edges[h >> 1].u : edges[h >> 1].v; }
};

Graph build_graph(std::span<const Segment> segs);

/// Follows active half-edges into closed cycles, always taking the sharpest left
/// turn so the face on the left of each cycle is minimal. `cycle_of` receives the
/// cycle index of every active half-edge (-1 for inactive).
std::vector<std::vector<int>> trace_cycles(const Graph& g, const std::vector<char>& active,
                                           std::vector<int>* cycle_of = nullptr);

IRing cycle_points(const Graph& g, const std::vector<int>& cycle);

/// Removes vertices where the ring continues straight on.
IRing drop_collinear(const IRing& ring);

/// Even-odd parity of the ray from `p2` (doubled coordinates) in direction `dir`
/// against the rings, ignoring edges equal to `skip` (either orientation).
bool ray_parity(IPoint p2, IPoint dir, std::span<const IRing> rings,
                std::optional<std::pair<IPoint, IPoint>> skip = std::nullopt);
bool ray_parity(IPoint p2, IPoint dir, std::span<const Segment> segs,
                std::optional<std::pair<IPoint, IPoint>> skip = std::nullopt);

/// Inside test for a point that is known not to lie on any ring edge.
inline bool inside(IPoint p, std::span<const IRing> rings) {
    return ray_parity({2 * p.x, 2 * p.y}, {1, 0}, rings);
}

/// Midpoint of a segment in doubled coordinates.
inline IPoint mid2(IPoint a, IPoint b) { return {a.x + b.x, a.y + b.y}; }

struct Polygon {
    IRing outer;
    std::vector<IRing> holes;
};

/// Groups positive cycles (outers) with the negative cycles (holes) they contain.
std::vector<Polygon> assemble(std::vector<IRing> cycles);

enum class BoolOp { unite, subtract, intersect };

/// Even-odd boolean of two ring sets whose interiors lie left of their edges.
std::vector<Polygon> boolean(std::span<const IRing> a, std::span<const IRing> b, BoolOp op);

std::vector<IRing> rings_of(const Region& r);
Region to_region(const Polygon& p, const Region& like);

} // namespace orthoseg::planar
