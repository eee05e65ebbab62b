#include "orthoseg/region.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "planar.hpp"

namespace orthoseg {

std::string to_string(Provenance p) {
    switch (p) {
    case Provenance::manual: return "manual";
    case Provenance::assisted_click: return "assisted-click";
    case Provenance::refined: return "refined";
    case Provenance::automatic: return "automatic";
    case Provenance::imported: return "imported";
    case Provenance::edited: return "edited";
    }
    return "manual";
}

Provenance provenance_from_string(const std::string& s) {
    for (auto p : {Provenance::manual, Provenance::assisted_click, Provenance::refined, Provenance::automatic,
                   Provenance::imported, Provenance::edited})
        if (to_string(p) == s)
            return p;
    fail(ErrorKind::invalid_argument, "unknown provenance '" + s + "'");
}

double signed_area(const Ring& ring) {
    if (ring.size() < 3)
        return 0;
    const Point o = ring[0];
    double s = 0;
    for (std::size_t i = 1; i + 1 < ring.size(); ++i) {
        const double ax = ring[i].x - o.x, ay = ring[i].y - o.y;
        const double bx = ring[i + 1].x - o.x, by = ring[i + 1].y - o.y;
        s += ax * by - bx * ay;
    }
    return 0.5 * s;
}

double ring_length(const Ring& ring) {
    double s = 0;
    for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
        const Point& p = ring[i];
        const Point& q = ring[(i + 1) % n];
        s += std::hypot(q.x - p.x, q.y - p.y);
    }
    return s;
}

BBox bounding_box(const Ring& ring) {
    if (ring.empty())
        return {};
    double x0 = ring[0].x, x1 = x0, y0 = ring[0].y, y1 = y0;
    for (const auto& p : ring) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    return {x0, y0, x1 - x0, y1 - y0};
}

double region_area(const Region& r) {
    double a = std::abs(signed_area(r.outer));
    for (const auto& h : r.holes)
        a -= std::abs(signed_area(h));
    return a;
}

void normalize_orientation(Region& r) {
    if (signed_area(r.outer) < 0)
        std::reverse(r.outer.begin(), r.outer.end());
    for (auto& h : r.holes)
        if (signed_area(h) > 0)
            std::reverse(h.begin(), h.end());
}

Region canonical(Region r) {
    normalize_orientation(r);
    auto rotate_min = [](Ring& ring) {
        if (ring.empty())
            return;
        auto it = std::min_element(ring.begin(), ring.end(),
                                   [](const Point& a, const Point& b) { return std::tie(a.x, a.y) < std::tie(b.x, b.y); });
        std::rotate(ring.begin(), it, ring.end());
    };
    rotate_min(r.outer);
    for (auto& h : r.holes)
        rotate_min(h);
    std::sort(r.holes.begin(), r.holes.end(), [](const Ring& a, const Ring& b) {
        return std::tie(a[0].x, a[0].y) < std::tie(b[0].x, b[0].y);
    });
    return r;
}

std::string validation_error(const Region& r) {
    using namespace planar;
    if (r.outer.size() < 3)
        return "outer ring has fewer than 3 vertices";
    if (!(signed_area(r.outer) > 0))
        return "outer ring must have positive signed area";
    for (std::size_t i = 0; i < r.holes.size(); ++i) {
        if (r.holes[i].size() < 3)
            return "hole " + std::to_string(i) + " has fewer than 3 vertices";
        if (!(signed_area(r.holes[i]) < 0))
            return "hole " + std::to_string(i) + " must have negative signed area";
    }
    const auto rings = rings_of(r);
    if (rings.size() != r.holes.size() + 1)
        return "degenerate ring after snapping";
    std::vector<Segment> segs;
    for (std::uint32_t k = 0; k < rings.size(); ++k)
        for (std::size_t i = 0, n = rings[k].size(); i < n; ++i)
            segs.push_back({rings[k][i], rings[k][(i + 1) % n], k});
    if (has_interior_contacts(segs))
        return "rings self-intersect or cross each other";
    for (std::size_t k = 1; k < rings.size(); ++k) {
        const IPoint m = mid2(rings[k][0], rings[k][1]);
        if (!ray_parity(m, {1, 0}, std::span<const IRing>(&rings[0], 1)))
            return "hole " + std::to_string(k - 1) + " is not inside the outer ring";
        for (std::size_t j = 1; j < rings.size(); ++j)
            if (j != k && ray_parity(m, {1, 0}, std::span<const IRing>(&rings[j], 1)))
                return "holes " + std::to_string(j - 1) + " and " + std::to_string(k - 1) + " overlap";
    }
    return {};
}

namespace {

bool ring_contains(const Ring& ring, Point p) {
    bool in = false;
    for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
        const Point& a = ring[i];
        const Point& b = ring[(i + 1) % n];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if (x < p.x)
                in = !in;
        }
    }
    return in;
}

} // namespace

bool contains(const Region& r, Point p) {
    bool in = ring_contains(r.outer, p);
    for (const auto& h : r.holes)
        in ^= ring_contains(h, p);
    return in;
}

Mask rasterize(const Region& region, const PixelRect& window) {
    Mask mask(window.w, window.h);
    if (window.empty())
        return mask;
    std::vector<std::vector<double>> xs(window.h);
    auto add_ring = [&](const Ring& ring) {
        for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
            const Point& a = ring[i];
            const Point& b = ring[(i + 1) % n];
            if (a.y == b.y)
                continue;
            const Point& lo = a.y < b.y ? a : b;
            const Point& hi = a.y < b.y ? b : a;
            const int j0 = std::max(0, static_cast<int>(std::ceil(lo.y - window.y - 0.5)));
            const int j1 = std::min(window.h - 1, static_cast<int>(std::ceil(hi.y - window.y - 0.5)) - 1);
            for (int j = j0; j <= j1; ++j) {
                const double yc = window.y + j + 0.5;
                xs[j].push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
    };
    add_ring(region.outer);
    for (const auto& h : region.holes)
        add_ring(h);
    for (int j = 0; j < window.h; ++j) {
        auto& row = xs[j];
        std::sort(row.begin(), row.end());
        for (std::size_t k = 0; k + 1 < row.size(); k += 2) {
            const int i0 = std::max(0, static_cast<int>(std::ceil(row[k] - window.x - 0.5)));
            const int i1 = std::min(window.w - 1, static_cast<int>(std::ceil(row[k + 1] - window.x - 0.5)) - 1);
            for (int i = i0; i <= i1; ++i)
                mask(i, j) = 1;
        }
    }
    return mask;
}

// --- vectorize ----------------------------------------------------------------

namespace {

enum Dir { east = 0, north = 1, west = 2, south = 3 };
constexpr int dx[4] = {1, 0, -1, 0};
constexpr int dy[4] = {0, 1, 0, -1};

class Tracer {
public:
    Tracer(const Mask& m) : m_(m), sides_(static_cast<std::size_t>(m.width()) * m.height(), 0) {}

    // The boundary edge leaving vertex (vx, vy) in direction d, described by the
    // foreground pixel on its left and which side of that pixel it is.
    struct Side {
        int px, py, bit;
    };
    static Side side_of(int vx, int vy, int d) {
        switch (d) {
        case east: return {vx, vy, 1};
        case north: return {vx - 1, vy, 2};
        case west: return {vx - 1, vy - 1, 4};
        default: return {vx, vy - 1, 8};
        }
    }
    static std::pair<int, int> right_pixel(int vx, int vy, int d) {
        switch (d) {
        case east: return {vx, vy - 1};
        case north: return {vx, vy};
        case west: return {vx - 1, vy};
        default: return {vx - 1, vy - 1};
        }
    }
    bool exists(int vx, int vy, int d) const {
        const Side s = side_of(vx, vy, d);
        const auto [rx, ry] = right_pixel(vx, vy, d);
        return m_.get(s.px, s.py) && !m_.get(rx, ry);
    }
    bool visited(const Side& s) const { return sides_[idx(s.px, s.py)] & s.bit; }
    void mark(const Side& s) { sides_[idx(s.px, s.py)] |= static_cast<std::uint8_t>(s.bit); }

    // Walks one closed boundary, always preferring left turns (4-connected foreground).
    std::vector<std::pair<int, int>> trace(int vx, int vy, int d) {
        std::vector<std::pair<int, int>> corners;
        const int sx = vx, sy = vy, sd = d;
        while (true) {
            mark(side_of(vx, vy, d));
            vx += dx[d];
            vy += dy[d];
            int nd = -1;
            for (int turn : {1, 0, 3}) {
                const int c = (d + turn) & 3;
                if (exists(vx, vy, c)) {
                    nd = c;
                    break;
                }
            }
            if (nd < 0)
                fail(ErrorKind::internal, "open contour while vectorizing");
            if (nd != d)
                corners.emplace_back(vx, vy);
            if (vx == sx && vy == sy && nd == sd)
                break;
            d = nd;
        }
        return corners;
    }

private:
    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * m_.width() + x; }
    const Mask& m_;
    std::vector<std::uint8_t> sides_;
};

} // namespace

std::vector<Region> vectorize(const Mask& mask, PixelPoint origin, const VectorizeOptions& options) {
    const int w = mask.width(), h = mask.height();
    std::vector<int> comp(static_cast<std::size_t>(w) * h, -1);
    std::vector<std::size_t> comp_size;
    std::queue<std::pair<int, int>> q;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask(x, y) || comp[static_cast<std::size_t>(y) * w + x] >= 0)
                continue;
            const int id = static_cast<int>(comp_size.size());
            std::size_t n = 0;
            comp[static_cast<std::size_t>(y) * w + x] = id;
            q.emplace(x, y);
            while (!q.empty()) {
                auto [cx, cy] = q.front();
                q.pop();
                ++n;
                for (int k = 0; k < 4; ++k) {
                    const int nx = cx + dx[k], ny = cy + dy[k];
                    if (mask.get(nx, ny) && comp[static_cast<std::size_t>(ny) * w + nx] < 0) {
                        comp[static_cast<std::size_t>(ny) * w + nx] = id;
                        q.emplace(nx, ny);
                    }
                }
            }
            comp_size.push_back(n);
        }

    std::vector<Region> regions(comp_size.size());
    for (auto& r : regions) {
        r.class_index = options.class_index;
        r.provenance = options.provenance;
    }
    Tracer tracer(mask);
    auto to_ring = [&](const std::vector<std::pair<int, int>>& corners) {
        Ring ring;
        ring.reserve(corners.size());
        for (auto [x, y] : corners)
            ring.push_back({double(x + origin.x), double(y + origin.y)});
        return ring;
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask(x, y))
                continue;
            // Start vertex for each of the four sides, in the Side bit order.
            const int starts[4][3] = {{x, y, east}, {x + 1, y, north}, {x + 1, y + 1, west}, {x, y + 1, south}};
            for (const auto& s : starts) {
                if (!tracer.exists(s[0], s[1], s[2]) || tracer.visited(Tracer::side_of(s[0], s[1], s[2])))
                    continue;
                Ring ring = to_ring(tracer.trace(s[0], s[1], s[2]));
                Region& r = regions[comp[static_cast<std::size_t>(y) * w + x]];
                if (signed_area(ring) > 0)
                    r.outer = std::move(ring);
                else
                    r.holes.push_back(std::move(ring));
            }
        }
    std::vector<Region> out;
    for (std::size_t i = 0; i < regions.size(); ++i)
        if (static_cast<double>(comp_size[i]) >= options.min_area_px)
            out.push_back(std::move(regions[i]));
    return out;
}

// --- statistics ---------------------------------------------------------------

namespace {

bool is_pixel_staircase(const Ring& ring) {
    for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
        const Point& p = ring[i];
        const Point& q = ring[(i + 1) % n];
        if (p.x != std::floor(p.x) || p.y != std::floor(p.y))
            return false;
        if (p.x != q.x && p.y != q.y)
            return false;
    }
    return true;
}

// Length of a staircase ring after replacing step runs by the curve through their
// edge midpoints, lightly averaged. Corners between three same-direction turns
// (rectangle corners) are kept, so axis-aligned rectangles measure exactly.
double staircase_length(const Ring& raw) {
    Ring ring;
    for (std::size_t i = 0, n = raw.size(); i < n; ++i) {
        const Point& a = raw[(i + n - 1) % n];
        const Point& b = raw[i];
        const Point& c = raw[(i + 1) % n];
        if ((b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x) != 0)
            ring.push_back(b);
    }
    const std::size_t n = ring.size();
    if (n < 4)
        return ring_length(raw);
    std::vector<int> turn(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Point& a = ring[(i + n - 1) % n];
        const Point& b = ring[i];
        const Point& c = ring[(i + 1) % n];
        turn[i] = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x) > 0 ? 1 : -1;
    }
    std::vector<char> keep(n);
    bool all_kept = true;
    for (std::size_t i = 0; i < n; ++i) {
        keep[i] = turn[(i + n - 1) % n] == turn[i] && turn[i] == turn[(i + 1) % n];
        all_kept &= keep[i] != 0;
    }
    if (all_kept)
        return ring_length(ring);
    std::vector<Point> pts;
    std::vector<char> fixed;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = (i + 1) % n;
        if (keep[i]) {
            pts.push_back(ring[i]);
            fixed.push_back(1);
        }
        if (!(keep[i] && keep[j])) {
            pts.push_back({0.5 * (ring[i].x + ring[j].x), 0.5 * (ring[i].y + ring[j].y)});
            fixed.push_back(0);
        }
    }
    const std::size_t m = pts.size();
    constexpr int half_window = 2;
    Ring smooth(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (fixed[i]) {
            smooth[i] = pts[i];
            continue;
        }
        double sx = 0, sy = 0;
        for (int k = -half_window; k <= half_window; ++k) {
            const Point& p = pts[(i + m + k) % m];
            sx += p.x;
            sy += p.y;
        }
        smooth[i] = {sx / (2 * half_window + 1), sy / (2 * half_window + 1)};
    }
    return ring_length(smooth);
}

double measured_length(const Ring& ring) { return is_pixel_staircase(ring) ? staircase_length(ring) : ring_length(ring); }

} // namespace

RegionStats compute_stats(const Region& region, double pixel_size_mm) {
    require(pixel_size_mm > 0, "pixel size must be positive");
    require(region.outer.size() >= 3, "region outer ring has fewer than 3 vertices");
    const Point o = region.outer[0];
    double a2 = 0, cx = 0, cy = 0;
    auto accumulate = [&](const Ring& ring, double orient) {
        // Rings are accumulated with the orientation the invariants demand so that a
        // mis-oriented input still measures sensibly.
        const double s = signed_area(ring);
        const double flip = (s * orient < 0) ? -1.0 : 1.0;
        for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
            const Point& p = ring[i];
            const Point& q = ring[(i + 1) % n];
            const double px = p.x - o.x, py = p.y - o.y, qx = q.x - o.x, qy = q.y - o.y;
            const double c = (px * qy - qx * py) * flip;
            a2 += c;
            cx += (px + qx) * c;
            cy += (py + qy) * c;
        }
    };
    accumulate(region.outer, 1);
    for (const auto& h : region.holes)
        accumulate(h, -1);
    const double area = 0.5 * a2;
    if (std::abs(area) < 1e-9)
        fail(ErrorKind::invalid_argument, "degenerate region (zero area)");

    RegionStats st;
    st.area_px = area;
    st.area_mm2 = area * pixel_size_mm * pixel_size_mm;
    st.perimeter_px = measured_length(region.outer);
    for (const auto& h : region.holes)
        st.perimeter_px += measured_length(h);
    st.perimeter_mm = st.perimeter_px * pixel_size_mm;
    st.centroid = {o.x + cx / (6 * area), o.y + cy / (6 * area)};
    st.bbox = bounding_box(region.outer);
    return st;
}

// --- booleans -------------------------------------------------------------------

namespace {

bool on_or_inside(planar::IPoint p, const planar::IRing& ring) {
    using namespace planar;
    for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
        const IPoint a = ring[i], b = ring[(i + 1) % n];
        if (cross(a, b, p) == 0 && std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
            std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y))
            return true;
    }
    return inside(p, std::span<const IRing>(&ring, 1));
}

std::vector<Region> polygons_to_regions(const std::vector<planar::Polygon>& polys, const Region& like) {
    std::vector<Region> out;
    for (const auto& p : polys) {
        out.push_back(planar::to_region(p, like));
        if (out.size() > 1)
            out.back().id = 0;
    }
    return out;
}

} // namespace

std::vector<Region> merge(std::span<const Region> regions) {
    using namespace planar;
    if (regions.empty())
        return {};
    for (const auto& r : regions)
        require(r.class_index == regions[0].class_index, "merge requires regions of the same class");
    std::vector<IRing> acc = rings_of(regions[0]);
    for (std::size_t i = 1; i < regions.size(); ++i) {
        const auto polys = boolean(acc, rings_of(regions[i]), BoolOp::unite);
        acc.clear();
        for (const auto& p : polys) {
            acc.push_back(p.outer);
            acc.insert(acc.end(), p.holes.begin(), p.holes.end());
        }
    }
    // Reassemble, then give each output the identity of the first input it absorbed.
    const auto polys = boolean(acc, {}, BoolOp::unite);
    std::vector<Region> out;
    for (const auto& p : polys) {
        const Region* like = &regions[0];
        for (const auto& r : regions) {
            const auto rr = rings_of(r);
            if (!rr.empty() && on_or_inside(rr[0][0], p.outer)) {
                like = &r;
                break;
            }
        }
        out.push_back(to_region(p, *like));
    }
    return out;
}

std::vector<Region> subtract(const Region& a, const Region& b) {
    return polygons_to_regions(planar::boolean(planar::rings_of(a), planar::rings_of(b), planar::BoolOp::subtract), a);
}

std::vector<Region> intersect(const Region& a, const Region& b) {
    return polygons_to_regions(planar::boolean(planar::rings_of(a), planar::rings_of(b), planar::BoolOp::intersect), a);
}

LabelRaster render_labels(std::span<const Region> regions, const PixelRect& window) {
    LabelRaster out({window.x, window.y}, window.w, window.h);
    for (const auto& r : regions) {
        const BBox bb = bounding_box(r.outer);
        const int x0 = std::max(window.x, static_cast<int>(std::floor(bb.x)));
        const int y0 = std::max(window.y, static_cast<int>(std::floor(bb.y)));
        const int x1 = std::min(window.right(), static_cast<int>(std::ceil(bb.x + bb.w)));
        const int y1 = std::min(window.bottom(), static_cast<int>(std::ceil(bb.y + bb.h)));
        if (x1 <= x0 || y1 <= y0)
            continue;
        const Mask m = rasterize(r, {x0, y0, x1 - x0, y1 - y0});
        for (int y = 0; y < m.height(); ++y)
            for (int x = 0; x < m.width(); ++x)
                if (m(x, y))
                    out(x0 - window.x + x, y0 - window.y + y) = r.class_index;
    }
    return out;
}

} // namespace orthoseg
