#include "orthoseg/edit_tools.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "planar.hpp"

namespace orthoseg {

using namespace planar;

namespace {

void check_sketch(const Sketch& s, std::size_t min_points) {
    if (s.points.size() < min_points)
        fail(ErrorKind::invalid_argument, "sketch needs at least " + std::to_string(min_points) + " points");
    for (const auto& p : s.points)
        require(std::isfinite(p.x) && std::isfinite(p.y), "sketch coordinates must be finite");
}

// Removes active edges whose two half-edges bound the same face, until none remain.
std::vector<std::vector<int>> trace_without_bridges(const Graph& g, std::vector<char>& active,
                                                    const std::vector<char>& removable) {
    while (true) {
        std::vector<int> cycle_of;
        auto cycles = trace_cycles(g, active, &cycle_of);
        bool removed = false;
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            if (!removable[e] || !active[2 * e] || !active[2 * e + 1])
                continue;
            if (cycle_of[2 * e] == cycle_of[2 * e + 1]) {
                active[2 * e] = active[2 * e + 1] = 0;
                removed = true;
            }
        }
        if (!removed)
            return cycles;
    }
}

std::vector<Segment> ring_segments(std::span<const IRing> rings, std::uint32_t tag) {
    std::vector<Segment> segs;
    for (const auto& r : rings)
        for (std::size_t i = 0, n = r.size(); i < n; ++i)
            segs.push_back({r[i], r[(i + 1) % n], tag});
    return segs;
}

std::vector<Segment> polyline_segments(const IRing& pts, bool closed, std::uint32_t tag) {
    std::vector<Segment> segs;
    const std::size_t n = pts.size();
    for (std::size_t i = 0; i + 1 < n; ++i)
        if (pts[i] != pts[i + 1])
            segs.push_back({pts[i], pts[i + 1], tag});
    if (closed && n > 2 && pts.back() != pts.front())
        segs.push_back({pts.back(), pts.front(), tag});
    return segs;
}

std::optional<Point> line_intersection(Point a, Point b, Point c, Point d) {
    const double rx = b.x - a.x, ry = b.y - a.y, sx = d.x - c.x, sy = d.y - c.y;
    const double den = rx * sy - ry * sx;
    if (std::abs(den) < 1e-12 * (std::hypot(rx, ry) * std::hypot(sx, sy) + 1e-300))
        return std::nullopt;
    const double t = ((c.x - a.x) * sy - (c.y - a.y) * sx) / den;
    return Point{a.x + t * rx, a.y + t * ry};
}

double point_segment_distance(Point p, Point a, Point b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p.x - a.x - t * vx, p.y - a.y - t * vy);
}

// Maps grid vertices of an arrangement back to full-precision coordinates: input
// vertices to their original values, and vertices on an input ring edge to the
// exact intersection of that edge with the nearest sketch segment.
class Unsnapper {
public:
    Unsnapper(const Region& region, const std::vector<Point>& sketch) : sketch_(sketch) {
        add_ring(region.outer);
        for (const auto& h : region.holes)
            add_ring(h);
        for (const auto& p : sketch)
            exact_.emplace(snap(p), p);
    }

    Point operator()(IPoint q) const {
        if (auto it = exact_.find(q); it != exact_.end())
            return it->second;
        const Point p = to_point(q);
        constexpr double tol = 2.0 / grid_scale;
        const auto* edge = nearest(p, edges_, tol);
        if (!edge)
            return p;
        std::vector<std::pair<Point, Point>> sk;
        for (std::size_t i = 0; i + 1 < sketch_.size(); ++i)
            sk.emplace_back(sketch_[i], sketch_[i + 1]);
        if (const auto* s = nearest(p, sk, tol))
            if (auto x = line_intersection(edge->first, edge->second, s->first, s->second))
                return *x;
        return p;
    }

private:
    void add_ring(const Ring& r) {
        for (std::size_t i = 0, n = r.size(); i < n; ++i) {
            exact_.emplace(snap(r[i]), r[i]);
            edges_.emplace_back(r[i], r[(i + 1) % n]);
        }
    }
    static const std::pair<Point, Point>* nearest(Point p, const std::vector<std::pair<Point, Point>>& segs, double tol) {
        const std::pair<Point, Point>* best = nullptr;
        double best_d = tol;
        for (const auto& s : segs) {
            const double d = point_segment_distance(p, s.first, s.second);
            if (d <= best_d) {
                best_d = d;
                best = &s;
            }
        }
        return best;
    }

    const std::vector<Point>& sketch_;
    std::unordered_map<IPoint, Point, IPointHash> exact_;
    std::vector<std::pair<Point, Point>> edges_;
};

Region oriented(const Region& r) {
    Region out = r;
    normalize_orientation(out);
    return out;
}

} // namespace

Sketch resample(const Sketch& sketch, double max_spacing) {
    require(max_spacing > 0, "resample spacing must be positive");
    Sketch out;
    if (sketch.points.empty())
        return out;
    out.points.push_back(sketch.points[0]);
    for (std::size_t i = 1; i < sketch.points.size(); ++i) {
        const Point a = sketch.points[i - 1], b = sketch.points[i];
        const double len = std::hypot(b.x - a.x, b.y - a.y);
        const int steps = std::max(1, static_cast<int>(std::ceil(len / max_spacing)));
        for (int k = 1; k < steps; ++k) {
            const double t = static_cast<double>(k) / steps;
            out.points.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
        }
        out.points.push_back(b);
    }
    return out;
}

Region freehand_close(const Sketch& sketch, std::uint16_t class_index) {
    check_sketch(sketch, 3);
    IRing pts;
    for (const auto& p : sketch.points)
        pts.push_back(snap(p));
    const Graph g = build_graph(split_segments(polyline_segments(pts, true, 0)));
    std::vector<char> active(g.edges.size() * 2, 1);
    const std::vector<char> removable(g.edges.size(), 1);
    const auto cycles = trace_without_bridges(g, active, removable);

    IRing best;
    i128 best_area = 0;
    for (const auto& c : cycles) {
        IRing ring = drop_collinear(cycle_points(g, c));
        const i128 a = ring.size() >= 3 ? area2(ring) : 0;
        if (a > best_area) {
            best_area = a;
            best = std::move(ring);
        }
    }
    const double area = static_cast<double>(best_area) / (2 * grid_scale * grid_scale);
    if (area < 1.0)
        fail(ErrorKind::invalid_argument, "degenerate freehand outline (area below 1 px^2)");

    Region r;
    r.class_index = class_index;
    r.provenance = Provenance::manual;
    Region none;
    const Unsnapper unsnap(none, sketch.points);
    for (const auto& q : best)
        r.outer.push_back(unsnap(q));
    return r;
}

std::vector<Region> cut(const Region& input, const Sketch& sketch) {
    check_sketch(sketch, 2);
    const Region region = oriented(input);
    const auto rings = rings_of(region);
    require(!rings.empty(), "cannot cut an empty region");

    IRing pts;
    for (const auto& p : sketch.points)
        pts.push_back(snap(p));
    auto segs = ring_segments(rings, 0);
    const auto chords = polyline_segments(pts, false, 1);
    segs.insert(segs.end(), chords.begin(), chords.end());
    const Graph g = build_graph(split_segments(std::move(segs)));

    std::vector<Segment> boundary;
    for (const auto& e : g.edges) {
        for (auto t : e.fwd)
            if (t == 0)
                boundary.push_back({g.vertices[e.u], g.vertices[e.v], 0});
        for (auto t : e.bwd)
            if (t == 0)
                boundary.push_back({g.vertices[e.v], g.vertices[e.u], 0});
    }

    std::vector<char> active(g.edges.size() * 2, 0), removable(g.edges.size(), 0);
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
        const auto& e = g.edges[i];
        const bool fwd_ring = std::count(e.fwd.begin(), e.fwd.end(), 0u) > 0;
        const bool bwd_ring = std::count(e.bwd.begin(), e.bwd.end(), 0u) > 0;
        if (fwd_ring || bwd_ring) {
            active[2 * i] = fwd_ring;
            active[2 * i + 1] = bwd_ring;
            continue;
        }
        const IPoint m = mid2(g.vertices[e.u], g.vertices[e.v]);
        if (ray_parity(m, {1, 0}, std::span<const Segment>(boundary))) {
            active[2 * i] = active[2 * i + 1] = 1;
            removable[i] = 1;
        }
    }
    const auto cycles = trace_without_bridges(g, active, removable);
    std::vector<IRing> rings_out;
    for (const auto& c : cycles)
        rings_out.push_back(cycle_points(g, c));
    const auto polys = assemble(std::move(rings_out));
    if (polys.size() < 2)
        fail(ErrorKind::invalid_argument, "no cut: the sketch does not split the region");

    const Unsnapper unsnap(region, sketch.points);
    std::vector<Region> parts;
    for (const auto& p : polys) {
        Region r;
        r.id = parts.empty() ? region.id : 0;
        r.class_index = region.class_index;
        r.provenance = Provenance::edited;
        for (const auto& q : p.outer)
            r.outer.push_back(unsnap(q));
        for (const auto& h : p.holes) {
            r.holes.emplace_back();
            for (const auto& q : h)
                r.holes.back().push_back(unsnap(q));
        }
        parts.push_back(std::move(r));
    }
    return parts;
}

// --- edit border ----------------------------------------------------------------

namespace {

struct Contact {
    double t = 0;     // position along the sketch: segment index + fraction
    int ring = 0;     // ring index within the region (0 = outer)
    double s = 0;     // position along the ring: edge index + fraction
    IPoint point;
};

std::vector<Contact> find_contacts(const std::vector<IRing>& rings, const IRing& sketch) {
    std::vector<Contact> out;
    for (std::size_t k = 0; k + 1 < sketch.size(); ++k) {
        const IPoint p0 = sketch[k], p1 = sketch[k + 1];
        for (std::size_t r = 0; r < rings.size(); ++r) {
            const IRing& ring = rings[r];
            for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
                const IPoint q0 = ring[i], q1 = ring[(i + 1) % n];
                const i128 d1 = cross(q0, q1, p0), d2 = cross(q0, q1, p1);
                const i128 d3 = cross(p0, p1, q0), d4 = cross(p0, p1, q1);
                if (d1 == 0 && d2 == 0)
                    continue; // running along the boundary is not a crossing
                if ((d1 > 0 && d2 > 0) || (d1 < 0 && d2 < 0) || (d3 > 0 && d4 > 0) || (d3 < 0 && d4 < 0))
                    continue;
                const double u = static_cast<double>(d1) / static_cast<double>(d1 - d2);
                const double v = d3 == d4 ? 0.0 : static_cast<double>(d3) / static_cast<double>(d3 - d4);
                const IPoint pt{std::llround(p0.x + u * double(p1.x - p0.x)), std::llround(p0.y + u * double(p1.y - p0.y))};
                double s = static_cast<double>(i) + v;
                if (s >= static_cast<double>(n))
                    s -= static_cast<double>(n);
                out.push_back({static_cast<double>(k) + u, static_cast<int>(r), s, pt});
            }
        }
    }
    std::sort(out.begin(), out.end(), [](const Contact& a, const Contact& b) { return a.t < b.t; });
    std::vector<Contact> dedup;
    for (const auto& c : out)
        if (dedup.empty() || !(dedup.back().point == c.point && dedup.back().ring == c.ring))
            dedup.push_back(c);
    return dedup;
}

// Ring vertices strictly after position `from` up to and including `to`, walking forward.
IRing forward_vertices(const IRing& ring, double from, double to) {
    const std::size_t n = ring.size();
    const auto fi = static_cast<std::size_t>(std::floor(from));
    const auto ti = static_cast<std::size_t>(std::floor(to));
    std::size_t count = (ti + n - fi) % n;
    if (fi == ti && to < from)
        count = n;
    IRing out;
    for (std::size_t k = 1; k <= count; ++k)
        out.push_back(ring[(fi + k) % n]);
    return out;
}

double polyline_length(const IRing& pts) {
    double s = 0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i)
        s += std::hypot(double(pts[i + 1].x - pts[i].x), double(pts[i + 1].y - pts[i].y));
    return s;
}

} // namespace

Region edit_border(const Region& input, const Sketch& raw) {
    check_sketch(raw, 2);
    Region current = oriented(input);
    const Sketch sketch = resample(raw, 2.0);
    const auto rings = rings_of(current);
    IRing pts;
    for (const auto& p : sketch.points)
        if (pts.empty() || pts.back() != snap(p))
            pts.push_back(snap(p));

    const auto contacts = find_contacts(rings, pts);
    if (contacts.size() < 2)
        fail(ErrorKind::invalid_argument, "no border contact: the sketch must cross the region boundary twice");

    const Region original = current;
    int applied = 0;
    for (std::size_t j = 0; j + 1 < contacts.size(); ++j) {
        const Contact& a = contacts[j];
        const Contact& b = contacts[j + 1];
        if (a.ring != b.ring || a.point == b.point)
            continue;

        // Sub-curve from a to b.
        IRing sub{a.point};
        for (auto k = static_cast<std::size_t>(std::floor(a.t)) + 1; static_cast<double>(k) < b.t; ++k)
            if (pts[k] != sub.back())
                sub.push_back(pts[k]);
        if (b.point != sub.back())
            sub.push_back(b.point);
        const Point probe = to_point(IPoint{(sub[0].x + sub[1].x) / 2, (sub[0].y + sub[1].y) / 2});
        const bool inside = contains(original, probe);

        // Candidate arcs back from b to a along the ring, in either direction.
        const IRing& ring = rings[a.ring];
        IRing fwd{a.point};
        for (const auto& q : forward_vertices(ring, a.s, b.s))
            fwd.push_back(q);
        fwd.push_back(b.point);
        IRing bwd{b.point};
        for (const auto& q : forward_vertices(ring, b.s, a.s))
            bwd.push_back(q);
        bwd.push_back(a.point);

        auto lobe_of = [&](bool use_forward) {
            IRing lobe = sub;
            if (use_forward) {
                for (auto it = fwd.rbegin() + 1; it + 1 != fwd.rend(); ++it)
                    lobe.push_back(*it);
            } else {
                for (auto it = bwd.begin() + 1; it + 1 != bwd.end(); ++it)
                    lobe.push_back(*it);
            }
            IRing dedup;
            for (const auto& q : lobe)
                if (dedup.empty() || dedup.back() != q)
                    dedup.push_back(q);
            while (dedup.size() > 1 && dedup.back() == dedup.front())
                dedup.pop_back();
            return dedup;
        };
        const double lf = polyline_length(fwd), lb = polyline_length(bwd);
        bool use_forward = lf < lb;
        if (std::abs(lf - lb) <= 1e-9 * std::max(lf, lb)) {
            auto abs_area = [](const IRing& r) { return r.size() < 3 ? i128(0) : (area2(r) < 0 ? -area2(r) : area2(r)); };
            use_forward = abs_area(lobe_of(true)) <= abs_area(lobe_of(false));
        }
        const IRing lobe_ring = lobe_of(use_forward);
        if (lobe_ring.size() < 3 || area2(lobe_ring) == 0)
            continue;

        Region lobe;
        lobe.class_index = current.class_index;
        lobe.outer = to_ring(lobe_ring);
        normalize_orientation(lobe);
        if (!is_valid(lobe))
            fail(ErrorKind::invalid_argument, "invalid edit: the sketched lobe intersects itself");

        std::vector<Region> result;
        if (inside) {
            result = subtract(current, lobe);
        } else {
            const Region pair[2] = {current, lobe};
            result = merge(pair);
        }
        if (result.size() != 1)
            fail(ErrorKind::invalid_argument, "invalid edit: the result would not be a single region");
        current = std::move(result[0]);
        ++applied;
    }
    if (applied == 0)
        fail(ErrorKind::invalid_argument, "no border contact: no sketch portion crosses the boundary twice");
    const Unsnapper unsnap(original, sketch.points);
    auto restore = [&](Ring& ring) {
        for (auto& v : ring)
            v = unsnap(snap(v));
    };
    restore(current.outer);
    for (auto& h : current.holes)
        restore(h);
    current.id = input.id;
    current.class_index = input.class_index;
    current.provenance = Provenance::edited;
    return current;
}

} // namespace orthoseg
