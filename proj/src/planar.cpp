#include "planar.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace orthoseg::planar {

namespace {

constexpr int max_snap_rounds = 16;

i128 dot(IPoint o, IPoint a, IPoint b) { return i128(a.x - o.x) * (b.x - o.x) + i128(a.y - o.y) * (b.y - o.y); }

int sign(i128 v) { return (v > 0) - (v < 0); }

// Strictly between a and b on the (assumed collinear) segment.
bool strictly_inside(IPoint p, IPoint a, IPoint b) {
    if (p == a || p == b)
        return false;
    return dot(a, p, b) > 0 && dot(b, p, a) > 0;
}

i64 round_div(i128 num, i128 den) {
    if (den < 0)
        num = -num, den = -den;
    const i128 half = den / 2;
    return static_cast<i64>(num >= 0 ? (num + half) / den : -((-num + half) / den));
}

struct Bounds {
    i64 minx, maxx, miny, maxy;
};

Bounds bounds_of(const Segment& s) {
    return {std::min(s.a.x, s.b.x), std::max(s.a.x, s.b.x), std::min(s.a.y, s.b.y), std::max(s.a.y, s.b.y)};
}

// Records split points for segments s and t. Returns true if anything was added.
bool intersect_pair(const Segment& s, const Segment& t, std::vector<IPoint>& cut_s, std::vector<IPoint>& cut_t) {
    const IPoint a = s.a, b = s.b, c = t.a, d = t.b;
    const int o1 = sign(cross(a, b, c)), o2 = sign(cross(a, b, d));
    const int o3 = sign(cross(c, d, a)), o4 = sign(cross(c, d, b));
    bool any = false;
    auto add = [&](std::vector<IPoint>& cuts, IPoint p) {
        cuts.push_back(p);
        any = true;
    };
    if (o1 == 0 && o2 == 0) {
        if (strictly_inside(c, a, b)) add(cut_s, c);
        if (strictly_inside(d, a, b)) add(cut_s, d);
        if (strictly_inside(a, c, d)) add(cut_t, a);
        if (strictly_inside(b, c, d)) add(cut_t, b);
        return any;
    }
    if (o1 == 0 && strictly_inside(c, a, b)) add(cut_s, c);
    if (o2 == 0 && strictly_inside(d, a, b)) add(cut_s, d);
    if (o3 == 0 && strictly_inside(a, c, d)) add(cut_t, a);
    if (o4 == 0 && strictly_inside(b, c, d)) add(cut_t, b);
    if (o1 * o2 < 0 && o3 * o4 < 0) {
        const i128 num = i128(c.x - a.x) * (d.y - c.y) - i128(c.y - a.y) * (d.x - c.x);
        const i128 den = i128(b.x - a.x) * (d.y - c.y) - i128(b.y - a.y) * (d.x - c.x);
        const IPoint p{a.x + round_div(i128(b.x - a.x) * num, den), a.y + round_div(i128(b.y - a.y) * num, den)};
        if (p != a && p != b) add(cut_s, p);
        if (p != c && p != d) add(cut_t, p);
    }
    return any;
}

// Calls fn(i, j) for every pair whose bounding boxes overlap.
template <class Fn>
void for_each_candidate_pair(std::span<const Segment> segs, Fn&& fn) {
    std::vector<int> order(segs.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Bounds> bb(segs.size());
    for (std::size_t i = 0; i < segs.size(); ++i)
        bb[i] = bounds_of(segs[i]);
    std::sort(order.begin(), order.end(), [&](int l, int r) { return bb[l].minx < bb[r].minx; });
    for (std::size_t ii = 0; ii < order.size(); ++ii) {
        const int i = order[ii];
        for (std::size_t jj = ii + 1; jj < order.size(); ++jj) {
            const int j = order[jj];
            if (bb[j].minx > bb[i].maxx)
                break;
            if (bb[j].miny > bb[i].maxy || bb[j].maxy < bb[i].miny)
                continue;
            if (fn(i, j))
                return;
        }
    }
}

} // namespace

IPoint snap(Point p) { return {std::llround(p.x * grid_scale), std::llround(p.y * grid_scale)}; }
Point to_point(IPoint p) { return {static_cast<double>(p.x) / grid_scale, static_cast<double>(p.y) / grid_scale}; }

IRing snap(const Ring& r) {
    IRing out;
    out.reserve(r.size());
    for (const auto& p : r) {
        const IPoint q = snap(p);
        if (out.empty() || out.back() != q)
            out.push_back(q);
    }
    while (out.size() > 1 && out.front() == out.back())
        out.pop_back();
    return out;
}

Ring to_ring(const IRing& r) {
    Ring out;
    out.reserve(r.size());
    for (const auto& p : r)
        out.push_back(to_point(p));
    return out;
}

i128 area2(const IRing& ring) {
    i128 s = 0;
    for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
        const IPoint& p = ring[i];
        const IPoint& q = ring[(i + 1) % n];
        s += i128(p.x) * q.y - i128(q.x) * p.y;
    }
    return s;
}

double length(const IRing& ring) {
    double s = 0;
    for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
        const IPoint& p = ring[i];
        const IPoint& q = ring[(i + 1) % n];
        s += std::hypot(double(q.x - p.x), double(q.y - p.y));
    }
    return s / grid_scale;
}

std::vector<Segment> split_segments(std::vector<Segment> segs) {
    std::erase_if(segs, [](const Segment& s) { return s.a == s.b; });
    for (int round = 0; round < max_snap_rounds; ++round) {
        std::vector<std::vector<IPoint>> cuts(segs.size());
        bool any = false;
        for_each_candidate_pair(segs, [&](int i, int j) {
            any |= intersect_pair(segs[i], segs[j], cuts[i], cuts[j]);
            return false;
        });
        if (!any)
            break;
        std::vector<Segment> next;
        next.reserve(segs.size() * 2);
        for (std::size_t i = 0; i < segs.size(); ++i) {
            const Segment& s = segs[i];
            auto& c = cuts[i];
            if (c.empty()) {
                next.push_back(s);
                continue;
            }
            std::sort(c.begin(), c.end(), [&](IPoint l, IPoint r) { return dot(s.a, l, s.b) < dot(s.a, r, s.b); });
            c.erase(std::unique(c.begin(), c.end()), c.end());
            IPoint prev = s.a;
            for (IPoint p : c) {
                if (p == prev || p == s.b)
                    continue;
                next.push_back({prev, p, s.tag});
                prev = p;
            }
            if (prev != s.b)
                next.push_back({prev, s.b, s.tag});
        }
        segs = std::move(next);
    }
    return segs;
}

bool has_interior_contacts(std::span<const Segment> segs) {
    bool found = false;
    std::vector<IPoint> ca, cb;
    for_each_candidate_pair(segs, [&](int i, int j) {
        ca.clear();
        cb.clear();
        const Segment& s = segs[i];
        const Segment& t = segs[j];
        // Identical or reversed duplicates count as contact.
        if ((s.a == t.a && s.b == t.b) || (s.a == t.b && s.b == t.a))
            found = true;
        else if (intersect_pair(s, t, ca, cb))
            found = true;
        return found;
    });
    return found;
}

Graph build_graph(std::span<const Segment> segs) {
    Graph g;
    std::unordered_map<IPoint, int, IPointHash> vid;
    auto vertex = [&](IPoint p) {
        auto [it, inserted] = vid.emplace(p, static_cast<int>(g.vertices.size()));
        if (inserted)
            g.vertices.push_back(p);
        return it->second;
    };
    std::unordered_map<std::uint64_t, int> eid;
    for (const auto& s : segs) {
        const int a = vertex(s.a), b = vertex(s.b);
        if (a == b)
            continue;
        const int u = std::min(a, b), v = std::max(a, b);
        const std::uint64_t key = (std::uint64_t(u) << 32) | std::uint32_t(v);
        auto [it, inserted] = eid.emplace(key, static_cast<int>(g.edges.size()));
        if (inserted)
            g.edges.push_back({u, v, {}, {}});
        auto& e = g.edges[it->second];
        (a == u ? e.fwd : e.bwd).push_back(s.tag);
    }
    return g;
}

namespace {

// Half-plane index for angular ordering in [0, 2pi).
int half(IPoint v) { return (v.y < 0 || (v.y == 0 && v.x < 0)) ? 1 : 0; }

bool angle_less(IPoint a, IPoint b) {
    const int ha = half(a), hb = half(b);
    if (ha != hb)
        return ha < hb;
    return i128(a.x) * b.y - i128(a.y) * b.x > 0;
}

} // namespace

std::vector<std::vector<int>> trace_cycles(const Graph& g, const std::vector<char>& active, std::vector<int>* cycle_of) {
    const int nh = static_cast<int>(g.edges.size() * 2);
    std::vector<std::vector<int>> out_of(g.vertices.size());
    for (int h = 0; h < nh; ++h)
        if (active[h])
            out_of[g.origin(h)].push_back(h);

    auto dir = [&](int h) {
        const IPoint a = g.vertices[g.origin(h)], b = g.vertices[g.target(h)];
        return IPoint{b.x - a.x, b.y - a.y};
    };
    auto next_of = [&](int h) {
        const auto& cands = out_of[g.target(h)];
        const IPoint d = dir(h);
        const IPoint r{-d.x, -d.y};
        int best_lo = -1, best_hi = -1, reverse = -1;
        for (int c : cands) {
            const IPoint e = dir(c);
            if (angle_less(e, r)) {
                if (best_lo < 0 || angle_less(dir(best_lo), e))
                    best_lo = c;
            } else if (angle_less(r, e)) {
                if (best_hi < 0 || angle_less(dir(best_hi), e))
                    best_hi = c;
            } else {
                reverse = c;
            }
        }
        return best_lo >= 0 ? best_lo : best_hi >= 0 ? best_hi : reverse;
    };

    std::vector<int> owner(nh, -1);
    std::vector<std::vector<int>> cycles;
    for (int start = 0; start < nh; ++start) {
        if (!active[start] || owner[start] >= 0)
            continue;
        const int idx = static_cast<int>(cycles.size());
        std::vector<int> cyc;
        int h = start;
        while (h >= 0 && owner[h] < 0) {
            owner[h] = idx;
            cyc.push_back(h);
            h = next_of(h);
        }
        cycles.push_back(std::move(cyc));
    }
    if (cycle_of)
        *cycle_of = std::move(owner);
    return cycles;
}

IRing cycle_points(const Graph& g, const std::vector<int>& cycle) {
    IRing r;
    r.reserve(cycle.size());
    for (int h : cycle)
        r.push_back(g.vertices[g.origin(h)]);
    return r;
}

IRing drop_collinear(const IRing& ring) {
    IRing r = ring;
    bool changed = true;
    while (changed && r.size() >= 3) {
        changed = false;
        IRing out;
        const std::size_t n = r.size();
        for (std::size_t i = 0; i < n; ++i) {
            const IPoint& p = r[(i + n - 1) % n];
            const IPoint& q = r[i];
            const IPoint& s = r[(i + 1) % n];
            if (cross(p, q, s) == 0 && dot(q, p, s) < 0) {
                changed = true;
                continue;
            }
            out.push_back(q);
        }
        r = std::move(out);
    }
    return r;
}

namespace {

struct RayTest {
    IPoint p2, dir;
    bool axis_x;
    std::optional<std::pair<IPoint, IPoint>> skip;

    bool crosses(IPoint a, IPoint b) const {
        if (skip && ((a == skip->first && b == skip->second) || (a == skip->second && b == skip->first)))
            return false;
        const IPoint A{2 * a.x, 2 * a.y}, B{2 * b.x, 2 * b.y};
        if (axis_x && A.x < p2.x && B.x < p2.x)
            return false;
        const bool sa = i128(dir.x) * (A.y - p2.y) - i128(dir.y) * (A.x - p2.x) > 0;
        const bool sb = i128(dir.x) * (B.y - p2.y) - i128(dir.y) * (B.x - p2.x) > 0;
        if (sa == sb)
            return false;
        const i128 num = i128(A.x - p2.x) * (B.y - A.y) - i128(A.y - p2.y) * (B.x - A.x);
        const i128 den = i128(dir.x) * (B.y - A.y) - i128(dir.y) * (B.x - A.x);
        return num != 0 && (num > 0) == (den > 0);
    }
};

} // namespace

bool ray_parity(IPoint p2, IPoint dir, std::span<const IRing> rings, std::optional<std::pair<IPoint, IPoint>> skip) {
    const RayTest t{p2, dir, dir.y == 0 && dir.x > 0, skip};
    bool parity = false;
    for (const auto& ring : rings)
        for (std::size_t i = 0, n = ring.size(); i < n; ++i)
            parity ^= t.crosses(ring[i], ring[(i + 1) % n]);
    return parity;
}

bool ray_parity(IPoint p2, IPoint dir, std::span<const Segment> segs, std::optional<std::pair<IPoint, IPoint>> skip) {
    const RayTest t{p2, dir, dir.y == 0 && dir.x > 0, skip};
    bool parity = false;
    for (const auto& s : segs)
        parity ^= t.crosses(s.a, s.b);
    return parity;
}

std::vector<Polygon> assemble(std::vector<IRing> cycles) {
    std::vector<Polygon> polys;
    std::vector<IRing> holes;
    std::vector<i128> areas;
    for (auto& c : cycles) {
        c = drop_collinear(c);
        if (c.size() < 3)
            continue;
        const i128 a = area2(c);
        if (a > 0) {
            polys.push_back({std::move(c), {}});
            areas.push_back(a);
        } else if (a < 0) {
            holes.push_back(std::move(c));
        }
    }
    for (auto& h : holes) {
        // A hole edge midpoint never lies on another output edge.
        const IPoint m = mid2(h[0], h[1]);
        int best = -1;
        for (std::size_t i = 0; i < polys.size(); ++i) {
            const IRing* outer = &polys[i].outer;
            if (ray_parity(m, {1, 0}, std::span<const IRing>(outer, 1)) && (best < 0 || areas[i] < areas[best]))
                best = static_cast<int>(i);
        }
        if (best >= 0)
            polys[best].holes.push_back(std::move(h));
    }
    return polys;
}

std::vector<Polygon> boolean(std::span<const IRing> a, std::span<const IRing> b, BoolOp op) {
    std::vector<Segment> segs;
    auto add = [&](std::span<const IRing> rings, std::uint32_t tag) {
        for (const auto& r : rings)
            for (std::size_t i = 0, n = r.size(); i < n; ++i)
                segs.push_back({r[i], r[(i + 1) % n], tag});
    };
    add(a, 0);
    add(b, 1);
    const Graph g = build_graph(split_segments(std::move(segs)));

    // Membership is decided against the split (snap-rounded) boundaries so it agrees
    // with the arrangement exactly.
    std::vector<Segment> bound[2];
    for (const auto& e : g.edges)
        for (const auto* tags : {&e.fwd, &e.bwd})
            for (auto t : *tags)
                bound[t].push_back({g.vertices[e.u], g.vertices[e.v], t});

    auto side_membership = [&](const Graph::Edge& e, std::uint32_t tag) {
        const std::span<const Segment> rings = bound[tag];
        int f = 0, bk = 0;
        for (auto t : e.fwd) f += t == tag;
        for (auto t : e.bwd) bk += t == tag;
        const IPoint u = g.vertices[e.u], v = g.vertices[e.v];
        const IPoint m = mid2(u, v);
        if (f + bk == 0) {
            const bool in = ray_parity(m, {1, 0}, rings);
            return std::pair{in, in};
        }
        if (f - bk == 1)
            return std::pair{true, false};
        if (bk - f == 1)
            return std::pair{false, true};
        const IPoint n{-(v.y - u.y), v.x - u.x};
        const auto skip = std::pair{u, v};
        return std::pair{ray_parity(m, n, rings, skip), ray_parity(m, {-n.x, -n.y}, rings, skip)};
    };
    auto combine = [op](bool in_a, bool in_b) {
        switch (op) {
        case BoolOp::unite: return in_a || in_b;
        case BoolOp::subtract: return in_a && !in_b;
        case BoolOp::intersect: return in_a && in_b;
        }
        return false;
    };

    std::vector<char> active(g.edges.size() * 2, 0);
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
        const auto& e = g.edges[i];
        const auto [al, ar] = side_membership(e, 0);
        const auto [bl, br] = side_membership(e, 1);
        const bool left = combine(al, bl), right = combine(ar, br);
        if (left != right)
            active[2 * i + (left ? 0 : 1)] = 1;
    }
    std::vector<IRing> cycles;
    for (const auto& c : trace_cycles(g, active))
        cycles.push_back(cycle_points(g, c));
    return assemble(std::move(cycles));
}

std::vector<IRing> rings_of(const Region& r) {
    std::vector<IRing> rings;
    rings.push_back(snap(r.outer));
    for (const auto& h : r.holes)
        rings.push_back(snap(h));
    std::erase_if(rings, [](const IRing& x) { return x.size() < 3; });
    return rings;
}

Region to_region(const Polygon& p, const Region& like) {
    Region r;
    r.id = like.id;
    r.class_index = like.class_index;
    r.provenance = like.provenance;
    r.outer = to_ring(p.outer);
    for (const auto& h : p.holes)
        r.holes.push_back(to_ring(h));
    return r;
}

} // namespace orthoseg::planar
