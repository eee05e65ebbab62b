#include "orthoseg/graphcut.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace orthoseg {

void validate(const RefineParams& p) {
    require(p.band_width >= 2, "band_width must be at least 2");
    require(p.lambda >= 0 && std::isfinite(p.lambda), "lambda must be non-negative");
    require(p.hist_bins >= 2 && p.hist_bins <= 64, "hist_bins must be within [2, 64]");
}

namespace {

// 1-D lower envelope of parabolas (Felzenszwalb and Huttenlocher).
void edt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf)
            continue;
        while (k >= 0) {
            const double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
            if (s <= z[k])
                --k;
            else
                break;
        }
        ++k;
        v[k] = q;
        z[k] = k == 0 ? -inf : ((f[q] + double(q) * q) - (f[v[k - 1]] + double(v[k - 1]) * v[k - 1])) /
                                   (2.0 * q - 2.0 * v[k - 1]);
        z[k + 1] = inf;
    }
    if (k < 0) {
        std::fill(d, d + n, inf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q)
            ++j;
        const double dq = q - v[j];
        d[q] = dq * dq + f[v[j]];
    }
}

} // namespace

std::vector<double> squared_distance_transform(const Mask& seeds) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const int w = seeds.width(), h = seeds.height();
    std::vector<double> g(static_cast<std::size_t>(w) * h);
    const int m = std::max(w, h);
    std::vector<double> f(m), d(m), z(m + 1);
    std::vector<int> v(m);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y)
            f[y] = seeds(x, y) ? 0.0 : inf;
        edt_1d(f.data(), d.data(), h, v, z);
        for (int y = 0; y < h; ++y)
            g[static_cast<std::size_t>(y) * w + x] = d[y];
    }
    for (int y = 0; y < h; ++y) {
        double* row = g.data() + static_cast<std::size_t>(y) * w;
        std::copy(row, row + w, f.begin());
        edt_1d(f.data(), row, w, v, z);
    }
    return g;
}

Mask boundary_pixels(const Mask& mask) {
    const int w = mask.width(), h = mask.height();
    Mask b(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto c = mask(x, y);
            if ((x > 0 && mask(x - 1, y) != c) || (x + 1 < w && mask(x + 1, y) != c) || (y > 0 && mask(x, y - 1) != c) ||
                (y + 1 < h && mask(x, y + 1) != c))
                b(x, y) = 1;
        }
    return b;
}

PixelCut build_pixel_cut(const ImageRgb& image, std::vector<PixelRole> roles, double lambda, int hist_bins) {
    const int w = image.width(), h = image.height();
    require(roles.size() == static_cast<std::size_t>(w) * h, "role map and image sizes differ");
    require(hist_bins >= 2 && hist_bins <= 64, "hist_bins must be within [2, 64]");

    PixelCut pc;
    pc.width = w;
    pc.height = h;
    pc.roles = std::move(roles);
    pc.node_of.assign(pc.roles.size(), -1);
    int nodes = 0;
    for (std::size_t i = 0; i < pc.roles.size(); ++i)
        if (pc.roles[i] == PixelRole::free)
            pc.node_of[i] = nodes++;
    if (nodes == 0)
        fail(ErrorKind::invalid_argument, "the cut has no free pixels");
    const int source = nodes, sink = nodes + 1;
    pc.network = FlowNetwork(nodes + 2, source, sink);
    pc.network.reserve(static_cast<std::size_t>(nodes) * 4);

    // Colour models.
    const int bins = hist_bins;
    const auto bin_count = static_cast<std::size_t>(bins) * bins * bins;
    std::vector<double> hist_fg(bin_count, 1.0), hist_bg(bin_count, 1.0);
    double total_fg = static_cast<double>(bin_count), total_bg = static_cast<double>(bin_count);
    auto bin_of = [&](const std::uint8_t* p) {
        return (static_cast<std::size_t>(p[0] * bins / 256) * bins + static_cast<std::size_t>(p[1] * bins / 256)) * bins +
               static_cast<std::size_t>(p[2] * bins / 256);
    };
    const auto px = image.bytes();
    for (std::size_t i = 0; i < pc.roles.size(); ++i) {
        if (pc.roles[i] == PixelRole::foreground) {
            hist_fg[bin_of(&px[3 * i])] += 1;
            total_fg += 1;
        } else if (pc.roles[i] == PixelRole::background) {
            hist_bg[bin_of(&px[3 * i])] += 1;
            total_bg += 1;
        }
    }

    auto diff2 = [&](std::size_t a, std::size_t b) {
        double s = 0;
        for (int c = 0; c < 3; ++c) {
            const double d = double(px[3 * a + c]) - double(px[3 * b + c]);
            s += d * d;
        }
        return s;
    };
    // beta over 4-neighbour pairs that touch at least one free pixel.
    double sum = 0;
    std::size_t pairs = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (x + 1 < w && (pc.node_of[i] >= 0 || pc.node_of[i + 1] >= 0)) {
                sum += diff2(i, i + 1);
                ++pairs;
            }
            if (y + 1 < h && (pc.node_of[i] >= 0 || pc.node_of[i + w] >= 0)) {
                sum += diff2(i, i + w);
                ++pairs;
            }
        }
    const double mean = pairs ? sum / static_cast<double>(pairs) : 0.0;
    pc.beta = mean > 0 ? 1.0 / (2.0 * mean) : 0.0;

    std::vector<double> to_source(nodes, 0.0), to_sink(nodes, 0.0);
    for (std::size_t i = 0; i < pc.roles.size(); ++i) {
        const int n = pc.node_of[i];
        if (n < 0)
            continue;
        const std::size_t b = bin_of(&px[3 * i]);
        to_source[n] += -std::log(hist_bg[b] / total_bg); // paid when labelled background
        to_sink[n] += -std::log(hist_fg[b] / total_fg);   // paid when labelled foreground
    }
    auto pair_term = [&](std::size_t a, std::size_t b) {
        const int na = pc.node_of[a], nb = pc.node_of[b];
        if (na < 0 && nb < 0)
            return;
        const double c = lambda * std::exp(-pc.beta * diff2(a, b));
        if (na >= 0 && nb >= 0) {
            pc.network.add_edge(na, nb, c, c);
        } else {
            const int n = na >= 0 ? na : nb;
            const PixelRole fixed = pc.roles[na >= 0 ? b : a];
            (fixed == PixelRole::foreground ? to_source : to_sink)[n] += c;
        }
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (x + 1 < w)
                pair_term(i, i + 1);
            if (y + 1 < h)
                pair_term(i, i + w);
        }
    for (int n = 0; n < nodes; ++n)
        pc.network.add_terminal(n, std::min(to_source[n], infinite_capacity), std::min(to_sink[n], infinite_capacity));
    return pc;
}

Mask solve_pixel_cut(const PixelCut& pc) {
    const MaxFlowResult r = max_flow(pc.network);
    Mask out(pc.width, pc.height);
    auto bytes = out.bytes();
    for (std::size_t i = 0; i < pc.roles.size(); ++i) {
        const int n = pc.node_of[i];
        bytes[i] = n >= 0 ? r.source_side[n] : pc.roles[i] == PixelRole::foreground;
    }
    return out;
}

std::vector<double> ring_distance(const Region& region, const PixelRect& window, double radius) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const int w = window.w, h = window.h;
    std::vector<double> dist(static_cast<std::size_t>(std::max(w, 0)) * std::max(h, 0), inf);
    auto piece = [&](Point a, Point b) {
        const double dx = b.x - a.x, dy = b.y - a.y, len2 = dx * dx + dy * dy;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - radius)) - window.x);
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + radius)) - window.x);
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - radius)) - window.y);
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + radius)) - window.y);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double px = window.x + x + 0.5, py = window.y + y + 0.5;
                const double t = len2 > 0 ? std::clamp(((px - a.x) * dx + (py - a.y) * dy) / len2, 0.0, 1.0) : 0.0;
                const double d = std::hypot(px - (a.x + t * dx), py - (a.y + t * dy));
                double& slot = dist[static_cast<std::size_t>(y) * w + x];
                if (d <= radius && d < slot)
                    slot = d;
            }
    };
    auto ring = [&](const Ring& r) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            const Point a = r[i], b = r[(i + 1) % r.size()];
            const int pieces = std::max(1, static_cast<int>(std::ceil(std::hypot(b.x - a.x, b.y - a.y) / 8.0)));
            for (int k = 0; k < pieces; ++k) {
                const double t0 = static_cast<double>(k) / pieces, t1 = static_cast<double>(k + 1) / pieces;
                piece({a.x + t0 * (b.x - a.x), a.y + t0 * (b.y - a.y)}, {a.x + t1 * (b.x - a.x), a.y + t1 * (b.y - a.y)});
            }
        }
    };
    ring(region.outer);
    for (const auto& hole : region.holes)
        ring(hole);
    return dist;
}

PixelCut build_refine_network(const RasterWindow& window, const Region& region, const RefineParams& params) {
    validate(params);
    const PixelRect rect{window.origin.x, window.origin.y, window.width(), window.height()};
    const Mask mask = rasterize(region, rect);
    const std::size_t on = mask.count();
    if (on == 0)
        fail(ErrorKind::invalid_argument, "refinement mask is empty");
    if (on == mask.bytes().size())
        fail(ErrorKind::invalid_argument, "refinement mask covers the whole window");
    // A pixel is free when its farthest point, half a diagonal from the centre, is inside the band.
    const double limit = params.band_width - std::sqrt(0.5);
    const auto dist = ring_distance(region, rect, limit);
    std::vector<PixelRole> roles(dist.size());
    const auto m = mask.bytes();
    for (std::size_t i = 0; i < dist.size(); ++i)
        roles[i] = dist[i] <= limit ? PixelRole::free : (m[i] ? PixelRole::foreground : PixelRole::background);
    return build_pixel_cut(window.pixels, std::move(roles), params.lambda, params.hist_bins);
}

Region refine(const RasterWindow& window, const Region& region, const RefineParams& params) {
    require(window.level == 0, "refinement needs full-resolution pixels");
    const Mask out = solve_pixel_cut(build_refine_network(window, region, params));
    auto parts = vectorize(out, window.origin, {0, region.class_index, Provenance::refined});
    if (parts.empty())
        fail(ErrorKind::contract_violation, "refinement collapsed: the cut removed the whole region");
    auto best = std::max_element(parts.begin(), parts.end(),
                                 [](const Region& a, const Region& b) { return region_area(a) < region_area(b); });
    Region r = std::move(*best);
    r.id = region.id;
    r.class_index = region.class_index;
    r.provenance = Provenance::refined;
    return r;
}

PixelRect refine_window(const Region& region, int band_width, const PixelRect& map_bounds) {
    const BBox b = bounding_box(region.outer);
    const int m = band_width + 2;
    const int x0 = static_cast<int>(std::floor(b.x)) - m, y0 = static_cast<int>(std::floor(b.y)) - m;
    const int x1 = static_cast<int>(std::ceil(b.x + b.w)) + m, y1 = static_cast<int>(std::ceil(b.y + b.h)) + m;
    return PixelRect{x0, y0, x1 - x0, y1 - y0}.intersect(map_bounds);
}

Region refine_on_map(const OrthoMap& map, const Region& region, const RefineParams& params) {
    validate(params);
    const PixelRect w = refine_window(region, params.band_width, {0, 0, map.width(), map.height()});
    require(!w.empty(), "region lies outside the map");
    return refine(map.read_window({w.x, w.y}, w.w, w.h), region, params);
}

} // namespace orthoseg
