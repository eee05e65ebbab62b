#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "orthoseg/graphcut.hpp"
#include "test_util.hpp"

using namespace orthoseg;

namespace {

// Minimum cut by enumerating every bipartition with s on one side and t on the other.
double brute_force_min_cut(const FlowNetwork& net) {
    const int n = net.node_count();
    std::vector<int> others;
    for (int v = 0; v < n; ++v)
        if (v != net.source() && v != net.sink())
            others.push_back(v);
    double best = std::numeric_limits<double>::infinity();
    for (unsigned mask = 0; mask < (1u << others.size()); ++mask) {
        std::vector<char> side(n, 0);
        side[net.source()] = 1;
        for (std::size_t k = 0; k < others.size(); ++k)
            side[others[k]] = (mask >> k) & 1;
        double c = 0;
        for (const auto& e : net.edges()) {
            if (side[e.from] && !side[e.to])
                c += e.capacity;
            if (side[e.to] && !side[e.from])
                c += e.reverse_capacity;
        }
        best = std::min(best, c);
    }
    return best;
}

ImageRgb two_tone_disk(int n, double cx, double cy, double r, Rgb8 in, Rgb8 out) {
    ImageRgb img(n, n, out);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r)
                img.set(x, y, in);
    return img;
}

std::vector<std::pair<int, int>> boundary_list(const Mask& m) {
    std::vector<std::pair<int, int>> out;
    const Mask b = boundary_pixels(m);
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            if (b(x, y))
                out.emplace_back(x, y);
    return out;
}

// Largest distance from a boundary pixel of `a` to the nearest boundary pixel of `b`.
double directed_hausdorff(const Mask& a, const Mask& b) {
    const auto pa = boundary_list(a), pb = boundary_list(b);
    double worst = 0;
    for (auto [x, y] : pa) {
        double best = std::numeric_limits<double>::infinity();
        for (auto [u, v] : pb)
            best = std::min(best, std::hypot(double(x - u), double(y - v)));
        worst = std::max(worst, best);
    }
    return worst;
}

} // namespace

TEST_CASE("max flow small cases") {
    FlowNetwork single(2, 0, 1);
    single.add_arc(0, 1, 7);
    CHECK(max_flow(single).flow == 7);

    FlowNetwork diamond(4, 0, 3);
    const int a = 1, b = 2;
    diamond.add_arc(0, a, 3);
    diamond.add_arc(0, b, 2);
    diamond.add_arc(a, 3, 2);
    diamond.add_arc(b, 3, 3);
    diamond.add_arc(a, b, 1);
    const auto r = max_flow(diamond);
    CHECK(r.flow == 5);
    CHECK(brute_force_min_cut(diamond) == 5);
    CHECK(cut_capacity(diamond, r.source_side) == 5);

    FlowNetwork disconnected(4, 0, 3);
    disconnected.add_arc(0, 1, 4);
    disconnected.add_arc(2, 3, 4);
    const auto d = max_flow(disconnected);
    CHECK(d.flow == 0);
    CHECK(d.source_side[0] == 1);
    CHECK(d.source_side[2] == 0);
    CHECK(d.source_side[3] == 0);

    CHECK_THROWS_AS(FlowNetwork(3, 1, 1), Error);
    FlowNetwork bad(3, 0, 2);
    CHECK_THROWS_AS(bad.add_arc(0, 1, -1), Error);
    CHECK_THROWS_AS(bad.add_arc(0, 1, std::nan("")), Error);
}

TEST_CASE("max flow equals brute-force min cut on random networks") {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 400; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 11);
        FlowNetwork net(n, 0, n - 1);
        const int m = static_cast<int>(rng() % (3 * n + 1));
        for (int k = 0; k < m; ++k) {
            const int u = static_cast<int>(rng() % n), v = static_cast<int>(rng() % n);
            if (u == v)
                continue;
            if (rng() % 3 == 0)
                net.add_edge(u, v, static_cast<double>(rng() % 10), static_cast<double>(rng() % 10));
            else
                net.add_arc(u, v, static_cast<double>(rng() % 20));
        }
        const auto r = max_flow(net);
        CHECK(r.flow == brute_force_min_cut(net));
        CHECK(cut_capacity(net, r.source_side) == r.flow);

        // Conservation and capacity limits.
        std::vector<double> net_out(n, 0.0);
        for (std::size_t i = 0; i < net.edges().size(); ++i) {
            const auto& e = net.edges()[i];
            const double f = r.edge_flow[i];
            CHECK(f <= e.capacity);
            CHECK(-f <= e.reverse_capacity);
            net_out[e.from] += f;
            net_out[e.to] -= f;
        }
        for (int v = 1; v + 1 < n; ++v)
            CHECK(net_out[v] == 0);
        CHECK(net_out[0] == r.flow);
    }
}

TEST_CASE("max flow is deterministic on a grid") {
    std::mt19937 rng(9);
    const int w = 60, h = 40;
    FlowNetwork net(w * h + 2, w * h, w * h + 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int i = y * w + x;
            if (x + 1 < w)
                net.add_edge(i, i + 1, rng() % 5, rng() % 5);
            if (y + 1 < h)
                net.add_edge(i, i + w, rng() % 5, rng() % 5);
            net.add_terminal(i, rng() % 7, rng() % 7);
        }
    const auto a = max_flow(net), b = max_flow(net);
    CHECK(a.flow == b.flow);
    CHECK(a.source_side == b.source_side);
    CHECK(cut_capacity(net, a.source_side) == a.flow);
}

TEST_CASE("squared distance transform matches brute force") {
    const Mask seeds = testutil::random_mask(23, 17, 0.05, 4);
    const auto d2 = squared_distance_transform(seeds);
    for (int y = 0; y < 17; ++y)
        for (int x = 0; x < 23; ++x) {
            double best = std::numeric_limits<double>::infinity();
            for (int v = 0; v < 17; ++v)
                for (int u = 0; u < 23; ++u)
                    if (seeds(u, v))
                        best = std::min(best, double((x - u) * (x - u) + (y - v) * (y - v)));
            CHECK(d2[static_cast<std::size_t>(y) * 23 + x] == best);
        }
    CHECK(std::isinf(squared_distance_transform(Mask(3, 3))[4]));
}

namespace {

Region rect_region(double x0, double y0, double x1, double y1) {
    Region r;
    r.class_index = 1;
    r.outer = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
    return r;
}

} // namespace

TEST_CASE("refine network structure") {
    const Region sq = rect_region(10, 10, 30, 30);
    const RasterWindow flat{{0, 0}, 0, ImageRgb(40, 40, Rgb8{90, 90, 90})};
    RefineParams p;
    p.band_width = 3;
    const PixelCut pc = build_refine_network(flat, sq, p);
    // Brute-force distance from each pixel centre to the square outline.
    std::size_t within = 0;
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x) {
            const double cx = x + 0.5, cy = y + 0.5;
            const double dx = std::max({10.0 - cx, cx - 30.0, 0.0}), dy = std::max({10.0 - cy, cy - 30.0, 0.0});
            const double outside = std::hypot(dx, dy);
            const double inside = std::min({cx - 10, 30 - cx, cy - 10, 30 - cy});
            const double d = outside > 0 ? outside : inside;
            const bool free = d + std::sqrt(0.5) <= p.band_width;
            within += free;
            CHECK((pc.node_of[static_cast<std::size_t>(y) * 40 + x] >= 0) == free);
        }
    CHECK(pc.network.node_count() == static_cast<int>(within) + 2);
    CHECK(pc.beta == 0);
    for (const auto& e : pc.network.edges())
        if (e.from != pc.network.source() && e.to != pc.network.sink())
            CHECK(e.capacity == doctest::Approx(p.lambda));

    CHECK_THROWS_AS(build_refine_network(flat, rect_region(50, 50, 60, 60), p), Error);
    CHECK_THROWS_AS(build_refine_network(flat, rect_region(-1, -1, 41, 41), p), Error);
    RefineParams bad;
    bad.band_width = 1;
    CHECK_THROWS_AS(build_refine_network(flat, sq, bad), Error);
}

TEST_CASE("pairwise capacities drop across contrast") {
    ImageRgb img(20, 20, Rgb8{250, 250, 250});
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 10; ++x)
            img.set(x, y, {10, 10, 10});
    RefineParams p;
    p.band_width = 4;
    const PixelCut pc = build_refine_network({{0, 0}, 0, img}, rect_region(-5, -5, 10, 25), p);
    CHECK(pc.beta > 0);
    double cross = -1, same = -1;
    const int n9 = pc.node_of[static_cast<std::size_t>(5) * 20 + 9], n10 = pc.node_of[static_cast<std::size_t>(5) * 20 + 10];
    const int n11 = pc.node_of[static_cast<std::size_t>(5) * 20 + 11];
    for (const auto& e : pc.network.edges()) {
        if (e.from == n9 && e.to == n10)
            cross = e.capacity;
        if (e.from == n10 && e.to == n11)
            same = e.capacity;
    }
    REQUIRE(cross >= 0);
    REQUIRE(same >= 0);
    CHECK(cross < same);
}

TEST_CASE("refine snaps a dilated disk to the true edge") {
    const int n = 200;
    const double r = 50;
    const ImageRgb img = two_tone_disk(n, 100, 100, r, {40, 60, 30}, {220, 210, 200});
    const Mask truth = testutil::disk_mask(n, n, 100, 100, r);
    const Mask dilated = testutil::disk_mask(n, n, 100, 100, r + 10);
    const auto input = vectorize(dilated, {0, 0}, {0, 4, Provenance::manual});
    REQUIRE(input.size() == 1);
    Region in = input[0];
    in.id = 17;
    const RasterWindow win{{0, 0}, 0, img};
    const Region out = refine(win, in);
    CHECK(out.id == 17);
    CHECK(out.class_index == 4);
    CHECK(out.provenance == Provenance::refined);
    const Mask got = rasterize(out, {0, 0, n, n});
    CHECK(mask_iou(got, truth) >= 0.98);
    CHECK(directed_hausdorff(got, dilated) <= 30);

    // Running again on the optimum changes nothing.
    const Region again = refine(win, out);
    CHECK(rasterize(again, {0, 0, n, n}) == got);
}

TEST_CASE("refine stays within the band on random inputs") {
    std::mt19937 rng(21);
    for (int trial = 0; trial < 6; ++trial) {
        const int n = 90;
        const ImageRgb img = testutil::noise_image(n, n, 100 + trial);
        // Thick random blob: union of a few disks.
        Mask m(n, n);
        for (int k = 0; k < 3; ++k) {
            const Mask d = testutil::disk_mask(n, n, 30 + rng() % 30, 30 + rng() % 30, 12 + rng() % 8);
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                    m(x, y) |= d(x, y);
        }
        const auto rs = vectorize(m, {0, 0}, {0, 1, Provenance::manual});
        const Region in = *std::max_element(rs.begin(), rs.end(), [](auto& a, auto& b) { return region_area(a) < region_area(b); });
        RefineParams p;
        p.band_width = 2 + trial;
        try {
            const Region out = refine({{0, 0}, 0, img}, in, p);
            CHECK(directed_hausdorff(rasterize(out, {0, 0, n, n}), rasterize(in, {0, 0, n, n})) <= p.band_width);
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("collapsed") != std::string::npos);
        }
    }
}

TEST_CASE("refine on a constant image keeps a simply connected shape near the input") {
    const int n = 80;
    const ImageRgb flat(n, n, Rgb8{128, 128, 128});
    const Mask m = testutil::disk_mask(n, n, 40, 40, 20);
    const Region in = vectorize(m, {0, 0})[0];
    RefineParams p;
    p.band_width = 5;
    const Region out = refine({{0, 0}, 0, flat}, in, p);
    CHECK(out.holes.empty());
    CHECK(directed_hausdorff(rasterize(out, {0, 0, n, n}), m) <= 5);
}
