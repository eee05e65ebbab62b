// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [criterion-name ...]

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

#include "orthoseg/analysis.hpp"
#include "orthoseg/click_segmenter.hpp"
#include "orthoseg/dataset.hpp"
#include "orthoseg/edit_tools.hpp"
#include "orthoseg/graphcut.hpp"
#include "orthoseg/inference.hpp"
#include "orthoseg/maxflow.hpp"
#include "orthoseg/model.hpp"
#include "orthoseg/png_io.hpp"
#include "orthoseg/project.hpp"
#include "orthoseg/region.hpp"
#include "orthoseg/service.hpp"

namespace fs = std::filesystem;
using namespace orthoseg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string format(const char* fmt, ...) {
    char buf[1024];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, args);
    va_end(args);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = fs::temp_directory_path() / ("orthoseg_acceptance_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::uint32_t hash32(std::uint32_t x) {
    x ^= x >> 16;
    x *= 0x7feb352dU;
    x ^= x >> 15;
    x *= 0x846ca68bU;
    x ^= x >> 16;
    return x;
}

std::uint8_t clamp8(int v) {
    return static_cast<std::uint8_t>(std::clamp(v, 0, 255));
}

// --- geometry oracles --------------------------------------------------------

struct Segment {
    Point a, b;
};

std::vector<Segment> segments_of(const Region& r) {
    std::vector<Segment> out;
    auto add = [&](const Ring& ring) {
        for (std::size_t i = 0; i < ring.size(); ++i)
            out.push_back({ring[i], ring[(i + 1) % ring.size()]});
    };
    add(r.outer);
    for (const auto& h : r.holes)
        add(h);
    return out;
}

double point_segment_distance(Point p, const Segment& s) {
    const double dx = s.b.x - s.a.x, dy = s.b.y - s.a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((p.x - s.a.x) * dx + (p.y - s.a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p.x - (s.a.x + t * dx), p.y - (s.a.y + t * dy));
}

double directed_hausdorff(const std::vector<Segment>& from, const std::vector<Segment>& to) {
    double worst = 0;
    for (const auto& s : from) {
        const double len = std::hypot(s.b.x - s.a.x, s.b.y - s.a.y);
        const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.25)));
        for (int i = 0; i <= steps; ++i) {
            const double t = static_cast<double>(i) / steps;
            const Point p{s.a.x + t * (s.b.x - s.a.x), s.a.y + t * (s.b.y - s.a.y)};
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) {
                best = std::min(best, point_segment_distance(p, q));
                if (best <= worst)
                    break;
            }
            worst = std::max(worst, best);
        }
    }
    return worst;
}

double hausdorff(const Region& a, const Region& b) {
    const auto sa = segments_of(a), sb = segments_of(b);
    return std::max(directed_hausdorff(sa, sb), directed_hausdorff(sb, sa));
}

/// Pixel edges separating mask pixels from non-mask pixels (outside counts as non-mask).
std::vector<Segment> mask_boundary(const Mask& m, PixelPoint origin) {
    std::vector<Segment> out;
    const double ox = origin.x, oy = origin.y;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (!m(x, y))
                continue;
            if (!m.get(x - 1, y))
                out.push_back({{ox + x, oy + y}, {ox + x, oy + y + 1}});
            if (!m.get(x + 1, y))
                out.push_back({{ox + x + 1, oy + y}, {ox + x + 1, oy + y + 1}});
            if (!m.get(x, y - 1))
                out.push_back({{ox + x, oy + y}, {ox + x + 1, oy + y}});
            if (!m.get(x, y + 1))
                out.push_back({{ox + x, oy + y + 1}, {ox + x + 1, oy + y + 1}});
        }
    return out;
}

double iou(const Mask& a, const Mask& b) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bytes().size(); ++i) {
        inter += a.bytes()[i] && b.bytes()[i];
        uni += a.bytes()[i] || b.bytes()[i];
    }
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

/// Star-shaped blob r(theta) = r0 (1 + sum a_k sin(k theta + phi_k)).
struct Blob {
    double cx = 0, cy = 0, r0 = 0;
    std::array<double, 3> amp{}, phase{};

    double radius(double theta) const {
        double f = 1;
        for (int k = 0; k < 3; ++k)
            f += amp[k] * std::sin((k + 2) * theta + phase[k]);
        return r0 * f;
    }
    bool inside(double x, double y, double offset = 0) const {
        const double dx = x - cx, dy = y - cy;
        return std::hypot(dx, dy) <= radius(std::atan2(dy, dx)) + offset;
    }
    Ring ring(int vertices, double offset = 0) const {
        Ring out;
        for (int i = 0; i < vertices; ++i) {
            const double t = 2 * std::numbers::pi * i / vertices;
            const double r = radius(t) + offset;
            out.push_back({cx + r * std::cos(t), cy + r * std::sin(t)});
        }
        return out;
    }
    Mask mask(int w, int h, double offset = 0) const {
        Mask m(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                m(x, y) = inside(x + 0.5, y + 0.5, offset);
        return m;
    }
};

Blob random_blob(std::mt19937_64& rng, double cx, double cy, double rmin, double rmax, double wobble) {
    std::uniform_real_distribution<double> u(0, 1);
    Blob b;
    b.cx = cx;
    b.cy = cy;
    b.r0 = rmin + (rmax - rmin) * u(rng);
    for (int k = 0; k < 3; ++k) {
        b.amp[k] = wobble * u(rng) / (k + 1);
        b.phase[k] = 2 * std::numbers::pi * u(rng);
    }
    return b;
}

Region polygon_region(Ring ring, std::uint16_t cls, std::int64_t id = 0) {
    Region r;
    r.id = id;
    r.class_index = cls;
    r.outer = std::move(ring);
    normalize_orientation(r);
    return r;
}

Ring disk_ring(double cx, double cy, double r, int vertices) {
    Ring out;
    for (int i = 0; i < vertices; ++i) {
        const double t = 2 * std::numbers::pi * i / vertices;
        out.push_back({cx + r * std::cos(t), cy + r * std::sin(t)});
    }
    return out;
}

/// Position-independent per-pixel model with frequent exact ties.
class ColourLookup final : public PixelClassifier {
public:
    explicit ColourLookup(std::size_t classes) : classes_(classes) {}
    std::size_t class_count() const override { return classes_; }
    std::vector<float> predict(const ImageRgb& tile) const override {
        const std::size_t n = static_cast<std::size_t>(tile.width()) * tile.height();
        std::vector<float> out(n * classes_, 0.0f);
        for (std::size_t i = 0; i < n; ++i)
            pixel(&tile.bytes()[3 * i], &out[i * classes_]);
        return out;
    }
    void pixel(const std::uint8_t* rgb, float* p) const {
        float sum = 0;
        for (std::size_t k = 1; k < classes_; ++k) {
            p[k] = static_cast<float>(1 + (rgb[k % 3] / 64 + k) % 3);
            sum += p[k];
        }
        for (std::size_t k = 1; k < classes_; ++k)
            p[k] /= sum;
    }
    std::uint16_t direct(const std::uint8_t* rgb) const {
        std::vector<float> p(classes_, 0.0f);
        pixel(rgb, p.data());
        std::size_t best = 1;
        for (std::size_t k = 2; k < classes_; ++k)
            if (p[k] > p[best])
                best = k;
        return static_cast<std::uint16_t>(best);
    }

private:
    std::size_t classes_;
};

// --- 1. max-flow -------------------------------------------------------------

Outcome maxflow_criterion() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240611);
    struct Arc {
        int from, to;
        double cap;
    };
    int mismatches = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 11);
        const int s = 0, t = n - 1;
        FlowNetwork net(n, s, t);
        std::vector<Arc> arcs;
        for (int a = 0; a < n; ++a)
            for (int b = a + 1; b < n; ++b) {
                const auto roll = rng() % 4;
                if (roll == 0)
                    continue;
                const double fwd = static_cast<double>(rng() % 21);
                const double rev = roll == 3 ? static_cast<double>(rng() % 21) : 0.0;
                net.add_edge(a, b, fwd, rev);
                arcs.push_back({a, b, fwd});
                arcs.push_back({b, a, rev});
            }
        auto cut_of = [&](const std::vector<char>& side) {
            double c = 0;
            for (const auto& arc : arcs)
                if (side[arc.from] && !side[arc.to])
                    c += arc.cap;
            return c;
        };
        double best = std::numeric_limits<double>::infinity();
        const int inner = n - 2;
        std::vector<char> side(n);
        for (std::uint32_t bits = 0; bits < (1u << inner); ++bits) {
            side[s] = 1;
            side[t] = 0;
            for (int i = 0; i < inner; ++i)
                side[i + 1] = (bits >> i) & 1;
            best = std::min(best, cut_of(side));
        }
        const MaxFlowResult r = max_flow(net);
        const bool ok = r.flow == best && r.source_side.size() == static_cast<std::size_t>(n) && r.source_side[s] &&
                        !r.source_side[t] && cut_of(r.source_side) == best;
        mismatches += !ok;
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < 10.0,
            format("500 networks, %d mismatches, %.2f s (limit 10 s)", mismatches, secs)};
}

// --- 2. refinement band ------------------------------------------------------

ImageRgb two_tone(const Mask& fg, Rgb8 in, Rgb8 out, int noise, std::mt19937_64& rng) {
    ImageRgb img(fg.width(), fg.height());
    std::uniform_int_distribution<int> n(-noise, noise);
    for (int y = 0; y < fg.height(); ++y)
        for (int x = 0; x < fg.width(); ++x) {
            const Rgb8 c = fg(x, y) ? in : out;
            img.set(x, y, {clamp8(c.r + n(rng)), clamp8(c.g + n(rng)), clamp8(c.b + n(rng))});
        }
    return img;
}

Outcome refine_criterion() {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0, 1);
    double worst_excess = -std::numeric_limits<double>::infinity();
    double worst_iou = 1.0;
    int band_failures = 0, iou_failures = 0, errors = 0;
    std::string first_error;
    for (int trial = 0; trial < 50; ++trial) {
        const int bw = 4 + static_cast<int>(rng() % 13);
        const int size = 2 * (75 + bw + 12);
        const double c = size / 2.0;
        const Blob input = random_blob(rng, c + u(rng), c + u(rng), 40, 70, 0.25);
        const Region in = polygon_region(input.ring(180), 1, 7);
        RefineParams params;
        params.band_width = bw;

        // Band guarantee: the image edge is an unrelated blob, often outside the band.
        const Blob other = random_blob(rng, c + 30 * (u(rng) - 0.5), c + 30 * (u(rng) - 0.5), 30, 80, 0.3);
        const ImageRgb scene = two_tone(other.mask(size, size), {210, 70, 50}, {60, 140, 70}, 25, rng);
        try {
            const Region out = refine({{0, 0}, 0, scene}, in, params);
            const double h = hausdorff(in, out);
            worst_excess = std::max(worst_excess, h - bw);
            band_failures += h > bw;
        } catch (const std::exception& e) {
            ++errors;
            if (first_error.empty())
                first_error = e.what();
        }

        // Accuracy: the true edge lies inside the band.
        Blob truth = input;
        const double shift = (u(rng) - 0.5) * bw;
        const Mask truth_mask = truth.mask(size, size, shift);
        const ImageRgb image = two_tone(truth_mask, {200, 60, 50}, {60, 140, 70}, 10, rng);
        try {
            const Region out = refine({{0, 0}, 0, image}, in, params);
            const double v = iou(rasterize(out, {0, 0, size, size}), truth_mask);
            worst_iou = std::min(worst_iou, v);
            iou_failures += v < 0.98;
        } catch (const std::exception& e) {
            ++errors;
            if (first_error.empty())
                first_error = e.what();
        }
    }
    std::string detail = format("50 shapes: %d Hausdorff > band_width (worst excess %.3f px), %d IoU < 0.98 (worst %.4f)",
                                band_failures, worst_excess, iou_failures, worst_iou);
    if (errors)
        detail += format(", %d errors (%s)", errors, first_error.c_str());
    return {band_failures == 0 && iou_failures == 0 && errors == 0, detail};
}

// --- 3. rasterize/vectorize roundtrip ----------------------------------------

Outcome roundtrip_criterion() {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    int failures = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 128;
        Mask m(n, n);
        if (trial % 2 == 0) {
            const double density = 0.05 + 0.9 * u(rng);
            for (auto& b : m.bytes())
                b = u(rng) < density;
        } else {
            for (int k = 0; k < 6; ++k) {
                const Blob b = random_blob(rng, n * u(rng), n * u(rng), 5, 30, 0.4);
                const bool hole = k % 3 == 2;
                const Mask d = b.mask(n, n);
                for (std::size_t i = 0; i < d.bytes().size(); ++i)
                    if (d.bytes()[i])
                        m.bytes()[i] = hole ? 0 : 1;
            }
        }
        const auto regions = vectorize(m, {0, 0}, {0, 1, Provenance::automatic});
        Mask back(n, n);
        std::size_t painted = 0;
        double area = 0;
        bool valid = true;
        for (const auto& r : regions) {
            valid = valid && is_valid(r);
            const Mask part = rasterize(r, {0, 0, n, n});
            for (std::size_t i = 0; i < part.bytes().size(); ++i) {
                painted += part.bytes()[i];
                back.bytes()[i] |= part.bytes()[i];
            }
            area += compute_stats(r, 1.0).area_px;
        }
        std::size_t popcount = 0;
        for (auto b : m.bytes())
            popcount += b != 0;
        failures += !(valid && back == m && painted == popcount && area == static_cast<double>(popcount));
    }
    return {failures == 0, format("200 masks of 128x128, %d mismatches", failures)};
}

// --- 4. blend equivalence ----------------------------------------------------

Outcome blend_criterion() {
    TempDir dir("blend");
    const int n = 2048;
    ImageRgb img(n, n);
    std::mt19937_64 rng(11);
    for (auto& b : img.bytes())
        b = static_cast<std::uint8_t>(rng());
    png::write_rgb(dir.path() / "noise.png", img);
    const OrthoMap map = open_orthomap(dir.path() / "noise.png", 1.0);
    const ColourLookup model(5);
    std::vector<std::uint16_t> direct(static_cast<std::size_t>(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            direct[static_cast<std::size_t>(y) * n + x] = model.direct(img.row(y) + 3 * x);

    std::size_t mismatches = 0, runs = 0;
    for (int stride : {512, 768, 1024})
        for (PixelPoint offset : {PixelPoint{0, 0}, PixelPoint{300, 700}}) {
            InferenceConfig cfg;
            cfg.tile_size = 1024;
            cfg.stride = stride;
            cfg.grid_offset = offset;
            const LabelRaster out = preview(map, model, {0, 0, n, n}, cfg);
            for (std::size_t i = 0; i < direct.size(); ++i)
                mismatches += out.labels[i] != direct[i];
            ++runs;
        }
    const double agreement = 100.0 * (1.0 - static_cast<double>(mismatches) / (static_cast<double>(runs) * n * n));
    return {mismatches == 0, format("%zu runs (strides 512/768/1024, two grid offsets), %.4f%% of pixels equal direct argmax",
                                    runs, agreement)};
}

// --- 5. metrics --------------------------------------------------------------

struct NaiveMetrics {
    std::vector<std::vector<std::uint64_t>> confusion;
    std::vector<std::optional<double>> iou;
    double miou = 0, accuracy = 0;
};

NaiveMetrics naive_metrics(const std::vector<std::pair<std::vector<std::uint16_t>, std::vector<std::uint16_t>>>& pairs,
                           std::size_t K) {
    NaiveMetrics m;
    m.confusion.assign(K, std::vector<std::uint64_t>(K, 0));
    std::vector<std::uint64_t> tp(K), gt_n(K), pred_n(K);
    std::uint64_t total = 0, correct = 0;
    for (const auto& [gt, pred] : pairs)
        for (std::size_t i = 0; i < gt.size(); ++i) {
            if (gt[i] == 0)
                continue;
            ++m.confusion[gt[i]][pred[i]];
            ++gt_n[gt[i]];
            ++pred_n[pred[i]];
            ++total;
            if (gt[i] == pred[i]) {
                ++tp[gt[i]];
                ++correct;
            }
        }
    m.iou.assign(K, std::nullopt);
    double sum = 0;
    std::size_t present = 0;
    for (std::size_t k = 1; k < K; ++k) {
        const std::uint64_t denom = gt_n[k] + pred_n[k] - tp[k];
        if (denom)
            m.iou[k] = static_cast<double>(tp[k]) / static_cast<double>(denom);
        if (gt_n[k]) {
            sum += *m.iou[k];
            ++present;
        }
    }
    m.miou = present ? sum / static_cast<double>(present) : 0.0;
    m.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    return m;
}

bool same_metrics(const EvalReport& r, const NaiveMetrics& m) {
    return r.confusion == m.confusion && r.per_class_iou == m.iou && r.miou == m.miou && r.accuracy == m.accuracy;
}

Outcome metrics_criterion() {
    std::mt19937_64 rng(99);
    const std::size_t K = 6;
    std::vector<std::pair<std::vector<std::uint16_t>, std::vector<std::uint16_t>>> all;
    int failures = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int w = 8 + static_cast<int>(rng() % 57), h = 8 + static_cast<int>(rng() % 57);
        const std::size_t classes_used = 2 + rng() % (K - 1);
        std::vector<std::uint16_t> gt(static_cast<std::size_t>(w) * h), pred(gt.size());
        for (std::size_t i = 0; i < gt.size(); ++i) {
            gt[i] = static_cast<std::uint16_t>(rng() % classes_used);
            pred[i] = rng() % 3 == 0 ? static_cast<std::uint16_t>(1 + rng() % (K - 1)) : std::max<std::uint16_t>(gt[i], 1);
        }
        std::vector<std::vector<std::uint64_t>> confusion(K, std::vector<std::uint64_t>(K, 0));
        accumulate_confusion(gt, pred, confusion);
        all.emplace_back(gt, pred);
        failures += !same_metrics(report_from_confusion(std::move(confusion)), naive_metrics({all.back()}, K));
    }
    std::vector<std::vector<std::uint64_t>> confusion(K, std::vector<std::uint64_t>(K, 0));
    for (const auto& [gt, pred] : all)
        accumulate_confusion(gt, pred, confusion);
    const bool aggregate_ok = same_metrics(report_from_confusion(std::move(confusion)), naive_metrics(all, K));

    std::vector<std::vector<std::uint64_t>> identity(K, std::vector<std::uint64_t>(K, 0));
    for (const auto& [gt, pred] : all) {
        std::vector<std::uint16_t> same = gt;
        for (auto& v : same)
            v = std::max<std::uint16_t>(v, 1);
        accumulate_confusion(gt, same, identity);
    }
    const EvalReport id = report_from_confusion(std::move(identity));
    const bool identity_ok = id.accuracy == 1.0 && id.miou == 1.0;
    return {failures == 0 && aggregate_ok && identity_ok,
            format("100 pairs: %d per-pair mismatches, aggregate %s, identity accuracy %.6f mIoU %.6f", failures,
                   aggregate_ok ? "equal" : "differs", id.accuracy, id.miou)};
}

// --- 6. end to end -------------------------------------------------------------

struct SceneObject {
    bool disk = true;
    double cx = 0, cy = 0, r = 0; // disk
    PixelRect rect;               // roof
    std::uint16_t cls = 0;

    bool contains(double x, double y) const {
        if (disk)
            return std::hypot(x - cx, y - cy) <= r;
        return x >= rect.x && x < rect.right() && y >= rect.y && y < rect.bottom();
    }
    PixelRect bounds() const {
        if (disk)
            return {static_cast<int>(cx - r) - 1, static_cast<int>(cy - r) - 1, static_cast<int>(2 * r) + 3,
                    static_cast<int>(2 * r) + 3};
        return rect;
    }
};

constexpr std::uint16_t meadow = 1, water = 2, roof = 3;

std::vector<SceneObject> make_scene(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<SceneObject> objects;
    auto clear = [&](const PixelRect& b) {
        const PixelRect padded{b.x - 12, b.y - 12, b.w + 24, b.h + 24};
        if (!PixelRect{0, 0, n, n}.contains(padded))
            return false;
        return std::none_of(objects.begin(), objects.end(),
                            [&](const SceneObject& o) { return !o.bounds().intersect(padded).empty(); });
    };
    for (int attempt = 0; attempt < 4000 && objects.size() < 110; ++attempt) {
        SceneObject o;
        o.disk = attempt % 2 == 0;
        if (o.disk) {
            o.cls = water;
            o.r = 40 + 100 * u(rng);
            o.cx = n * u(rng);
            o.cy = n * u(rng);
        } else {
            o.cls = roof;
            o.rect = {static_cast<int>(n * u(rng)), static_cast<int>(n * u(rng)), 60 + static_cast<int>(rng() % 200),
                      60 + static_cast<int>(rng() % 200)};
        }
        if (clear(o.bounds()))
            objects.push_back(o);
    }
    return objects;
}

Rgb8 texture(std::uint16_t cls, int x, int y) {
    const std::uint32_t h = hash32(static_cast<std::uint32_t>(y) * 65537u + static_cast<std::uint32_t>(x));
    auto jitter = [&](int shift, int amp) { return static_cast<int>((h >> shift) % (2 * amp + 1)) - amp; };
    switch (cls) {
    case water: {
        const int ripple = static_cast<int>(6 * std::sin(y / 7.0));
        return {clamp8(40 + jitter(0, 6)), clamp8(70 + ripple + jitter(8, 6)), clamp8(165 + ripple + jitter(16, 6))};
    }
    case roof: {
        const bool stripe = ((x + y) / 4) % 2 == 0;
        return {clamp8((stripe ? 190 : 160) + jitter(0, 10)), clamp8((stripe ? 80 : 60) + jitter(8, 10)),
                clamp8((stripe ? 60 : 45) + jitter(16, 10))};
    }
    default:
        return {clamp8(70 + jitter(0, 25)), clamp8(130 + jitter(8, 25)), clamp8(55 + jitter(16, 25))};
    }
}

Outcome end_to_end_criterion() {
    const auto t0 = Clock::now();
    TempDir dir("e2e");
    const int n = 4096, held_out_x = 3072;
    std::mt19937_64 rng(2023);
    const auto objects = make_scene(n, rng);

    // Image and the truth raster of the held-out strip.
    const int strip_w = n - held_out_x;
    std::vector<std::uint16_t> truth(static_cast<std::size_t>(strip_w) * n);
    {
        png::RowWriter writer(dir.path() / "site.png", n, n, png::PixelFormat::rgb8);
        std::vector<std::uint8_t> row(static_cast<std::size_t>(n) * 3);
        std::vector<const SceneObject*> active;
        for (int y = 0; y < n; ++y) {
            active.clear();
            for (const auto& o : objects) {
                const PixelRect b = o.bounds();
                if (y >= b.y && y < b.bottom())
                    active.push_back(&o);
            }
            for (int x = 0; x < n; ++x) {
                std::uint16_t cls = meadow;
                for (const auto* o : active)
                    if (o->contains(x + 0.5, y + 0.5)) {
                        cls = o->cls;
                        break;
                    }
                const Rgb8 c = texture(cls, x, y);
                row[3 * x] = c.r;
                row[3 * x + 1] = c.g;
                row[3 * x + 2] = c.b;
                if (x >= held_out_x)
                    truth[static_cast<std::size_t>(y) * strip_w + (x - held_out_x)] = cls;
            }
            writer.write_row(row);
        }
        writer.finish();
    }

    ClassCatalog catalog;
    catalog.add("meadow", {0, 200, 0});
    catalog.add("water", {0, 0, 255});
    catalog.add("roof", {255, 0, 0});
    Project project(catalog);
    project.add_map({"site", (dir.path() / "site.png").string(), 50.0, "2024-05-01"}, dir.path());
    const OrthoMap map = project.open_map("site", dir.path());

    // Step 1: annotate the training area with tool calls.
    std::vector<Region> annotations;
    annotations.push_back(freehand_close({{{0, 0}, {double(held_out_x), 0}, {double(held_out_x), double(n)}, {0, double(n)}}}, meadow));
    int clicked = 0, drawn = 0;
    for (const auto& o : objects) {
        const PixelRect b = o.bounds();
        if (b.x >= held_out_x)
            continue;
        if (o.disk && b.right() < held_out_x) {
            const ExtremeClicks clicks{{Point{o.cx - o.r + 0.5, o.cy}, Point{o.cx + o.r - 0.5, o.cy},
                                        Point{o.cx, o.cy - o.r + 0.5}, Point{o.cx, o.cy + o.r - 0.5}}};
            annotations.push_back(extreme_click_region(map, clicks, water, {}));
            ++clicked;
        } else if (o.disk) {
            annotations.push_back(freehand_close({disk_ring(o.cx, o.cy, o.r, 96)}, water));
            ++drawn;
        } else {
            const double x0 = o.rect.x, y0 = o.rect.y, x1 = o.rect.right(), y1 = o.rect.bottom();
            annotations.push_back(freehand_close({{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}}, roof));
            ++drawn;
        }
    }
    commit_regions(project, "site", annotations);

    // Step 2: dataset, training, evaluation.
    SplitCriterion criterion;
    criterion.kind = SplitKind::spatial_bands;
    criterion.axis = Axis::y;
    criterion.fractions = {0.70, 0.15, 0.15};
    const TileDataset ds = export_dataset(map, project.regions("site"), catalog, {0, 0, held_out_x, n}, criterion, 512, 512,
                                          dir.path() / "dataset");
    Hyperparams hp;
    hp.epochs = 10;
    TrainResult trained = train(ds, {}, hp);
    const EvalReport test_report = evaluate(*trained.model, ds, dir.path() / "predictions");

    // Step 3: inference on the held-out strip.
    InferenceConfig cfg;
    cfg.tile_size = 512;
    cfg.stride = 256;
    cfg.min_region_px = 16;
    const PixelRect strip{held_out_x, 0, strip_w, n};
    const InferenceResult result = run_inference(map, *trained.model, catalog, strip, cfg);

    std::vector<std::uint64_t> tp(4), gt_n(4), pred_n(4);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto g = truth[i], p = result.raster.labels[i];
        ++gt_n[g];
        ++pred_n[p];
        tp[g] += g == p;
    }
    double miou = 0;
    for (int k = 1; k <= 3; ++k)
        miou += static_cast<double>(tp[k]) / static_cast<double>(gt_n[k] + pred_n[k] - tp[k]);
    miou /= 3;

    // Correction of one predicted region and the journal invariants.
    const std::size_t before_count = project.region_count();
    const std::vector<std::int64_t> ids = commit_regions(project, "site", result.regions);
    bool journal_ok = project.region_count() == before_count + result.regions.size() && ids.size() == result.regions.size();
    std::int64_t target = 0;
    double target_area = 0;
    for (auto id : ids) {
        const Region& r = project.region(id);
        if (r.class_index == water && region_area(r) > target_area) {
            target = id;
            target_area = region_area(r);
        }
    }
    bool edit_ok = false;
    if (target) {
        const Region original = project.region(target);
        const BBox b = bounding_box(original.outer);
        const double cut_y = b.y + 0.3 * b.h;
        const Region edited = edit_border(original, {{{b.x - 10, cut_y}, {b.x + b.w + 10, cut_y}}});
        const nlohmann::json snapshot = project.to_json();
        const std::size_t depth = project.undo_depth();
        const std::size_t count = project.region_count();
        project.apply({RegionOp::replace(target, edited)});
        const Region& stored = project.region(target);
        edit_ok = is_valid(edited) && stored.id == target && stored.class_index == water &&
                  stored.provenance == Provenance::edited && region_area(stored) < target_area &&
                  project.region_count() == count && project.undo_depth() == std::min(depth + 1, journal_depth);
        project.undo();
        edit_ok = edit_ok && project.to_json() == snapshot && project.region_count() == count &&
                  project.undo_depth() == std::min(depth + 1, journal_depth) - 1 && region_area(project.region(target)) == target_area;
        project.apply({RegionOp::replace(target, edited)});
        project.save(dir.path() / "project.json");
        edit_ok = edit_ok && Project::load(dir.path() / "project.json") == project;
    }
    journal_ok = journal_ok && edit_ok;

    const double secs = seconds_since(t0);
    return {miou >= 0.90 && secs < 300.0 && journal_ok,
            format("%d clicked + %d drawn objects, %zu tiles, test accuracy %.4f, held-out mIoU %.4f (>= 0.90), "
                   "edit/undo %s, %.1f s (limit 300 s)",
                   clicked, drawn, ds.tiles.size(), test_report.accuracy, miou, journal_ok ? "ok" : "FAILED", secs)};
}

// --- 7. click contracts --------------------------------------------------------

Outcome click_criterion() {
    std::mt19937_64 rng(314);
    std::uniform_real_distribution<double> u(0, 1);
    int violations = 0, iou_failures = 0, errors = 0;
    double worst_extreme = 0, worst_iou = 1.0;
    std::string first_error;
    const int size = 220;
    for (int scene = 0; scene < 30; ++scene) {
        try {
            // Blob scene with a distractor blob.
            const Blob blob = random_blob(rng, 110 + 10 * (u(rng) - 0.5), 110 + 10 * (u(rng) - 0.5), 30, 55, 0.3);
            const Blob distractor = random_blob(rng, scene % 2 ? 30 : 190, scene % 3 ? 30 : 190, 10, 16, 0.2);
            const Mask fg = blob.mask(size, size);
            const Mask other = distractor.mask(size, size);
            Mask both = fg;
            for (std::size_t i = 0; i < both.bytes().size(); ++i)
                both.bytes()[i] |= other.bytes()[i];
            const ImageRgb image = two_tone(both, {30, 30, 160}, {190, 180, 120}, 12, rng);
            const RasterWindow window{{0, 0}, 0, image};

            // Extreme points of the blob mask.
            int minx = size, maxx = -1, miny = size, maxy = -1;
            Point left, right, top, bottom;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    if (!fg(x, y))
                        continue;
                    const Point c{x + 0.5, y + 0.5};
                    if (x < minx) { minx = x; left = c; }
                    if (x > maxx) { maxx = x; right = c; }
                    if (y < miny) { miny = y; top = c; }
                    if (y > maxy) { maxy = y; bottom = c; }
                }
            const ExtremeClicks clicks{{left, right, top, bottom}};
            const Mask extreme = segment_extreme(window, clicks, {});
            const auto edges = mask_boundary(extreme, {0, 0});
            for (const Point& p : clicks.points) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto& s : edges)
                    best = std::min(best, point_segment_distance(p, s));
                worst_extreme = std::max(worst_extreme, best);
                violations += best > 5.0;
            }

            // Positive and negative clicks, with and without a prior.
            ClickSet set;
            while (set.positives.size() < 1 + scene % 3) {
                const Point p{size * u(rng), size * u(rng)};
                if (blob.inside(p.x, p.y, -6))
                    set.positives.push_back(p);
            }
            set.negatives.push_back({distractor.cx, distractor.cy});
            while (set.negatives.size() < 1 + scene % 2 + 1) {
                const Point p{size * u(rng), size * u(rng)};
                if (!blob.inside(p.x, p.y, 6) && !distractor.inside(p.x, p.y, 3))
                    set.negatives.push_back(p);
            }
            auto check = [&](const Mask& m) {
                for (const Point& p : set.positives)
                    violations += !m.get(static_cast<int>(p.x), static_cast<int>(p.y));
                for (const Point& p : set.negatives)
                    violations += m.get(static_cast<int>(p.x), static_cast<int>(p.y)) != 0;
            };
            check(segment_clicks(window, set, {}));
            set.prior_mask = blob.mask(size, size, -4);
            check(segment_clicks(window, set, {}));

            // High-contrast disk.
            const double r = 15 + 45 * u(rng), cx = 110 + 20 * (u(rng) - 0.5), cy = 110 + 20 * (u(rng) - 0.5);
            Mask disk(size, size);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    disk(x, y) = std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r;
            const ImageRgb disk_image = two_tone(disk, {20, 20, 20}, {235, 235, 235}, 5, rng);
            const ExtremeClicks disk_clicks{{Point{cx - r + 0.5, cy}, Point{cx + r - 0.5, cy}, Point{cx, cy - r + 0.5},
                                             Point{cx, cy + r - 0.5}}};
            const double v = iou(segment_extreme({{0, 0}, 0, disk_image}, disk_clicks, {}), disk);
            worst_iou = std::min(worst_iou, v);
            iou_failures += v < 0.95;
        } catch (const std::exception& e) {
            ++errors;
            if (first_error.empty())
                first_error = e.what();
        }
    }
    std::string detail = format("30 scenes: %d contract violations (worst extreme-point distance %.2f px, limit 5), "
                                "%d disks with IoU < 0.95 (worst %.4f)",
                                violations, worst_extreme, iou_failures, worst_iou);
    if (errors)
        detail += format(", %d errors (%s)", errors, first_error.c_str());
    return {violations == 0 && iou_failures == 0 && errors == 0, detail};
}

// --- 8. change detection -------------------------------------------------------

ChangeStatus mirrored(ChangeStatus s) {
    switch (s) {
    case ChangeStatus::grown: return ChangeStatus::shrunk;
    case ChangeStatus::shrunk: return ChangeStatus::grown;
    case ChangeStatus::appeared: return ChangeStatus::gone;
    case ChangeStatus::gone: return ChangeStatus::appeared;
    default: return s;
    }
}

Outcome changes_criterion() {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<Region> a, b;
    std::int64_t next_a = 1, next_b = 1001;
    std::vector<std::pair<double, double>> centres;
    for (int gy = 0; gy < 6; ++gy)
        for (int gx = 0; gx < 6; ++gx)
            centres.emplace_back(150 + 300 * gx + 20 * (u(rng) - 0.5), 150 + 300 * gy + 20 * (u(rng) - 0.5));
    // Per cell: 0 same, 1 grown, 2 shrunk, 3 gone, 4 new, 5 reclassified.
    for (std::size_t i = 0; i < centres.size(); ++i) {
        const auto [cx, cy] = centres[i];
        const double r = 50 + 40 * u(rng);
        const auto cls = static_cast<std::uint16_t>(1 + i % 3);
        const int kind = static_cast<int>(i % 6);
        if (kind != 4)
            a.push_back(polygon_region(disk_ring(cx, cy, r, 64), cls, next_a++));
        switch (kind) {
        case 0: b.push_back(polygon_region(disk_ring(cx, cy, r, 64), cls, next_b++)); break;
        case 1: b.push_back(polygon_region(disk_ring(cx, cy, r * 1.3, 64), cls, next_b++)); break;
        case 2: b.push_back(polygon_region(disk_ring(cx, cy, r * 0.75, 64), cls, next_b++)); break;
        case 4: b.push_back(polygon_region(disk_ring(cx, cy, r, 64), cls, next_b++)); break;
        case 5: b.push_back(polygon_region(disk_ring(cx, cy, r, 64), static_cast<std::uint16_t>(1 + (i + 1) % 3), next_b++)); break;
        default: break;
        }
    }
    const auto same = detect_changes(a, a, 1.0, 1.0);
    const bool identity_ok = same.size() == a.size() &&
                             std::all_of(same.begin(), same.end(), [](const ChangeRecord& r) { return r.status == ChangeStatus::same; });

    const auto ab = detect_changes(a, b, 1.0, 1.0);
    const auto ba = detect_changes(b, a, 1.0, 1.0);
    int mismatches = 0;
    std::array<int, 6> counts{};
    for (const auto& r : ab) {
        ++counts[static_cast<int>(r.status)];
        const auto it = std::find_if(ba.begin(), ba.end(), [&](const ChangeRecord& s) {
            return s.region_a == r.region_b && s.region_b == r.region_a;
        });
        if (it == ba.end()) {
            ++mismatches;
            continue;
        }
        bool ok = it->status == mirrored(r.status) && it->class_a == r.class_b && it->class_b == r.class_a &&
                  std::abs(it->iou - r.iou) <= 1e-12;
        if (r.area_ratio || it->area_ratio)
            ok = ok && r.area_ratio && it->area_ratio && std::abs(*r.area_ratio * *it->area_ratio - 1.0) <= 1e-12;
        mismatches += !ok;
    }
    const bool expected = counts[static_cast<int>(ChangeStatus::same)] == 6 && counts[static_cast<int>(ChangeStatus::grown)] == 6 &&
                          counts[static_cast<int>(ChangeStatus::shrunk)] == 6 && counts[static_cast<int>(ChangeStatus::gone)] == 6 &&
                          counts[static_cast<int>(ChangeStatus::appeared)] == 6 &&
                          counts[static_cast<int>(ChangeStatus::reclassified)] == 6;
    const bool ok = identity_ok && ab.size() == ba.size() && mismatches == 0 && expected;
    return {ok, format("identity %s (%zu records), swap: %zu/%zu records, %d asymmetric, status mix %s",
                       identity_ok ? "all same" : "NOT all same", same.size(), ab.size(), ba.size(), mismatches,
                       expected ? "as constructed" : "unexpected")};
}

// --- 9. IO bit-exactness ---------------------------------------------------------

bool close3(const Ring& a, const Ring& b) {
    if (a.size() != b.size())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::abs(a[i].x - b[i].x) > 5e-4 + 1e-9 || std::abs(a[i].y - b[i].y) > 5e-4 + 1e-9)
            return false;
    return true;
}

bool close3(const Region& a, const Region& b) {
    const Region ca = canonical(a), cb = canonical(b);
    if (ca.class_index != cb.class_index || ca.holes.size() != cb.holes.size() || !close3(ca.outer, cb.outer))
        return false;
    for (std::size_t i = 0; i < ca.holes.size(); ++i)
        if (!close3(ca.holes[i], cb.holes[i]))
            return false;
    return true;
}

Outcome io_criterion() {
    TempDir dir("io");
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> u(0, 1);
    ClassCatalog catalog;
    catalog.add("grass", {10, 200, 10});
    catalog.add("water", {0, 0, 255});
    catalog.add("roof", {255, 0, 0});
    catalog.add("road", {128, 128, 128});

    std::vector<Region> regions;
    for (int i = 0; i < 40; ++i) {
        const Blob blob = random_blob(rng, 20 + 280 * u(rng), 20 + 160 * u(rng), 6, 30, 0.3);
        Region r = polygon_region(blob.ring(24 + static_cast<int>(rng() % 40)), static_cast<std::uint16_t>(1 + i % 4));
        if (i % 5 == 0 && blob.r0 > 15)
            r.holes.push_back(disk_ring(blob.cx, blob.cy, blob.r0 * 0.3, 12));
        normalize_orientation(r);
        regions.push_back(r);
    }

    // Label map: export, import, export again.
    const PixelRect window{0, 0, 320, 200};
    const LabelRaster raster = render_labels(regions, window);
    export_labelmap(raster, catalog, dir.path() / "a.png");
    const LabelImport imported = import_labelmap(dir.path() / "a.png", catalog, window, true);
    export_labelmap(imported.raster, catalog, dir.path() / "b.png");
    const LabelImport again = import_labelmap(dir.path() / "b.png", catalog, window, true);
    const bool labels_ok = imported.raster == raster && again.raster == raster &&
                           file_bytes(dir.path() / "a.png") == file_bytes(dir.path() / "b.png");

    // Project: save, load, save.
    Project project(catalog);
    project.add_map({"survey", (dir.path() / "survey.png").string(), 12.5, "2023-09-30"}, dir.path());
    commit_regions(project, "survey", regions);
    project.save(dir.path() / "p1.json");
    const Project loaded = Project::load(dir.path() / "p1.json");
    loaded.save(dir.path() / "p2.json");
    bool project_ok = loaded == project && file_bytes(dir.path() / "p1.json") == file_bytes(dir.path() / "p2.json") &&
                      loaded.regions("survey").size() == regions.size();
    for (std::size_t i = 0; project_ok && i < regions.size(); ++i)
        project_ok = close3(loaded.regions("survey")[i], regions[i]);

    // GeoJSON profile: export, import, export again.
    export_vector(regions, catalog, dir.path() / "a.geojson");
    const auto back = import_vector(dir.path() / "a.geojson", catalog);
    export_vector(back, catalog, dir.path() / "b.geojson");
    bool vector_ok = back.size() == regions.size() &&
                     file_bytes(dir.path() / "a.geojson") == file_bytes(dir.path() / "b.geojson");
    for (std::size_t i = 0; vector_ok && i < regions.size(); ++i)
        vector_ok = close3(back[i], regions[i]);

    return {labels_ok && project_ok && vector_ok,
            format("label map involution %s, project roundtrip %s, GeoJSON roundtrip %s", labels_ok ? "ok" : "FAILED",
                   project_ok ? "ok" : "FAILED", vector_ok ? "ok" : "FAILED")};
}

// --- 10. scale -----------------------------------------------------------------

constexpr int scale_size = 32000;

Rgb8 scale_pixel(int x, int y) {
    return {static_cast<std::uint8_t>((x / 97) * 13 + y / 211), static_cast<std::uint8_t>((y / 61) * 7),
            static_cast<std::uint8_t>(((x + y) / 149) * 11)};
}

/// Runs in a child process so its peak resident set can be measured on its own.
int scale_child(const fs::path& dir) {
    const auto t0 = Clock::now();
    {
        png::RowWriter writer(dir / "big.png", scale_size, scale_size, png::PixelFormat::rgb8);
        std::vector<std::uint8_t> row(static_cast<std::size_t>(scale_size) * 3);
        for (int y = 0; y < scale_size; ++y) {
            for (int x = 0; x < scale_size; ++x) {
                const Rgb8 c = scale_pixel(x, y);
                row[3 * x] = c.r;
                row[3 * x + 1] = c.g;
                row[3 * x + 2] = c.b;
            }
            writer.write_row(row);
        }
        writer.finish();
    }
    std::printf("  image written in %.1f s\n", seconds_since(t0));
    std::fflush(stdout);

    ClassCatalog catalog;
    catalog.add("a", {255, 0, 0});
    catalog.add("b", {0, 255, 0});
    catalog.add("c", {0, 0, 255});
    Project project(catalog);
    project.add_map({"big", (dir / "big.png").string(), 10.0, ""}, dir);
    const OrthoMap map = project.open_map("big", dir);
    project.save(dir / "project.json");
    std::printf("  opened with %d pyramid levels at %.1f s\n", map.levels(), seconds_since(t0));
    std::fflush(stdout);

    {
        ServiceConfig config;
        config.port = 0;
        config.jobs = 1;
        Service service(dir / "project.json", config);
        const int port = service.start();
        httplib::Client client("127.0.0.1", port);
        client.set_read_timeout(120, 0);
        struct Probe {
            int level, tx, ty;
        };
        const int top = map.levels() - 1;
        for (const Probe p : {Probe{0, 0, 0}, Probe{0, 62, 97}, Probe{0, 124, 124}, Probe{3, 7, 9}, Probe{top, 0, 0}}) {
            const auto res = client.Get(format("/maps/big/tiles/%d/%d/%d.png", p.level, p.tx, p.ty));
            if (!res || res->status != 200) {
                std::printf("  tile %d/%d/%d failed\n", p.level, p.tx, p.ty);
                return 1;
            }
            const ImageRgb tile = png::decode_rgb({reinterpret_cast<const std::uint8_t*>(res->body.data()), res->body.size()});
            const auto [lw, lh] = map.level_size(p.level);
            const int x0 = p.tx * pyramid_tile_size, y0 = p.ty * pyramid_tile_size;
            const int w = std::min(pyramid_tile_size, lw - x0), h = std::min(pyramid_tile_size, lh - y0);
            if (tile.width() != w || tile.height() != h) {
                std::printf("  tile %d/%d/%d has the wrong size\n", p.level, p.tx, p.ty);
                return 1;
            }
            if (p.level == 0)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        if (tile.at(x, y) != scale_pixel(x0 + x, y0 + y)) {
                            std::printf("  tile %d/%d/%d differs from the image\n", p.level, p.tx, p.ty);
                            return 1;
                        }
        }
        service.stop();
    }
    std::printf("  tiles served at %.1f s\n", seconds_since(t0));
    std::fflush(stdout);

    const ColourLookup model(catalog.size());
    InferenceConfig cfg;
    cfg.tile_size = 1024;
    cfg.stride = 1024;
    infer_to_png(map, model, catalog, {0, 0, scale_size, scale_size}, cfg, dir / "labels.png");
    std::printf("  inference streamed at %.1f s\n", seconds_since(t0));
    std::fflush(stdout);

    png::RowReader reader(dir / "labels.png");
    if (reader.width() != scale_size || reader.height() != scale_size) {
        std::printf("  label map has the wrong size\n");
        return 1;
    }
    std::vector<std::uint8_t> row(static_cast<std::size_t>(scale_size) * 3);
    for (int y = 0; y < scale_size; ++y) {
        reader.read_row(row);
        if (y % 997 != 0)
            continue;
        for (int x = 0; x < scale_size; x += 7) {
            const Rgb8 c = scale_pixel(x, y);
            const std::uint8_t rgb[3] = {c.r, c.g, c.b};
            const Rgb8 expected = catalog[model.direct(rgb)].color;
            if (Rgb8{row[3 * x], row[3 * x + 1], row[3 * x + 2]} != expected) {
                std::printf("  label map differs from direct prediction at (%d, %d)\n", x, y);
                return 1;
            }
        }
    }
    std::printf("  finished at %.1f s\n", seconds_since(t0));
    std::fflush(stdout);
    return 0;
}

Outcome scale_criterion(const char* self) {
    TempDir dir("scale");
    const auto t0 = Clock::now();
    const pid_t pid = ::fork();
    if (pid < 0)
        return {false, "fork failed"};
    if (pid == 0) {
        ::execl(self, self, "--scale-child", dir.path().c_str(), static_cast<char*>(nullptr));
        std::_Exit(127);
    }
    int status = 0;
    rusage usage{};
    if (::wait4(pid, &status, 0, &usage) != pid)
        return {false, "wait4 failed"};
    const bool exited_ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
    const double peak_bytes = static_cast<double>(usage.ru_maxrss) * 1024.0;
    const double limit = 2e9;
    return {exited_ok && peak_bytes < limit,
            format("32000x32000 open, tile serving and streamed inference %s, peak RSS %.0f MB (limit 2000 MB), %.1f s",
                   exited_ok ? "succeeded" : "FAILED", peak_bytes / 1e6, seconds_since(t0))};
}

} // namespace

int main(int argc, char** argv) {
    if (argc == 3 && std::strcmp(argv[1], "--scale-child") == 0) {
        try {
            return scale_child(argv[2]);
        } catch (const std::exception& e) {
            std::printf("  error: %s\n", e.what());
            return 1;
        }
    }

    const char* self = argv[0];
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"max-flow-correctness", maxflow_criterion},
        {"refinement-band-guarantee", refine_criterion},
        {"rasterize-vectorize-roundtrip", roundtrip_criterion},
        {"blend-equivalence", blend_criterion},
        {"metrics-oracle", metrics_criterion},
        {"end-to-end", end_to_end_criterion},
        {"click-contracts", click_criterion},
        {"change-detection-symmetry", changes_criterion},
        {"io-bit-exactness", io_criterion},
        {"scale-handling", [self] { return scale_criterion(self); }},
    };

    std::vector<std::string> selected(argv + 1, argv + argc);
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        if (!selected.empty() && std::find(selected.begin(), selected.end(), name) == selected.end())
            continue;
        Outcome outcome;
        const auto t0 = Clock::now();
        try {
            outcome = run();
        } catch (const std::exception& e) {
            outcome = {false, std::string("error: ") + e.what()};
        }
        failed += !outcome.pass;
        std::printf("%s %s: %s [%.1f s]\n", outcome.pass ? "PASS" : "FAIL", name.c_str(), outcome.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
