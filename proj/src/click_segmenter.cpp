#include "orthoseg/click_segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "base64.hpp"
#include "http_client.hpp"
#include "orthoseg/graphcut.hpp"
#include "orthoseg/png_io.hpp"

namespace orthoseg {

using nlohmann::json;

namespace {

struct ClickLimits {
    int extreme_margin_px = 10;      // mask stays inside the click box grown by this
    double extreme_tolerance_px = 5; // each extreme click within this of the mask boundary
    int prior_band_px = 64;          // edits of a prior mask stay within this of its boundary
    int seed_radius_px = 3;
};
constexpr ClickLimits limits{};
constexpr double click_lambda = 50.0;
constexpr int click_hist_bins = 16;
constexpr int max_full_window = 1024;
constexpr int click_crop_margin = 256;

PixelPoint to_pixel(const RasterWindow& w, Point p) {
    return {static_cast<int>(std::floor(p.x)) - w.origin.x, static_cast<int>(std::floor(p.y)) - w.origin.y};
}

bool in_window(const RasterWindow& w, PixelPoint p) { return p.x >= 0 && p.y >= 0 && p.x < w.width() && p.y < w.height(); }

void require_inside(const RasterWindow& w, Point p) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !in_window(w, to_pixel(w, p)))
        fail(ErrorKind::invalid_argument, "click (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                                              ") lies outside the image window");
}

PixelRect click_bbox(const RasterWindow& w, std::span<const Point> pts) {
    int x0 = INT32_MAX, y0 = INT32_MAX, x1 = INT32_MIN, y1 = INT32_MIN;
    for (const auto& p : pts) {
        const PixelPoint q = to_pixel(w, p);
        x0 = std::min(x0, q.x);
        y0 = std::min(y0, q.y);
        x1 = std::max(x1, q.x);
        y1 = std::max(y1, q.y);
    }
    return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

PixelRect grow(const PixelRect& r, int mx, int my) { return {r.x - mx, r.y - my, r.w + 2 * mx, r.h + 2 * my}; }

// Boundary pixels of a mask where the window edge counts as background.
std::vector<PixelPoint> mask_boundary(const Mask& m) {
    std::vector<PixelPoint> out;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            const auto c = m(x, y);
            if (m.get(x - 1, y) != c || m.get(x + 1, y) != c || m.get(x, y - 1) != c || m.get(x, y + 1) != c)
                out.push_back({x, y});
        }
    return out;
}

void paint_disk(std::vector<PixelRole>& roles, const PixelRect& crop, PixelPoint c, int r, PixelRole role,
                const PixelRect& clip) {
    for (int y = c.y - r; y <= c.y + r; ++y)
        for (int x = c.x - r; x <= c.x + r; ++x)
            if ((x - c.x) * (x - c.x) + (y - c.y) * (y - c.y) <= r * r && crop.contains(x, y) && clip.contains(x, y))
                roles[static_cast<std::size_t>(y - crop.y) * crop.w + (x - crop.x)] = role;
}

// Keeps the 4-connected components of `m` that contain any of `keep`.
Mask components_containing(const Mask& m, std::span<const PixelPoint> keep) {
    Mask out(m.width(), m.height());
    std::queue<PixelPoint> q;
    for (auto p : keep)
        if (m.get(p.x, p.y) && !out(p.x, p.y)) {
            out(p.x, p.y) = 1;
            q.push(p);
        }
    while (!q.empty()) {
        const PixelPoint p = q.front();
        q.pop();
        const PixelPoint nb[4] = {{p.x + 1, p.y}, {p.x - 1, p.y}, {p.x, p.y + 1}, {p.x, p.y - 1}};
        for (auto n : nb)
            if (m.get(n.x, n.y) && !out(n.x, n.y)) {
                out(n.x, n.y) = 1;
                q.push(n);
            }
    }
    return out;
}

Mask solve_in_crop(const RasterWindow& w, const PixelRect& crop, std::vector<PixelRole> roles) {
    if (std::none_of(roles.begin(), roles.end(), [](PixelRole r) { return r == PixelRole::free; })) {
        Mask out(w.width(), w.height());
        for (int y = 0; y < crop.h; ++y)
            for (int x = 0; x < crop.w; ++x)
                out(crop.x + x, crop.y + y) = roles[static_cast<std::size_t>(y) * crop.w + x] == PixelRole::foreground;
        return out;
    }
    const ImageRgb img = w.pixels.crop(crop);
    const Mask cut = solve_pixel_cut(build_pixel_cut(img, std::move(roles), click_lambda, click_hist_bins));
    Mask out(w.width(), w.height());
    for (int y = 0; y < crop.h; ++y)
        for (int x = 0; x < crop.w; ++x)
            out(crop.x + x, crop.y + y) = cut(x, y);
    return out;
}

bool has_contrast(const ImageRgb& img) {
    const auto b = img.bytes();
    for (std::size_t i = 3; i < b.size(); ++i)
        if (b[i] != b[i % 3])
            return true;
    return false;
}

Mask bbox_mask(const RasterWindow& w, const PixelRect& r) {
    Mask m(w.width(), w.height());
    for (int y = r.y; y < r.bottom(); ++y)
        for (int x = r.x; x < r.right(); ++x)
            m(x, y) = 1;
    return m;
}

Mask builtin_extreme(const RasterWindow& w, const ExtremeClicks& clicks) {
    const PixelRect bbox = click_bbox(w, clicks.points);
    const PixelRect window_rect{0, 0, w.width(), w.height()};
    const int mx = std::max(1, static_cast<int>(std::ceil(0.25 * bbox.w)));
    const int my = std::max(1, static_cast<int>(std::ceil(0.25 * bbox.h)));
    const PixelRect crop = grow(bbox, mx, my).intersect(window_rect);
    const PixelRect allowed = grow(bbox, limits.extreme_margin_px, limits.extreme_margin_px);

    if (!has_contrast(w.pixels.crop(crop)))
        return bbox_mask(w, bbox);

    std::vector<PixelRole> roles(static_cast<std::size_t>(crop.w) * crop.h, PixelRole::free);
    for (int y = 0; y < crop.h; ++y)
        for (int x = 0; x < crop.w; ++x) {
            const bool border = x == 0 || y == 0 || x == crop.w - 1 || y == crop.h - 1;
            if (border || !allowed.contains(crop.x + x, crop.y + y))
                roles[static_cast<std::size_t>(y) * crop.w + x] = PixelRole::background;
        }
    double cx = 0, cy = 0;
    for (const auto& p : clicks.points) {
        cx += p.x / 4;
        cy += p.y / 4;
    }
    const PixelPoint centre = to_pixel(w, {cx, cy});
    paint_disk(roles, crop, centre, limits.seed_radius_px, PixelRole::foreground, bbox);
    const PixelPoint seeds[1] = {centre};
    Mask m = components_containing(solve_in_crop(w, crop, std::move(roles)), seeds);
    try {
        check_extreme_contract(w, clicks, m);
    } catch (const Error&) {
        return bbox_mask(w, bbox);
    }
    return m;
}

Mask builtin_clicks(const RasterWindow& w, const ClickSet& clicks) {
    const PixelRect window_rect{0, 0, w.width(), w.height()};
    PixelRect crop = window_rect;
    if (w.width() > max_full_window || w.height() > max_full_window) {
        std::vector<Point> all = clicks.positives;
        all.insert(all.end(), clicks.negatives.begin(), clicks.negatives.end());
        crop = grow(click_bbox(w, all), click_crop_margin, click_crop_margin).intersect(window_rect);
    }
    std::vector<PixelRole> roles(static_cast<std::size_t>(crop.w) * crop.h, PixelRole::free);
    if (clicks.prior_mask) {
        const Mask& prior = *clicks.prior_mask;
        const Mask sub = [&] {
            Mask s(crop.w, crop.h);
            for (int y = 0; y < crop.h; ++y)
                for (int x = 0; x < crop.w; ++x)
                    s(x, y) = prior(crop.x + x, crop.y + y);
            return s;
        }();
        const auto d2 = squared_distance_transform(boundary_pixels(sub));
        const double limit = double(limits.prior_band_px) * limits.prior_band_px;
        for (std::size_t i = 0; i < roles.size(); ++i)
            if (!(d2[i] <= limit))
                roles[i] = sub.bytes()[i] ? PixelRole::foreground : PixelRole::background;
    } else {
        for (int y = 0; y < crop.h; ++y)
            for (int x = 0; x < crop.w; ++x)
                if (x == 0 || y == 0 || x == crop.w - 1 || y == crop.h - 1)
                    roles[static_cast<std::size_t>(y) * crop.w + x] = PixelRole::background;
    }
    std::vector<PixelPoint> pos;
    for (const auto& p : clicks.negatives)
        paint_disk(roles, crop, to_pixel(w, p), limits.seed_radius_px, PixelRole::background, window_rect);
    for (const auto& p : clicks.positives) {
        pos.push_back(to_pixel(w, p));
        paint_disk(roles, crop, pos.back(), limits.seed_radius_px, PixelRole::foreground, window_rect);
    }
    for (const auto& p : clicks.negatives) {
        const PixelPoint q = to_pixel(w, p);
        if (crop.contains(q.x, q.y))
            roles[static_cast<std::size_t>(q.y - crop.y) * crop.w + (q.x - crop.x)] = PixelRole::background;
    }
    Mask cut = solve_in_crop(w, crop, std::move(roles));
    if (clicks.prior_mask) {
        // Outside the crop the prior is unchanged.
        const Mask& prior = *clicks.prior_mask;
        for (int y = 0; y < w.height(); ++y)
            for (int x = 0; x < w.width(); ++x)
                if (!crop.contains(x, y))
                    cut(x, y) = prior(x, y);
        return cut;
    }
    return components_containing(cut, pos);
}

json point_json(const RasterWindow& w, Point p) { return json::array({p.x - w.origin.x, p.y - w.origin.y}); }

std::string mask_png_b64(const Mask& m) {
    return base64::encode(png::encode_gray8(m.bytes(), m.width(), m.height()));
}

Mask external_request(const RasterWindow& w, const SegmenterBackend& backend, const std::string& tool, json clicks) {
    handshake(backend);
    json req{{"tool", tool},
             {"origin", json::array({w.origin.x, w.origin.y})},
             {"crop", base64::encode(png::encode_rgb(w.pixels))},
             {"clicks", std::move(clicks)}};
    const json res = http::post_json(backend.endpoint, "/segment", req, backend.timeout_s);
    if (!res.is_object())
        fail(ErrorKind::io, "segmentation backend returned a malformed reply");
    if (res.contains("error"))
        fail(ErrorKind::io, "segmentation backend error: " + res["error"].dump());
    if (!res.contains("mask") || !res["mask"].is_string())
        fail(ErrorKind::io, "segmentation backend reply has no mask");
    int mw = 0, mh = 0;
    std::vector<std::uint8_t> px;
    try {
        px = png::decode_gray8(base64::decode(res["mask"].get<std::string>()), mw, mh);
    } catch (const Error& e) {
        fail(ErrorKind::io, std::string("segmentation backend mask is not a valid PNG: ") + e.what());
    }
    if (mw != w.width() || mh != w.height())
        fail(ErrorKind::io, "segmentation backend mask is " + std::to_string(mw) + "x" + std::to_string(mh) +
                                ", expected " + std::to_string(w.width()) + "x" + std::to_string(w.height()));
    Mask m(mw, mh);
    for (std::size_t i = 0; i < px.size(); ++i)
        m.bytes()[i] = px[i] != 0;
    return m;
}

} // namespace

void handshake(const SegmenterBackend& backend) {
    const json res = http::post_json(backend.endpoint, "/hello", json{{"op", "hello"}}, backend.timeout_s);
    if (!res.is_object() || res.value("ok", false) != true)
        fail(ErrorKind::io, "segmentation backend handshake was rejected");
    if (!res.contains("protocol") || res["protocol"] != segment_protocol_version)
        fail(ErrorKind::io, "segmentation backend speaks protocol " + (res.contains("protocol") ? res["protocol"].dump() : "?") +
                                ", expected " + std::to_string(segment_protocol_version));
}

void check_extreme_contract(const RasterWindow& w, const ExtremeClicks& clicks, const Mask& mask) {
    if (mask.count() == 0)
        fail(ErrorKind::contract_violation, "segmentation returned an empty mask");
    const PixelRect allowed = grow(click_bbox(w, clicks.points), limits.extreme_margin_px, limits.extreme_margin_px);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask(x, y) && !allowed.contains(x, y))
                fail(ErrorKind::contract_violation, "mask pixel (" + std::to_string(x + w.origin.x) + ", " +
                                                        std::to_string(y + w.origin.y) +
                                                        ") lies outside the click box margin");
    const auto boundary = mask_boundary(mask);
    for (const auto& p : clicks.points) {
        const PixelPoint c = to_pixel(w, p);
        double best = std::numeric_limits<double>::infinity();
        for (auto b : boundary)
            best = std::min(best, std::hypot(double(b.x - c.x), double(b.y - c.y)));
        if (best > limits.extreme_tolerance_px)
            fail(ErrorKind::contract_violation, "extreme click (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                                                    ") is " + std::to_string(best) + " px from the mask boundary");
    }
}

void check_clicks_contract(const RasterWindow& w, const ClickSet& clicks, const Mask& mask) {
    for (const auto& p : clicks.positives) {
        const PixelPoint q = to_pixel(w, p);
        if (!mask.get(q.x, q.y))
            fail(ErrorKind::contract_violation, "mask excludes positive click (" + std::to_string(p.x) + ", " +
                                                    std::to_string(p.y) + ")");
    }
    for (const auto& p : clicks.negatives) {
        const PixelPoint q = to_pixel(w, p);
        if (mask.get(q.x, q.y))
            fail(ErrorKind::contract_violation, "mask includes negative click (" + std::to_string(p.x) + ", " +
                                                    std::to_string(p.y) + ")");
    }
    if (clicks.prior_mask) {
        const Mask& prior = *clicks.prior_mask;
        const auto d2 = squared_distance_transform(boundary_pixels(prior));
        const double limit = double(limits.prior_band_px) * limits.prior_band_px;
        const auto a = mask.bytes(), b = prior.bytes();
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i] != b[i] && !(d2[i] <= limit))
                fail(ErrorKind::contract_violation, "mask changes the prior more than " +
                                                        std::to_string(limits.prior_band_px) + " px from its boundary");
    }
}

Mask segment_extreme(const RasterWindow& window, const ExtremeClicks& clicks, const SegmenterBackend& backend) {
    for (std::size_t i = 0; i < 4; ++i) {
        require_inside(window, clicks.points[i]);
        for (std::size_t j = 0; j < i; ++j)
            if (clicks.points[i] == clicks.points[j])
                fail(ErrorKind::invalid_argument, "extreme clicks must be four distinct points");
    }
    const PixelRect bbox = click_bbox(window, clicks.points);
    if (static_cast<long long>(bbox.w) * bbox.h < 9)
        fail(ErrorKind::invalid_argument, "extreme clicks span less than 9 px^2");

    Mask m;
    if (backend.kind == BackendKind::builtin) {
        m = builtin_extreme(window, clicks);
    } else {
        json pts = json::array();
        for (const auto& p : clicks.points)
            pts.push_back(point_json(window, p));
        m = external_request(window, backend, "extreme", json{{"extreme", pts}});
    }
    check_extreme_contract(window, clicks, m);
    return m;
}

Mask segment_clicks(const RasterWindow& window, const ClickSet& clicks, const SegmenterBackend& backend) {
    if (clicks.positives.empty())
        fail(ErrorKind::invalid_argument, "at least one positive click is required");
    for (const auto& p : clicks.positives)
        require_inside(window, p);
    for (const auto& p : clicks.negatives) {
        require_inside(window, p);
        for (const auto& q : clicks.positives)
            if (to_pixel(window, p) == to_pixel(window, q))
                fail(ErrorKind::invalid_argument, "a pixel cannot be both a positive and a negative click");
    }
    if (clicks.prior_mask && (clicks.prior_mask->width() != window.width() || clicks.prior_mask->height() != window.height()))
        fail(ErrorKind::invalid_argument, "prior mask size differs from the window");

    Mask m;
    if (backend.kind == BackendKind::builtin) {
        m = builtin_clicks(window, clicks);
    } else {
        json pos = json::array(), neg = json::array();
        for (const auto& p : clicks.positives)
            pos.push_back(point_json(window, p));
        for (const auto& p : clicks.negatives)
            neg.push_back(point_json(window, p));
        json c{{"positive", pos}, {"negative", neg}};
        if (clicks.prior_mask)
            c["prior"] = mask_png_b64(*clicks.prior_mask);
        m = external_request(window, backend, "clicks", std::move(c));
    }
    check_clicks_contract(window, clicks, m);
    return m;
}

namespace {

PixelRect points_window(const std::vector<Point>& pts, int margin, const PixelRect& bounds) {
    double x0 = pts.front().x, y0 = pts.front().y, x1 = x0, y1 = y0;
    for (const Point& p : pts) {
        x0 = std::min(x0, p.x);
        y0 = std::min(y0, p.y);
        x1 = std::max(x1, p.x);
        y1 = std::max(y1, p.y);
    }
    const int ix0 = static_cast<int>(std::floor(x0)) - margin, iy0 = static_cast<int>(std::floor(y0)) - margin;
    const int ix1 = static_cast<int>(std::floor(x1)) + 1 + margin, iy1 = static_cast<int>(std::floor(y1)) + 1 + margin;
    return PixelRect{ix0, iy0, ix1 - ix0, iy1 - iy0}.intersect(bounds);
}

PixelRect unite(const PixelRect& a, const PixelRect& b) {
    if (a.empty())
        return b;
    if (b.empty())
        return a;
    const int x0 = std::min(a.x, b.x), y0 = std::min(a.y, b.y);
    return {x0, y0, std::max(a.right(), b.right()) - x0, std::max(a.bottom(), b.bottom()) - y0};
}

} // namespace

Region extreme_click_region(const OrthoMap& map, const ExtremeClicks& clicks, std::uint16_t class_index,
                            const SegmenterBackend& backend) {
    const std::vector<Point> pts(clicks.points.begin(), clicks.points.end());
    const PixelRect bounds{0, 0, map.width(), map.height()};
    const PixelRect tight = points_window(pts, 0, bounds);
    const PixelRect w = points_window(pts, std::max(16, std::max(tight.w, tight.h) / 2), bounds);
    require(!w.empty(), "clicks lie outside the map");
    const RasterWindow win = map.read_window({w.x, w.y}, w.w, w.h);
    const Mask m = segment_extreme(win, clicks, backend);
    auto parts = vectorize(m, win.origin, {0, class_index, Provenance::assisted_click});
    if (parts.empty())
        fail(ErrorKind::contract_violation, "segmenter returned an empty mask");
    return *std::max_element(parts.begin(), parts.end(),
                             [](const Region& a, const Region& b) { return region_area(a) < region_area(b); });
}

std::vector<Region> click_regions(const OrthoMap& map, const std::vector<Point>& positives,
                                  const std::vector<Point>& negatives, const std::optional<Region>& prior,
                                  std::uint16_t class_index, const SegmenterBackend& backend, int margin) {
    require(!positives.empty(), "at least one positive click is required");
    require(margin >= 0, "margin must be non-negative");
    const PixelRect bounds{0, 0, map.width(), map.height()};
    std::vector<Point> all = positives;
    all.insert(all.end(), negatives.begin(), negatives.end());
    PixelRect w = points_window(all, margin, bounds);
    if (prior) {
        const BBox b = bounding_box(prior->outer);
        const int x0 = static_cast<int>(std::floor(b.x)) - margin, y0 = static_cast<int>(std::floor(b.y)) - margin;
        const int x1 = static_cast<int>(std::ceil(b.x + b.w)) + margin, y1 = static_cast<int>(std::ceil(b.y + b.h)) + margin;
        w = unite(w, PixelRect{x0, y0, x1 - x0, y1 - y0}.intersect(bounds));
    }
    require(!w.empty(), "clicks lie outside the map");
    require(static_cast<std::int64_t>(w.w) * w.h <= std::int64_t{4096} * 4096, "click window too large");
    ClickSet clicks{positives, negatives, std::nullopt};
    if (prior)
        clicks.prior_mask = rasterize(*prior, w);
    const RasterWindow win = map.read_window({w.x, w.y}, w.w, w.h);
    const Mask m = segment_clicks(win, clicks, backend);
    auto parts = vectorize(m, win.origin, {0, class_index, Provenance::assisted_click});
    if (parts.empty())
        fail(ErrorKind::contract_violation, "segmenter returned an empty mask");
    std::stable_sort(parts.begin(), parts.end(),
                     [](const Region& a, const Region& b) { return region_area(a) > region_area(b); });
    return parts;
}

} // namespace orthoseg
