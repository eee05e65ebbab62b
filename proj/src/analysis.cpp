#include "orthoseg/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "json_util.hpp"

namespace orthoseg {

using nlohmann::json;

namespace {

constexpr int band_rows = 1024;

PixelRect pixel_bbox(const Region& r) {
    const BBox b = bounding_box(r.outer);
    const int x0 = static_cast<int>(std::floor(b.x)), y0 = static_cast<int>(std::floor(b.y));
    const int x1 = static_cast<int>(std::ceil(b.x + b.w)), y1 = static_cast<int>(std::ceil(b.y + b.h));
    return {x0, y0, x1 - x0, y1 - y0};
}

std::string fixed3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace

CoverageReport coverage(std::span<const Region> regions, const ClassCatalog& catalog, const PixelRect& area,
                        double pixel_size_mm) {
    require(!area.empty(), "coverage area must not be empty");
    require(pixel_size_mm > 0, "pixel size must be positive");
    CoverageReport rep;
    rep.area = area;
    rep.pixel_size_mm = pixel_size_mm;
    for (std::size_t k = 1; k < catalog.size(); ++k)
        rep.classes.push_back({static_cast<std::uint16_t>(k), catalog[k].name, 0, 0, 0, 0});
    for (const auto& r : regions)
        if (r.class_index == 0 || r.class_index >= catalog.size())
            fail(ErrorKind::invalid_argument, "region " + std::to_string(r.id) + " has a class outside the catalog");

    std::vector<PixelRect> boxes;
    for (const auto& r : regions)
        boxes.push_back(pixel_bbox(r));
    std::vector<char> visible(regions.size(), 0);
    std::vector<std::int32_t> index;
    for (int y0 = area.y; y0 < area.bottom(); y0 += band_rows) {
        const PixelRect band{area.x, y0, area.w, std::min(band_rows, area.bottom() - y0)};
        index.assign(static_cast<std::size_t>(band.w) * band.h, -1);
        for (std::size_t i = 0; i < regions.size(); ++i) {
            const PixelRect win = boxes[i].intersect(band);
            if (win.empty())
                continue;
            const Mask m = rasterize(regions[i], win);
            for (int y = 0; y < win.h; ++y)
                for (int x = 0; x < win.w; ++x)
                    if (m(x, y))
                        index[static_cast<std::size_t>(win.y - band.y + y) * band.w + (win.x - band.x + x)] =
                            static_cast<std::int32_t>(i);
        }
        for (auto v : index)
            if (v >= 0) {
                visible[v] = 1;
                ++rep.classes[regions[v].class_index - 1].area_px;
            }
    }
    for (std::size_t i = 0; i < regions.size(); ++i)
        if (visible[i])
            ++rep.classes[regions[i].class_index - 1].region_count;
    const double total = static_cast<double>(area.w) * area.h;
    for (auto& c : rep.classes) {
        c.area_mm2 = static_cast<double>(c.area_px) * pixel_size_mm * pixel_size_mm;
        c.coverage_percent = 100.0 * static_cast<double>(c.area_px) / total;
    }
    return rep;
}

std::string to_string(ChangeStatus s) {
    switch (s) {
    case ChangeStatus::same: return "same";
    case ChangeStatus::grown: return "grown";
    case ChangeStatus::shrunk: return "shrunk";
    case ChangeStatus::appeared: return "new";
    case ChangeStatus::gone: return "gone";
    case ChangeStatus::reclassified: return "reclassified";
    }
    return "same";
}

namespace {

struct Footprint {
    PixelRect box;
    Mask mask;
    std::uint64_t area = 0;
};

Footprint footprint(const Region& r) {
    Footprint f;
    f.box = pixel_bbox(r);
    f.mask = rasterize(r, f.box);
    f.area = f.mask.count();
    return f;
}

std::uint64_t overlap(const Footprint& a, const Footprint& b) {
    const PixelRect o = a.box.intersect(b.box);
    std::uint64_t n = 0;
    for (int y = o.y; y < o.bottom(); ++y)
        for (int x = o.x; x < o.right(); ++x)
            n += a.mask(x - a.box.x, y - a.box.y) && b.mask(x - b.box.x, y - b.box.y);
    return n;
}

struct Candidate {
    std::size_t a, b;
    double iou;
};

} // namespace

std::vector<ChangeRecord> detect_changes(std::span<const Region> a, std::span<const Region> b, double px_a, double px_b,
                                         const ChangeParams& params) {
    require(params.iou_threshold > 0 && params.iou_threshold <= 1, "IoU threshold must be in (0, 1]");
    require(params.grow_threshold >= 0, "growth threshold must be non-negative");
    if (std::abs(px_a - px_b) > 1e-9 * std::max(px_a, px_b))
        fail(ErrorKind::invalid_argument, "surveys have different pixel sizes (" + fixed3(px_a) + " vs " + fixed3(px_b) +
                                              " mm); co-register them first");
    std::vector<Footprint> fa, fb;
    for (const auto& r : a)
        fa.push_back(footprint(r));
    for (const auto& r : b)
        fb.push_back(footprint(r));

    std::vector<Candidate> same_class, cross_class;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (fa[i].box.intersect(fb[j].box).empty())
                continue;
            const std::uint64_t inter = overlap(fa[i], fb[j]);
            if (inter == 0)
                continue;
            const double iou = static_cast<double>(inter) / static_cast<double>(fa[i].area + fb[j].area - inter);
            if (iou < params.iou_threshold)
                continue;
            (a[i].class_index == b[j].class_index ? same_class : cross_class).push_back({i, j, iou});
        }
    // Ties are ordered by the unordered id pair so that swapping the surveys visits pairs in the same order.
    auto order = [&](const Candidate& x, const Candidate& y) {
        if (x.iou != y.iou)
            return x.iou > y.iou;
        const auto kx = std::minmax(a[x.a].id, b[x.b].id), ky = std::minmax(a[y.a].id, b[y.b].id);
        if (kx != ky)
            return kx < ky;
        return a[x.a].id < a[y.a].id;
    };
    std::sort(same_class.begin(), same_class.end(), order);
    std::sort(cross_class.begin(), cross_class.end(), order);

    std::vector<char> used_a(a.size(), 0), used_b(b.size(), 0);
    std::vector<ChangeRecord> out;
    auto emit_pair = [&](const Candidate& c, ChangeStatus status) {
        ChangeRecord rec;
        rec.status = status;
        rec.region_a = a[c.a].id;
        rec.region_b = b[c.b].id;
        rec.class_a = a[c.a].class_index;
        rec.class_b = b[c.b].class_index;
        rec.iou = c.iou;
        rec.area_ratio = static_cast<double>(fb[c.b].area) / static_cast<double>(fa[c.a].area);
        used_a[c.a] = used_b[c.b] = 1;
        out.push_back(rec);
    };
    const double g = params.grow_threshold;
    for (const auto& c : same_class) {
        if (used_a[c.a] || used_b[c.b])
            continue;
        const double ratio = static_cast<double>(fb[c.b].area) / static_cast<double>(fa[c.a].area);
        emit_pair(c, ratio > 1 + g ? ChangeStatus::grown : ratio < 1 / (1 + g) ? ChangeStatus::shrunk : ChangeStatus::same);
    }
    for (const auto& c : cross_class)
        if (!used_a[c.a] && !used_b[c.b])
            emit_pair(c, ChangeStatus::reclassified);
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!used_a[i]) {
            ChangeRecord rec;
            rec.status = ChangeStatus::gone;
            rec.region_a = a[i].id;
            rec.class_a = a[i].class_index;
            out.push_back(rec);
        }
    for (std::size_t j = 0; j < b.size(); ++j)
        if (!used_b[j]) {
            ChangeRecord rec;
            rec.status = ChangeStatus::appeared;
            rec.region_b = b[j].id;
            rec.class_b = b[j].class_index;
            out.push_back(rec);
        }
    auto key = [](const ChangeRecord& r) {
        return std::make_tuple(r.class_a ? *r.class_a : *r.class_b, r.region_a ? *r.region_a : *r.region_b,
                               r.region_b.value_or(-1));
    };
    std::sort(out.begin(), out.end(), [&](const ChangeRecord& x, const ChangeRecord& y) { return key(x) < key(y); });
    return out;
}

std::string coverage_csv(const CoverageReport& report) {
    std::string out = std::string(coverage_csv_header) + "\n";
    for (const auto& c : report.classes)
        out += std::to_string(c.class_index) + "," + csv_field(c.name) + "," + std::to_string(c.region_count) + "," +
               fixed3(static_cast<double>(c.area_px)) + "," + fixed3(c.area_mm2) + "," + fixed3(c.coverage_percent) + "\n";
    return out;
}

std::string changes_csv(std::span<const ChangeRecord> records) {
    std::string out = std::string(changes_csv_header) + "\n";
    auto opt = [](const auto& v) { return v ? std::to_string(*v) : std::string(); };
    for (const auto& r : records)
        out += to_string(r.status) + "," + opt(r.region_a) + "," + opt(r.region_b) + "," + opt(r.class_a) + "," +
               opt(r.class_b) + "," + fixed3(r.iou) + "," + (r.area_ratio ? fixed3(*r.area_ratio) : std::string()) + "\n";
    return out;
}

void write_csv(const std::string& content, const std::filesystem::path& path) { jsonutil::write_atomic(path, content); }

json to_json(const CoverageReport& report) {
    json classes = json::array();
    for (const auto& c : report.classes)
        classes.push_back(json{{"class_index", c.class_index},
                               {"class_name", c.name},
                               {"region_count", c.region_count},
                               {"area_px", c.area_px},
                               {"area_mm2", c.area_mm2},
                               {"coverage_percent", c.coverage_percent}});
    return json{{"area", json::array({report.area.x, report.area.y, report.area.w, report.area.h})},
                {"pixel_size_mm", report.pixel_size_mm},
                {"classes", classes}};
}

json to_json(const ChangeRecord& r) {
    auto opt = [](const auto& v) { return v ? json(*v) : json(nullptr); };
    return json{{"status", to_string(r.status)}, {"region_a", opt(r.region_a)}, {"region_b", opt(r.region_b)},
                {"class_a", opt(r.class_a)},     {"class_b", opt(r.class_b)},   {"iou", r.iou},
                {"area_ratio", opt(r.area_ratio)}};
}

} // namespace orthoseg
