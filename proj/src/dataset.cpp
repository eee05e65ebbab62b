#include "orthoseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "orthoseg/png_io.hpp"

namespace orthoseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    fail(ErrorKind::invalid_argument, "unknown split '" + s + "'");
}

std::size_t TileDataset::count(Split s) const {
    return static_cast<std::size_t>(std::count_if(tiles.begin(), tiles.end(), [s](const TileEntry& t) { return t.split == s; }));
}

std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& f) {
    double sum = 0;
    for (double v : f) {
        require(v > 0 && std::isfinite(v), "split fractions must be positive");
        sum += v;
    }
    require(std::abs(sum - 1.0) < 1e-6, "split fractions must sum to 1");
    std::array<std::size_t, 3> out{};
    std::array<double, 3> rem{};
    std::size_t given = 0;
    for (int i = 0; i < 3; ++i) {
        const double q = static_cast<double>(n) * f[i] / sum;
        out[i] = static_cast<std::size_t>(std::floor(q + 1e-9));
        rem[i] = q - static_cast<double>(out[i]);
        given += out[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (std::abs(rem[a] - rem[b]) > 1e-9)
            return rem[a] > rem[b];
        return a > b;
    });
    for (std::size_t k = 0; given < n; ++k, ++given)
        ++out[order[k % 3]];
    return out;
}

std::vector<int> grid_origins(int start, int length, int tile, int stride) {
    std::vector<int> out;
    for (int x = start; x + tile <= start + length; x += stride)
        out.push_back(x);
    return out;
}

namespace {

struct GridTile {
    int col, row;
    PixelPoint origin;
};

void assign_random(std::vector<GridTile>& tiles, std::vector<Split>& splits, const SplitCriterion& c) {
    const auto counts = apportion(tiles.size(), c.fractions);
    std::vector<std::size_t> perm(tiles.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(c.seed);
    for (std::size_t i = perm.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(perm[i - 1], perm[j]);
    }
    splits.assign(tiles.size(), Split::train);
    std::size_t k = 0;
    for (int s = 0; s < 3; ++s)
        for (std::size_t n = 0; n < counts[s]; ++n)
            splits[perm[k++]] = static_cast<Split>(s);
}

// Whole columns (or rows) per split, ordered train | val | test along the axis.
// With overlapping strides, the lines between two bands are skipped so footprints stay disjoint.
void assign_bands(std::vector<GridTile>& tiles, std::vector<Split>& splits, const SplitCriterion& c,
                  const std::vector<int>& line_origins, int tile_size, int stride, std::vector<std::string>& warnings) {
    const std::size_t lines = line_origins.size();
    const std::size_t gap = static_cast<std::size_t>((tile_size + stride - 1) / stride - 1);
    const std::string unit = c.axis == Axis::x ? "columns" : "rows";
    if (lines < 3 + 2 * gap)
        fail(ErrorKind::invalid_argument, "spatial bands need at least " + std::to_string(3 + 2 * gap) + " tile " + unit +
                                              ", the area has " + std::to_string(lines));
    auto counts = apportion(lines - 2 * gap, c.fractions);
    for (int s = 0; s < 3; ++s)
        while (counts[s] == 0) {
            const auto big = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
            --counts[big];
            ++counts[s];
        }
    std::vector<int> line_split(lines, -1);
    std::size_t k = 0;
    for (int s = 0; s < 3; ++s) {
        if (s > 0)
            k += gap;
        for (std::size_t n = 0; n < counts[s]; ++n)
            line_split[k++] = s;
    }
    if (gap > 0)
        warnings.push_back(std::to_string(2 * gap) + " tile " + unit + " between bands were skipped to keep splits disjoint");
    std::vector<GridTile> kept;
    splits.clear();
    for (const auto& t : tiles) {
        const int s = line_split[c.axis == Axis::x ? t.col : t.row];
        if (s >= 0) {
            kept.push_back(t);
            splits.push_back(static_cast<Split>(s));
        }
    }
    tiles = std::move(kept);
}

std::string tile_name(PixelPoint o) { return std::to_string(o.x) + "_" + std::to_string(o.y) + ".png"; }

json criterion_json(const SplitCriterion& c) {
    return json{{"kind", c.kind == SplitKind::random ? "random" : "spatial-bands"},
                {"seed", c.seed},
                {"axis", c.axis == Axis::x ? "x" : "y"},
                {"fractions", c.fractions}};
}

SplitCriterion criterion_from(const json& j) {
    SplitCriterion c;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "random")
        c.kind = SplitKind::random;
    else if (kind == "spatial-bands")
        c.kind = SplitKind::spatial_bands;
    else
        fail(ErrorKind::invalid_argument, "unknown split criterion '" + kind + "'");
    c.seed = j.value("seed", std::uint64_t{42});
    c.axis = j.value("axis", std::string("x")) == "y" ? Axis::y : Axis::x;
    c.fractions = j.at("fractions").get<std::array<double, 3>>();
    return c;
}

} // namespace

TileDataset export_dataset(const OrthoMap& map, std::span<const Region> regions, const ClassCatalog& catalog,
                           const PixelRect& area, const SplitCriterion& criterion, int tile_size, int stride,
                           const fs::path& out_dir, const Progress& progress) {
    require(tile_size > 0, "tile size must be positive");
    require(stride > 0 && stride <= tile_size, "stride must be within (0, tile_size]");
    require(PixelRect{0, 0, map.width(), map.height()}.contains(area) && !area.empty(), "working area outside the map");
    if (area.w < tile_size || area.h < tile_size)
        fail(ErrorKind::invalid_argument, "working area " + std::to_string(area.w) + "x" + std::to_string(area.h) +
                                              " is smaller than one " + std::to_string(tile_size) + " px tile");
    (void)apportion(1, criterion.fractions);
    for (const auto& r : regions)
        if (r.class_index >= catalog.size())
            fail(ErrorKind::invalid_argument, "region " + std::to_string(r.id) + " has class index " +
                                                  std::to_string(r.class_index) + " outside the catalog");

    TileDataset ds;
    ds.root = out_dir;
    ds.tile_size = tile_size;
    ds.stride = stride;
    ds.pixel_size_mm = map.pixel_size_mm();
    ds.catalog = catalog;
    ds.criterion = criterion;
    ds.area = area;
    ds.source_map = map.id();

    const auto xs = grid_origins(area.x, area.w, tile_size, stride);
    const auto ys = grid_origins(area.y, area.h, tile_size, stride);
    std::vector<GridTile> grid;
    for (std::size_t r = 0; r < ys.size(); ++r)
        for (std::size_t c = 0; c < xs.size(); ++c)
            grid.push_back({static_cast<int>(c), static_cast<int>(r), {xs[c], ys[r]}});
    std::vector<Split> splits;
    if (criterion.kind == SplitKind::random)
        assign_random(grid, splits, criterion);
    else
        assign_bands(grid, splits, criterion, criterion.axis == Axis::x ? xs : ys, tile_size, stride, ds.warnings);

    for (auto s : {Split::train, Split::val, Split::test}) {
        fs::create_directories(out_dir / "images" / to_string(s));
        fs::create_directories(out_dir / "labels" / to_string(s));
    }
    std::size_t annotated = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        progress.check();
        const PixelPoint o = grid[i].origin;
        const std::string split = to_string(splits[i]);
        TileEntry e;
        e.image = "images/" + split + "/" + tile_name(o);
        e.label = "labels/" + split + "/" + tile_name(o);
        e.split = splits[i];
        e.origin = o;
        e.source = map.id();
        png::write_rgb(out_dir / e.image, map.read_window(o, tile_size, tile_size).pixels);
        const LabelRaster labels = render_labels(regions, {o.x, o.y, tile_size, tile_size});
        for (auto v : labels.labels)
            annotated += v != 0;
        png::write_rgb(out_dir / e.label, colorize(labels, catalog));
        ds.tiles.push_back(std::move(e));
        progress(static_cast<double>(i + 1) / static_cast<double>(grid.size()));
    }
    if (annotated == 0)
        ds.warnings.push_back("the working area contains no annotated pixels");
    write_manifest(ds);
    return ds;
}

void write_manifest(const TileDataset& ds) {
    json tiles = json::array();
    for (const auto& t : ds.tiles)
        tiles.push_back(json{{"image", t.image},
                             {"label", t.label},
                             {"split", to_string(t.split)},
                             {"origin", json::array({t.origin.x, t.origin.y})},
                             {"source", t.source}});
    const json j{{"format", "orthoseg-dataset"},
                 {"version", 1},
                 {"tile_size", ds.tile_size},
                 {"stride", ds.stride},
                 {"pixel_size_mm", ds.pixel_size_mm},
                 {"source_map", ds.source_map},
                 {"area", json::array({ds.area.x, ds.area.y, ds.area.w, ds.area.h})},
                 {"criterion", criterion_json(ds.criterion)},
                 {"catalog", jsonutil::catalog_to_json(ds.catalog)},
                 {"tiles", tiles},
                 {"warnings", ds.warnings}};
    jsonutil::write_atomic(ds.root / "dataset.json", j.dump(2) + "\n");
}

TileDataset load_dataset(const fs::path& dir) {
    const json j = jsonutil::read_file(dir / "dataset.json");
    TileDataset ds;
    ds.root = dir;
    try {
        if (j.at("format") != "orthoseg-dataset")
            fail(ErrorKind::invalid_argument, "'" + (dir / "dataset.json").string() + "' is not a dataset manifest");
        if (j.at("version").get<int>() > 1)
            fail(ErrorKind::invalid_argument, "dataset manifest version is newer than supported");
        ds.tile_size = j.at("tile_size").get<int>();
        ds.stride = j.at("stride").get<int>();
        ds.pixel_size_mm = j.at("pixel_size_mm").get<double>();
        ds.source_map = j.value("source_map", std::string());
        const auto a = j.at("area").get<std::array<int, 4>>();
        ds.area = {a[0], a[1], a[2], a[3]};
        ds.criterion = criterion_from(j.at("criterion"));
        ds.catalog = jsonutil::catalog_from_json(j.at("catalog"), "/catalog");
        for (const auto& t : j.at("tiles")) {
            const auto o = t.at("origin").get<std::array<int, 2>>();
            ds.tiles.push_back({t.at("image").get<std::string>(), t.at("label").get<std::string>(),
                                split_from_string(t.at("split").get<std::string>()), {o[0], o[1]},
                                t.value("source", std::string())});
        }
        ds.warnings = j.value("warnings", std::vector<std::string>{});
    } catch (const json::exception& e) {
        fail(ErrorKind::invalid_argument, "malformed dataset manifest: " + std::string(e.what()));
    }
    return ds;
}

ImageRgb resize_bilinear(const ImageRgb& img, int w, int h) {
    require(w > 0 && h > 0 && !img.empty(), "resize needs non-empty images");
    ImageRgb out(w, h);
    const double sx = static_cast<double>(img.width()) / w, sy = static_cast<double>(img.height()) / h;
    for (int y = 0; y < h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(img.height() - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, img.height() - 1);
        const double ty = fy - y0;
        for (int x = 0; x < w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(img.width() - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, img.width() - 1);
            const double tx = fx - x0;
            const Rgb8 a = img.at(x0, y0), b = img.at(x1, y0), c = img.at(x0, y1), d = img.at(x1, y1);
            auto mix = [&](std::uint8_t pa, std::uint8_t pb, std::uint8_t pc, std::uint8_t pd) {
                const double top = pa + (pb - pa) * tx, bottom = pc + (pd - pc) * tx;
                return static_cast<std::uint8_t>(std::lround(top + (bottom - top) * ty));
            };
            out.set(x, y, {mix(a.r, b.r, c.r, d.r), mix(a.g, b.g, c.g, d.g), mix(a.b, b.b, c.b, d.b)});
        }
    }
    return out;
}

ImageRgb resize_nearest(const ImageRgb& img, int w, int h) {
    require(w > 0 && h > 0 && !img.empty(), "resize needs non-empty images");
    ImageRgb out(w, h);
    for (int y = 0; y < h; ++y) {
        const int sy = std::min(img.height() - 1, static_cast<int>(std::floor((y + 0.5) * img.height() / h)));
        for (int x = 0; x < w; ++x) {
            const int sx = std::min(img.width() - 1, static_cast<int>(std::floor((x + 0.5) * img.width() / w)));
            out.set(x, y, img.at(sx, sy));
        }
    }
    return out;
}

namespace {

ImageRgb fit_tile(const ImageRgb& img, int size) {
    if (img.width() == size && img.height() == size)
        return img;
    ImageRgb out(size, size);
    const int w = std::min(size, img.width()), h = std::min(size, img.height());
    for (int y = 0; y < h; ++y)
        std::copy(img.row(y), img.row(y) + static_cast<std::size_t>(w) * 3, out.row(y));
    return out;
}

} // namespace

TileDataset merge_datasets(const TileDataset& a, const TileDataset& b, double target, const fs::path& out_dir) {
    require(target > 0 && std::isfinite(target), "target pixel size must be positive");
    const auto& ea = a.catalog.entries();
    const auto& eb = b.catalog.entries();
    for (std::size_t i = 0; i < std::max(ea.size(), eb.size()); ++i) {
        if (i >= ea.size() || i >= eb.size() || !(ea[i] == eb[i])) {
            const std::string left = i < ea.size() ? "'" + ea[i].name + "' " + format_rgb(ea[i].color) : "(none)";
            const std::string right = i < eb.size() ? "'" + eb[i].name + "' " + format_rgb(eb[i].color) : "(none)";
            fail(ErrorKind::invalid_argument, "catalog mismatch at class " + std::to_string(i) + ": " + left + " vs " + right);
        }
    }
    TileDataset out;
    out.root = out_dir;
    out.tile_size = a.tile_size;
    out.stride = a.stride;
    out.pixel_size_mm = target;
    out.catalog = a.catalog;
    out.criterion = a.criterion;
    out.area = a.area;
    out.source_map = a.source_map + "+" + b.source_map;
    for (auto s : {Split::train, Split::val, Split::test}) {
        fs::create_directories(out_dir / "images" / to_string(s));
        fs::create_directories(out_dir / "labels" / to_string(s));
    }
    int k = 0;
    for (const TileDataset* src : {&a, &b}) {
        const double scale = src->pixel_size_mm / target;
        for (const auto& t : src->tiles) {
            TileEntry e = t;
            const std::string suffix = std::to_string(t.origin.x) + "_" + std::to_string(t.origin.y) + "_" + std::to_string(k) + ".png";
            e.image = "images/" + to_string(t.split) + "/" + suffix;
            e.label = "labels/" + to_string(t.split) + "/" + suffix;
            e.source = (t.source.empty() ? src->source_map : t.source) + "#" + std::to_string(k);
            if (scale == 1.0 && src->tile_size == out.tile_size) {
                fs::copy_file(src->root / t.image, out_dir / e.image, fs::copy_options::overwrite_existing);
                fs::copy_file(src->root / t.label, out_dir / e.label, fs::copy_options::overwrite_existing);
            } else {
                const ImageRgb img = png::read_rgb(src->root / t.image);
                const ImageRgb lab = png::read_rgb(src->root / t.label);
                const int w = std::max(1, static_cast<int>(std::lround(img.width() * scale)));
                const int h = std::max(1, static_cast<int>(std::lround(img.height() * scale)));
                png::write_rgb(out_dir / e.image, fit_tile(resize_bilinear(img, w, h), out.tile_size));
                png::write_rgb(out_dir / e.label, fit_tile(resize_nearest(lab, w, h), out.tile_size));
            }
            out.tiles.push_back(std::move(e));
        }
        ++k;
    }
    write_manifest(out);
    return out;
}

} // namespace orthoseg
