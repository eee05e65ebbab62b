#include "orthoseg/raster.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "orthoseg/png_io.hpp"

namespace orthoseg {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int cache_format_version = 1;
constexpr std::size_t tile_cache_capacity = 96;

std::uint32_t pack(Rgb8 c) { return (std::uint32_t{c.r} << 16) | (std::uint32_t{c.g} << 8) | c.b; }

int ceil_shift(int v, int level) { return static_cast<int>((static_cast<long long>(v) + (1LL << level) - 1) >> level); }

json cache_stamp(const fs::path& source, int width, int height, int levels) {
    const auto mtime = fs::last_write_time(source).time_since_epoch().count();
    return {{"version", cache_format_version},
            {"source_size", fs::file_size(source)},
            {"source_mtime", static_cast<long long>(mtime)},
            {"width", width},
            {"height", height},
            {"levels", levels},
            {"tile_size", pyramid_tile_size}};
}

void build_level0(png::RowReader& reader, const fs::path& dir) {
    const int w = reader.width(), h = reader.height();
    const int tiles_x = ceil_shift(w, 8);
    fs::create_directories(dir);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    for (int ty = 0; ty * pyramid_tile_size < h; ++ty) {
        const int band_h = std::min(pyramid_tile_size, h - ty * pyramid_tile_size);
        ImageRgb band(w, band_h);
        for (int y = 0; y < band_h; ++y)
            reader.read_row({band.row(y), static_cast<std::size_t>(w) * 3});
        for (int tx = 0; tx < tiles_x; ++tx) {
            const int tw = std::min(pyramid_tile_size, w - tx * pyramid_tile_size);
            png::write_rgb(dir / (std::to_string(tx) + "_" + std::to_string(ty) + ".png"),
                           band.crop({tx * pyramid_tile_size, 0, tw, band_h}));
        }
    }
}

// Level L+1 from level L with a 2x2 box filter; edge pixels average whatever exists.
void build_next_level(const fs::path& src_dir, int src_w, int src_h, const fs::path& dst_dir) {
    const int dst_w = ceil_shift(src_w, 1), dst_h = ceil_shift(src_h, 1);
    const int src_tiles_x = ceil_shift(src_w, 8), src_tiles_y = ceil_shift(src_h, 8);
    fs::create_directories(dst_dir);
    for (int ty = 0; ty * pyramid_tile_size < dst_h; ++ty) {
        for (int tx = 0; tx * pyramid_tile_size < dst_w; ++tx) {
            const int tw = std::min(pyramid_tile_size, dst_w - tx * pyramid_tile_size);
            const int th = std::min(pyramid_tile_size, dst_h - ty * pyramid_tile_size);
            ImageRgb quad[2][2];
            for (int j = 0; j < 2; ++j)
                for (int i = 0; i < 2; ++i) {
                    const int sx = 2 * tx + i, sy = 2 * ty + j;
                    if (sx < src_tiles_x && sy < src_tiles_y)
                        quad[j][i] = png::read_rgb(src_dir / (std::to_string(sx) + "_" + std::to_string(sy) + ".png"));
                }
            ImageRgb out(tw, th);
            for (int y = 0; y < th; ++y) {
                for (int x = 0; x < tw; ++x) {
                    int sum[3] = {0, 0, 0};
                    int n = 0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const int lx = 2 * x + dx, ly = 2 * y + dy; // within the 512x512 quad
                            const ImageRgb& t = quad[ly / pyramid_tile_size][lx / pyramid_tile_size];
                            const int ix = lx % pyramid_tile_size, iy = ly % pyramid_tile_size;
                            if (t.empty() || ix >= t.width() || iy >= t.height())
                                continue;
                            const Rgb8 c = t.at(ix, iy);
                            sum[0] += c.r;
                            sum[1] += c.g;
                            sum[2] += c.b;
                            ++n;
                        }
                    out.set(x, y,
                            {static_cast<std::uint8_t>((sum[0] + n / 2) / n), static_cast<std::uint8_t>((sum[1] + n / 2) / n),
                             static_cast<std::uint8_t>((sum[2] + n / 2) / n)});
                }
            }
            png::write_rgb(dst_dir / (std::to_string(tx) + "_" + std::to_string(ty) + ".png"), out);
        }
    }
}

} // namespace

// --- ClassCatalog -----------------------------------------------------------

ClassCatalog::ClassCatalog() { entries_.push_back({"unlabeled", {0, 0, 0}}); }

std::uint16_t ClassCatalog::add(std::string name, Rgb8 color) {
    require(!name.empty(), "class name must not be empty");
    require(!find(name), "duplicate class name '" + name + "'");
    require(!find(color), "duplicate class colour " + format_rgb(color));
    require(entries_.size() < 0xFFFF, "too many classes");
    entries_.push_back({std::move(name), color});
    return static_cast<std::uint16_t>(entries_.size() - 1);
}

std::optional<std::uint16_t> ClassCatalog::find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name)
            return static_cast<std::uint16_t>(i);
    return std::nullopt;
}

std::optional<std::uint16_t> ClassCatalog::find(Rgb8 color) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].color == color)
            return static_cast<std::uint16_t>(i);
    return std::nullopt;
}

std::string format_rgb(Rgb8 c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "(%d,%d,%d)", c.r, c.g, c.b);
    return buf;
}

// --- OrthoMap ---------------------------------------------------------------

int pyramid_level_count(int width, int height) {
    int levels = 1;
    int m = std::max(width, height);
    while (m > pyramid_tile_size) {
        m = (m + 1) / 2;
        ++levels;
    }
    return levels;
}

OrthoMap::OrthoMap(OrthoMapInfo info, fs::path cache_dir) : info_(std::move(info)), cache_dir_(std::move(cache_dir)) {}

std::pair<int, int> OrthoMap::level_size(int level) const {
    require(level >= 0 && level < info_.pyramid_levels, "invalid pyramid level " + std::to_string(level));
    return {ceil_shift(info_.width, level), ceil_shift(info_.height, level)};
}

std::pair<int, int> OrthoMap::level_tiles(int level) const {
    auto [w, h] = level_size(level);
    return {ceil_shift(w, 8), ceil_shift(h, 8)};
}

fs::path OrthoMap::tile_path(int level, int tx, int ty) const {
    return cache_dir_ / ("L" + std::to_string(level)) / (std::to_string(tx) + "_" + std::to_string(ty) + ".png");
}

std::shared_ptr<const ImageRgb> OrthoMap::tile(int level, int tx, int ty) const {
    const std::uint64_t key = (std::uint64_t(level) << 48) | (std::uint64_t(ty) << 24) | std::uint64_t(tx);
    {
        std::lock_guard lock(cache_->mutex);
        if (auto it = cache_->index.find(key); it != cache_->index.end()) {
            cache_->lru.splice(cache_->lru.begin(), cache_->lru, it->second);
            return it->second->second;
        }
    }
    auto img = std::make_shared<const ImageRgb>(png::read_rgb(tile_path(level, tx, ty)));
    std::lock_guard lock(cache_->mutex);
    if (auto it = cache_->index.find(key); it != cache_->index.end())
        return it->second->second;
    cache_->lru.emplace_front(key, img);
    cache_->index[key] = cache_->lru.begin();
    if (cache_->lru.size() > tile_cache_capacity) {
        cache_->index.erase(cache_->lru.back().first);
        cache_->lru.pop_back();
    }
    return img;
}

RasterWindow OrthoMap::read_window(PixelPoint origin, int w, int h, int level) const {
    if (level < 0 || level >= info_.pyramid_levels)
        fail(ErrorKind::invalid_argument, "invalid pyramid level " + std::to_string(level));
    auto [lw, lh] = level_size(level);
    const PixelRect rect{origin.x, origin.y, w, h};
    if (w <= 0 || h <= 0 || !PixelRect{0, 0, lw, lh}.contains(rect))
        fail(ErrorKind::invalid_argument, "window outside map bounds at level " + std::to_string(level));
    RasterWindow out{origin, level, ImageRgb(w, h)};
    const int tx0 = origin.x / pyramid_tile_size, tx1 = (origin.x + w - 1) / pyramid_tile_size;
    const int ty0 = origin.y / pyramid_tile_size, ty1 = (origin.y + h - 1) / pyramid_tile_size;
    for (int ty = ty0; ty <= ty1; ++ty) {
        for (int tx = tx0; tx <= tx1; ++tx) {
            auto t = tile(level, tx, ty);
            const PixelRect trect{tx * pyramid_tile_size, ty * pyramid_tile_size, t->width(), t->height()};
            const PixelRect part = trect.intersect(rect);
            for (int y = 0; y < part.h; ++y) {
                const std::uint8_t* src = t->row(part.y - trect.y + y) + static_cast<std::size_t>(part.x - trect.x) * 3;
                std::uint8_t* dst = out.pixels.row(part.y - origin.y + y) + static_cast<std::size_t>(part.x - origin.x) * 3;
                std::copy(src, src + static_cast<std::size_t>(part.w) * 3, dst);
            }
        }
    }
    return out;
}

OrthoMap open_orthomap(const fs::path& path, double pixel_size_mm, const OpenOptions& options) {
    if (!(pixel_size_mm > 0))
        fail(ErrorKind::invalid_argument, "pixel size must be positive");
    if (!fs::exists(path))
        fail(ErrorKind::not_found, "orthoimage '" + path.string() + "' does not exist");
    if (!png::is_png_file(path))
        fail(ErrorKind::invalid_argument, "'" + path.string() + "' is not a decodable PNG orthoimage");

    png::RowReader reader(path);
    const int w = reader.width(), h = reader.height();
    if (w < 1 || h < 1 || w > max_map_dimension || h > max_map_dimension)
        fail(ErrorKind::invalid_argument, "orthoimage dimensions " + std::to_string(w) + "x" + std::to_string(h) +
                                              " exceed the supported range");
    const int levels = pyramid_level_count(w, h);

    fs::path cache_dir = path;
    cache_dir += ".pyr";
    const json stamp = cache_stamp(path, w, h, levels);
    bool fresh = false;
    if (!options.rebuild_pyramid) {
        std::ifstream in(cache_dir / "pyramid.json");
        if (in) {
            json existing = json::parse(in, nullptr, false);
            fresh = !existing.is_discarded() && existing == stamp;
        }
    }
    if (!fresh) {
        std::error_code ec;
        fs::remove_all(cache_dir, ec);
        build_level0(reader, cache_dir / "L0");
        for (int l = 1; l < levels; ++l)
            build_next_level(cache_dir / ("L" + std::to_string(l - 1)), ceil_shift(w, l - 1), ceil_shift(h, l - 1),
                             cache_dir / ("L" + std::to_string(l)));
        std::ofstream out(cache_dir / "pyramid.json");
        out << stamp.dump(2) << "\n";
        if (!out)
            fail(ErrorKind::io, "cannot write pyramid manifest in '" + cache_dir.string() + "'");
    }

    OrthoMapInfo info;
    info.id = options.id.empty() ? path.stem().string() : options.id;
    info.width = w;
    info.height = h;
    info.pixel_size_mm = pixel_size_mm;
    info.acquisition_date = options.acquisition_date;
    info.source_path = path;
    info.pyramid_levels = levels;
    return OrthoMap(std::move(info), cache_dir);
}

// --- label maps ---------------------------------------------------------------

LabelImport import_labelmap(const fs::path& path, const ClassCatalog& catalog, const PixelRect& window, bool strict) {
    if (!png::is_png_file(path))
        fail(ErrorKind::invalid_argument, "label map '" + path.string() + "' is not a PNG (lossy formats are rejected)");
    const ImageRgb img = png::read_rgb(path);
    if (img.width() != window.w || img.height() != window.h)
        fail(ErrorKind::invalid_argument, "label map is " + std::to_string(img.width()) + "x" +
                                              std::to_string(img.height()) + " but the window is " +
                                              std::to_string(window.w) + "x" + std::to_string(window.h));
    std::unordered_map<std::uint32_t, std::uint16_t> lookup;
    for (std::size_t i = 0; i < catalog.size(); ++i)
        lookup.emplace(pack(catalog[i].color), static_cast<std::uint16_t>(i));

    LabelImport out{LabelRaster({window.x, window.y}, window.w, window.h), {}};
    std::map<std::uint32_t, std::size_t> unknown;
    const auto bytes = img.bytes();
    for (std::size_t i = 0, n = out.raster.labels.size(); i < n; ++i) {
        const std::uint32_t key = (std::uint32_t{bytes[3 * i]} << 16) | (std::uint32_t{bytes[3 * i + 1]} << 8) | bytes[3 * i + 2];
        if (auto it = lookup.find(key); it != lookup.end())
            out.raster.labels[i] = it->second;
        else
            ++unknown[key];
    }
    auto unpack = [](std::uint32_t k) {
        return Rgb8{static_cast<std::uint8_t>(k >> 16), static_cast<std::uint8_t>(k >> 8), static_cast<std::uint8_t>(k)};
    };
    if (strict && !unknown.empty()) {
        std::string msg = "label map contains colours not in the catalog:";
        for (auto [k, n] : unknown)
            msg += " " + format_rgb(unpack(k)) + "x" + std::to_string(n);
        fail(ErrorKind::invalid_argument, msg);
    }
    for (auto [k, n] : unknown)
        out.unmatched.emplace_back(unpack(k), n);
    return out;
}

ImageRgb colorize(const LabelRaster& raster, const ClassCatalog& catalog) {
    ImageRgb img(raster.width, raster.height);
    auto bytes = img.bytes();
    for (std::size_t i = 0; i < raster.labels.size(); ++i) {
        const auto idx = raster.labels[i];
        if (idx >= catalog.size())
            fail(ErrorKind::invalid_argument, "label index " + std::to_string(idx) + " outside the catalog");
        const Rgb8 c = catalog[idx].color;
        bytes[3 * i] = c.r;
        bytes[3 * i + 1] = c.g;
        bytes[3 * i + 2] = c.b;
    }
    return img;
}

void export_labelmap(const LabelRaster& raster, const ClassCatalog& catalog, const fs::path& path) {
    png::write_rgb(path, colorize(raster, catalog));
}

double mask_iou(const Mask& a, const Mask& b) {
    require(a.width() == b.width() && a.height() == b.height(), "mask size mismatch");
    std::size_t inter = 0, uni = 0;
    auto x = a.bytes(), y = b.bytes();
    for (std::size_t i = 0; i < x.size(); ++i) {
        inter += x[i] && y[i];
        uni += x[i] || y[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace orthoseg
