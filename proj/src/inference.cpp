#include "orthoseg/inference.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <future>
#include <numbers>
#include <thread>

#include "orthoseg/png_io.hpp"

namespace orthoseg {

std::vector<float> window_weights_1d(int size, double floor) {
    require(size >= 1, "window size must be positive");
    require(floor > 0, "weight floor must be positive");
    std::vector<float> h(size);
    for (int i = 0; i < size; ++i)
        h[i] = static_cast<float>(std::max(floor, 0.5 - 0.5 * std::cos(2 * std::numbers::pi * (i + 0.5) / size)));
    return h;
}

std::vector<float> window_weight(int size, double floor) {
    const auto h = window_weights_1d(size, floor);
    std::vector<float> w(static_cast<std::size_t>(size) * size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            w[static_cast<std::size_t>(y) * size + x] = h[x] * h[y];
    return w;
}

std::vector<int> tile_origins(int start, int length, int tile, int stride, int offset) {
    require(tile > 0 && length >= tile, "tile larger than the area");
    require(stride > 0 && stride <= tile, "stride must be within (0, tile]");
    int g = start + ((offset % stride) + stride) % stride;
    while (g - stride > start - tile)
        g -= stride;
    std::vector<int> out;
    const int last = start + length - tile;
    for (; g < start + length; g += stride) {
        const int c = std::clamp(g, start, last);
        if (out.empty() || out.back() != c)
            out.push_back(c);
    }
    return out;
}

namespace {

struct PendingTile {
    PixelPoint origin;
    std::future<std::vector<float>> probs;
};

} // namespace

void run_tiled(const OrthoMap& map, const PixelClassifier& model, const PixelRect& area, const InferenceConfig& cfg,
               const LabelRowSink& sink, const Progress& progress) {
    require(!area.empty() && PixelRect{0, 0, map.width(), map.height()}.contains(area), "inference area outside the map");
    require(cfg.tile_size > 0 && cfg.stride > 0 && cfg.stride <= cfg.tile_size, "stride must be within (0, tile_size]");
    require(cfg.weight_floor > 0, "weight floor must be positive");
    const std::size_t K = model.class_count();
    require(K >= 2, "model has no classes");
    const std::size_t C = K - 1; // accumulated classes 1..K-1
    const std::size_t slot = C + 1;

    const int tw = std::min(cfg.tile_size, area.w), th = std::min(cfg.tile_size, area.h);
    const int sx = std::min(cfg.stride, tw), sy = std::min(cfg.stride, th);
    const auto xs = tile_origins(area.x, area.w, tw, sx, cfg.grid_offset.x);
    const auto ys = tile_origins(area.y, area.h, th, sy, cfg.grid_offset.y);
    const auto hx = window_weights_1d(tw, cfg.weight_floor);
    const auto hy = window_weights_1d(th, cfg.weight_floor);
    const std::size_t workers =
        cfg.workers > 0 ? static_cast<std::size_t>(cfg.workers) : std::max(1u, std::thread::hardware_concurrency());
    const std::size_t total_tiles = xs.size() * ys.size();

    std::deque<std::vector<float>> band;
    int band_y0 = area.y; // map row of band.front()
    std::vector<std::uint16_t> labels(area.w);

    auto flush_until = [&](int y_end) {
        while (band_y0 < y_end) {
            const std::vector<float>& row = band.front();
            for (int x = 0; x < area.w; ++x) {
                const float* a = &row[static_cast<std::size_t>(x) * slot];
                if (!(a[C] > 0))
                    fail(ErrorKind::internal, "coverage gap at pixel (" + std::to_string(area.x + x) + ", " +
                                                  std::to_string(band_y0) + ")");
                std::size_t best = 0;
                for (std::size_t k = 1; k < C; ++k)
                    if (a[k] > a[best])
                        best = k;
                labels[x] = static_cast<std::uint16_t>(best + 1);
            }
            sink(band_y0 - area.y, labels);
            band.pop_front();
            ++band_y0;
        }
    };

    std::size_t completed = 0;
    for (int ty : ys) {
        flush_until(ty);
        while (band_y0 + static_cast<int>(band.size()) < ty + th)
            band.emplace_back(static_cast<std::size_t>(area.w) * slot, 0.0f);
        for (std::size_t chunk = 0; chunk < xs.size(); chunk += workers) {
            progress.check();
            std::vector<PendingTile> pending;
            for (std::size_t i = chunk; i < std::min(xs.size(), chunk + workers); ++i) {
                const PixelPoint o{xs[i], ty};
                pending.push_back({o, std::async(workers > 1 ? std::launch::async : std::launch::deferred, [&, o] {
                                       const RasterWindow win = map.read_window(o, tw, th);
                                       auto p = model.predict(win.pixels);
                                       if (p.size() != static_cast<std::size_t>(tw) * th * K)
                                           fail(ErrorKind::contract_violation, "model returned a probability volume of the wrong size");
                                       return p;
                                   })});
            }
            for (auto& t : pending) {
                std::vector<float> p;
                try {
                    p = t.probs.get();
                } catch (const Error& e) {
                    if (e.kind() == ErrorKind::cancelled)
                        throw;
                    fail(e.kind(), std::string(e.what()) + " (after " + std::to_string(completed) + " of " +
                                       std::to_string(total_tiles) + " tiles)");
                }
                for (int y = 0; y < th; ++y) {
                    float* row = band[t.origin.y + y - band_y0].data();
                    for (int x = 0; x < tw; ++x) {
                        const float w = hx[x] * hy[y];
                        const float* src = &p[(static_cast<std::size_t>(y) * tw + x) * K];
                        float* dst = &row[static_cast<std::size_t>(t.origin.x - area.x + x) * slot];
                        for (std::size_t k = 0; k < C; ++k)
                            dst[k] += w * src[k + 1];
                        dst[C] += w;
                    }
                }
                ++completed;
                progress(static_cast<double>(completed) / static_cast<double>(total_tiles));
            }
        }
    }
    flush_until(area.bottom());
}

LabelRaster preview(const OrthoMap& map, const PixelClassifier& model, const PixelRect& area, const InferenceConfig& cfg,
                    const Progress& progress) {
    const PixelRect clipped = area.intersect({0, 0, map.width(), map.height()});
    if (clipped.empty())
        fail(ErrorKind::invalid_argument, "preview area does not intersect the map");
    if (std::int64_t{clipped.w} * clipped.h > max_in_memory_pixels)
        fail(ErrorKind::invalid_argument, "area too large for an in-memory result; stream the output to a file instead");
    LabelRaster out({clipped.x, clipped.y}, clipped.w, clipped.h);
    run_tiled(map, model, clipped, cfg,
              [&](int y, std::span<const std::uint16_t> row) {
                  std::copy(row.begin(), row.end(), out.labels.begin() + static_cast<std::ptrdiff_t>(y) * clipped.w);
              },
              progress);
    return out;
}

std::vector<Region> regions_from_labels(const LabelRaster& labels, std::size_t classes, int min_region_px) {
    std::vector<Region> out;
    Mask mask(labels.width, labels.height);
    for (std::size_t k = 1; k < classes; ++k) {
        bool any = false;
        auto bytes = mask.bytes();
        for (std::size_t i = 0; i < labels.labels.size(); ++i) {
            bytes[i] = labels.labels[i] == k;
            any |= bytes[i] != 0;
        }
        if (!any)
            continue;
        VectorizeOptions opt;
        opt.min_area_px = min_region_px;
        opt.class_index = static_cast<std::uint16_t>(k);
        opt.provenance = Provenance::automatic;
        auto rs = vectorize(mask, labels.origin, opt);
        out.insert(out.end(), std::make_move_iterator(rs.begin()), std::make_move_iterator(rs.end()));
    }
    return out;
}

InferenceResult run_inference(const OrthoMap& map, const PixelClassifier& model, const ClassCatalog& catalog,
                              const PixelRect& area, const InferenceConfig& cfg, const Progress& progress) {
    if (model.class_count() != catalog.size())
        fail(ErrorKind::invalid_argument, "model has " + std::to_string(model.class_count()) +
                                              " classes but the catalog has " + std::to_string(catalog.size()));
    require(!area.empty() && PixelRect{0, 0, map.width(), map.height()}.contains(area), "inference area outside the map");
    InferenceResult r;
    r.raster = preview(map, model, area, cfg, progress);
    r.regions = regions_from_labels(r.raster, catalog.size(), cfg.min_region_px);
    return r;
}

void infer_to_png(const OrthoMap& map, const PixelClassifier& model, const ClassCatalog& catalog, const PixelRect& area,
                  const InferenceConfig& cfg, const std::filesystem::path& out, const Progress& progress) {
    if (model.class_count() != catalog.size())
        fail(ErrorKind::invalid_argument, "model has " + std::to_string(model.class_count()) +
                                              " classes but the catalog has " + std::to_string(catalog.size()));
    std::filesystem::path tmp = out;
    tmp += ".part";
    try {
        png::RowWriter writer(tmp, area.w, area.h, png::PixelFormat::rgb8);
        std::vector<std::uint8_t> rgb(static_cast<std::size_t>(area.w) * 3);
        run_tiled(map, model, area, cfg,
                  [&](int, std::span<const std::uint16_t> row) {
                      for (std::size_t x = 0; x < row.size(); ++x) {
                          const Rgb8 c = catalog[row[x]].color;
                          rgb[3 * x] = c.r;
                          rgb[3 * x + 1] = c.g;
                          rgb[3 * x + 2] = c.b;
                      }
                      writer.write_row(rgb);
                  },
                  progress);
        writer.finish();
    } catch (...) {
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        throw;
    }
    std::filesystem::rename(tmp, out);
}

} // namespace orthoseg
