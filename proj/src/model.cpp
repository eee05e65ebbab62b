#include "orthoseg/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <numeric>
#include <random>
#include <thread>

#include "base64.hpp"
#include "http_client.hpp"
#include "json_util.hpp"
#include "orthoseg/png_io.hpp"

namespace orthoseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ModelKind k) { return k == ModelKind::builtin_baseline ? "builtin-baseline" : "external"; }

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "builtin-baseline" || s == "builtin")
        return ModelKind::builtin_baseline;
    if (s == "external")
        return ModelKind::external;
    fail(ErrorKind::invalid_argument, "unknown model backend '" + s + "'");
}

// --- features ---------------------------------------------------------------

std::vector<float> baseline_features(const ImageRgb& tile) {
    const int w = tile.width(), h = tile.height();
    const std::size_t stride = static_cast<std::size_t>(w) + 1;
    std::vector<float> out(static_cast<std::size_t>(w) * h * baseline_feature_count);
    std::vector<std::int64_t> s1(stride * (h + 1)), s2(stride * (h + 1));
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            const std::uint8_t* row = tile.row(y);
            std::int64_t r1 = 0, r2 = 0;
            for (int x = 0; x < w; ++x) {
                const std::int64_t v = row[3 * x + c];
                r1 += v;
                r2 += v * v;
                s1[(y + 1) * stride + x + 1] = s1[y * stride + x + 1] + r1;
                s2[(y + 1) * stride + x + 1] = s2[y * stride + x + 1] + r2;
            }
        }
        for (int y = 0; y < h; ++y) {
            const int y0 = std::max(0, y - 2), y1 = std::min(h, y + 3);
            for (int x = 0; x < w; ++x) {
                const int x0 = std::max(0, x - 2), x1 = std::min(w, x + 3);
                auto box = [&](const std::vector<std::int64_t>& s) {
                    return s[y1 * stride + x1] - s[y0 * stride + x1] - s[y1 * stride + x0] + s[y0 * stride + x0];
                };
                const double n = static_cast<double>((x1 - x0) * (y1 - y0));
                const double mean = static_cast<double>(box(s1)) / n;
                const double var = std::max(0.0, static_cast<double>(box(s2)) / n - mean * mean);
                float* f = &out[(static_cast<std::size_t>(y) * w + x) * baseline_feature_count];
                f[c] = tile.row(y)[3 * x + c];
                f[3 + c] = static_cast<float>(mean);
                f[6 + c] = static_cast<float>(std::sqrt(var));
            }
        }
    }
    return out;
}

// --- baseline model ---------------------------------------------------------

BaselineModel::BaselineModel(std::size_t classes)
    : weights(classes * baseline_feature_count, 0.0f), bias(classes, 0.0f), classes_(classes) {
    require(classes >= 2, "a model needs at least one class besides unlabeled");
    mean.fill(0.0f);
    scale.fill(1.0f);
}

void BaselineModel::probabilities(const float* features, double* out) const {
    double z[baseline_feature_count];
    for (int f = 0; f < baseline_feature_count; ++f)
        z[f] = (static_cast<double>(features[f]) - mean[f]) / scale[f];
    out[0] = 0;
    double best = -INFINITY;
    for (std::size_t k = 1; k < classes_; ++k) {
        double v = bias[k];
        for (int f = 0; f < baseline_feature_count; ++f)
            v += static_cast<double>(weights[k * baseline_feature_count + f]) * z[f];
        out[k] = v;
        best = std::max(best, v);
    }
    double sum = 0;
    for (std::size_t k = 1; k < classes_; ++k) {
        out[k] = std::exp(out[k] - best);
        sum += out[k];
    }
    for (std::size_t k = 1; k < classes_; ++k)
        out[k] /= sum;
}

std::vector<float> BaselineModel::predict(const ImageRgb& tile) const {
    const auto feats = baseline_features(tile);
    const std::size_t n = static_cast<std::size_t>(tile.width()) * tile.height();
    std::vector<float> out(n * classes_);
    std::vector<double> p(classes_);
    for (std::size_t i = 0; i < n; ++i) {
        probabilities(&feats[i * baseline_feature_count], p.data());
        for (std::size_t k = 0; k < classes_; ++k)
            out[i * classes_ + k] = static_cast<float>(p[k]);
    }
    return out;
}

namespace {

constexpr char weights_magic[4] = {'O', 'S', 'B', 'M'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

struct ByteReader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    std::uint32_t u32() {
        if (pos + 4 > bytes.size())
            fail(ErrorKind::invalid_argument, "weights file is truncated");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= std::uint32_t{bytes[pos + i]} << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        const std::uint32_t v = u32();
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
};

} // namespace

std::vector<std::uint8_t> BaselineModel::serialize() const {
    std::vector<std::uint8_t> out(weights_magic, weights_magic + 4);
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(classes_));
    put_u32(out, baseline_feature_count);
    for (float v : mean)
        put_f32(out, v);
    for (float v : scale)
        put_f32(out, v);
    for (float v : weights)
        put_f32(out, v);
    for (float v : bias)
        put_f32(out, v);
    return out;
}

BaselineModel BaselineModel::deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), weights_magic, 4) != 0)
        fail(ErrorKind::invalid_argument, "not a baseline weights file");
    ByteReader r{bytes, 4};
    if (r.u32() != 1)
        fail(ErrorKind::invalid_argument, "unsupported weights file version");
    const std::uint32_t classes = r.u32();
    if (r.u32() != baseline_feature_count || classes < 2 || classes > 0xFFFF)
        fail(ErrorKind::invalid_argument, "weights file has an unexpected shape");
    BaselineModel m(classes);
    for (float& v : m.mean)
        v = r.f32();
    for (float& v : m.scale)
        v = r.f32();
    for (float& v : m.weights)
        v = r.f32();
    for (float& v : m.bias)
        v = r.f32();
    if (r.pos != bytes.size())
        fail(ErrorKind::invalid_argument, "weights file has trailing bytes");
    return m;
}

// --- external model ---------------------------------------------------------

ExternalModel::ExternalModel(std::string endpoint, std::string remote_id, std::size_t classes, double timeout_s)
    : endpoint_(std::move(endpoint)), remote_id_(std::move(remote_id)), classes_(classes), timeout_s_(timeout_s) {}

std::vector<float> ExternalModel::predict(const ImageRgb& tile) const {
    const json reply = http::post_json(endpoint_, "/predict",
                                       json{{"model", remote_id_}, {"tile", base64::encode(png::encode_rgb(tile))}},
                                       timeout_s_);
    if (reply.contains("error"))
        fail(ErrorKind::io, "model backend error: " + reply["error"].dump());
    if (!reply.contains("planes") || !reply["planes"].is_array())
        fail(ErrorKind::contract_violation, "model backend reply has no 'planes' array");
    const auto& planes = reply["planes"];
    if (planes.size() != classes_)
        fail(ErrorKind::contract_violation, "model backend returned " + std::to_string(planes.size()) +
                                                " probability planes for " + std::to_string(classes_) + " classes");
    const std::size_t n = static_cast<std::size_t>(tile.width()) * tile.height();
    std::vector<float> out(n * classes_);
    for (std::size_t k = 0; k < classes_; ++k) {
        int w = 0, h = 0;
        const auto px = png::decode_gray8(base64::decode(planes[k].get<std::string>()), w, h);
        if (w != tile.width() || h != tile.height())
            fail(ErrorKind::contract_violation, "probability plane " + std::to_string(k) + " is " + std::to_string(w) +
                                                    "x" + std::to_string(h) + ", expected " + std::to_string(tile.width()) +
                                                    "x" + std::to_string(tile.height()));
        for (std::size_t i = 0; i < n; ++i)
            out[i * classes_ + k] = px[i] / 255.0f;
    }
    for (std::size_t i = 0; i < n; ++i) {
        float* p = &out[i * classes_];
        const float sum = std::accumulate(p, p + classes_, 0.0f);
        if (sum <= 0)
            fail(ErrorKind::contract_violation, "model backend returned zero probability mass at pixel " + std::to_string(i));
        for (std::size_t k = 0; k < classes_; ++k)
            p[k] /= sum;
    }
    return out;
}

// --- training ---------------------------------------------------------------

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct LoadedTile {
    ImageRgb image;
    LabelRaster labels;
};

LoadedTile load_tile(const TileDataset& ds, const TileEntry& t) {
    LoadedTile lt;
    lt.image = png::read_rgb(ds.root / t.image);
    lt.labels = import_labelmap(ds.root / t.label, ds.catalog, {0, 0, lt.image.width(), lt.image.height()}, true).raster;
    return lt;
}

struct Samples {
    std::vector<float> features;
    std::vector<std::uint16_t> labels;

    std::size_t size() const { return labels.size(); }
    void append(const Samples& o) {
        features.insert(features.end(), o.features.begin(), o.features.end());
        labels.insert(labels.end(), o.labels.begin(), o.labels.end());
    }
};

Samples sample_tile(const LoadedTile& tile, std::size_t count, std::mt19937_64& rng) {
    std::vector<std::uint32_t> labeled;
    for (std::size_t i = 0; i < tile.labels.labels.size(); ++i)
        if (tile.labels.labels[i] != 0)
            labeled.push_back(static_cast<std::uint32_t>(i));
    Samples s;
    if (labeled.empty())
        return s;
    const std::size_t take = std::min(count, labeled.size());
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (labeled.size() - i));
        std::swap(labeled[i], labeled[j]);
    }
    labeled.resize(take);
    std::sort(labeled.begin(), labeled.end());
    const auto feats = baseline_features(tile.image);
    for (auto i : labeled) {
        s.features.insert(s.features.end(), feats.begin() + static_cast<std::ptrdiff_t>(i) * baseline_feature_count,
                          feats.begin() + static_cast<std::ptrdiff_t>(i + 1) * baseline_feature_count);
        s.labels.push_back(tile.labels.labels[i]);
    }
    return s;
}

double mean_loss(const BaselineModel& m, const Samples& s, double* accuracy = nullptr) {
    std::vector<double> p(m.class_count());
    double loss = 0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        m.probabilities(&s.features[i * baseline_feature_count], p.data());
        loss -= std::log(std::max(p[s.labels[i]], 1e-300));
        const auto best = static_cast<std::size_t>(std::max_element(p.begin() + 1, p.end()) - p.begin());
        correct += best == s.labels[i];
    }
    if (accuracy)
        *accuracy = s.size() ? static_cast<double>(correct) / s.size() : 0.0;
    return s.size() ? loss / s.size() : 0.0;
}

constexpr std::size_t samples_per_tile = 4096;
constexpr std::size_t standardise_samples_per_tile = 1024;
constexpr std::size_t minibatch = 256;
constexpr double momentum = 0.9;

TrainResult train_builtin(const TileDataset& ds, const Hyperparams& hp, const Progress& progress) {
    const std::size_t K = ds.catalog.size();
    std::vector<const TileEntry*> train_tiles, val_tiles;
    for (const auto& t : ds.tiles) {
        if (t.split == Split::train)
            train_tiles.push_back(&t);
        else if (t.split == Split::val)
            val_tiles.push_back(&t);
    }

    TrainResult result;
    ModelHandle& handle = result.handle;
    handle.kind = ModelKind::builtin_baseline;
    handle.catalog = ds.catalog;
    handle.dataset = fs::absolute(ds.root).lexically_normal().string();
    handle.hyperparams = hp;
    handle.started = utc_now();

    std::mt19937_64 rng(hp.seed);
    // Standardisation statistics from a fixed sample of the train split, kept for the accuracy report.
    Samples reference;
    for (const auto* t : train_tiles) {
        progress.check();
        reference.append(sample_tile(load_tile(ds, *t), standardise_samples_per_tile, rng));
    }
    if (reference.size() == 0)
        fail(ErrorKind::invalid_argument, "the train split has no annotated pixels");
    BaselineModel model(K);
    for (int f = 0; f < baseline_feature_count; ++f) {
        double s = 0, s2 = 0;
        for (std::size_t i = 0; i < reference.size(); ++i) {
            const double v = reference.features[i * baseline_feature_count + f];
            s += v;
            s2 += v * v;
        }
        const double n = static_cast<double>(reference.size());
        const double mu = s / n;
        const double sd = std::sqrt(std::max(0.0, s2 / n - mu * mu));
        model.mean[f] = static_cast<float>(mu);
        model.scale[f] = sd > 1e-6 ? static_cast<float>(sd) : 1.0f;
    }
    Samples val;
    for (const auto* t : val_tiles)
        val.append(sample_tile(load_tile(ds, *t), samples_per_tile, rng));

    std::vector<double> w(K * baseline_feature_count, 0.0), b(K, 0.0), vw(w.size(), 0.0), vb(K, 0.0);
    auto to_model = [&] {
        for (std::size_t i = 0; i < w.size(); ++i)
            model.weights[i] = static_cast<float>(w[i]);
        for (std::size_t k = 0; k < K; ++k)
            model.bias[k] = static_cast<float>(b[k]);
    };
    BaselineModel best = model;
    double best_val = INFINITY;

    std::vector<double> z(K), gw(w.size()), gb(K);
    const std::size_t group = static_cast<std::size_t>(hp.batch_tiles);
    for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
        std::vector<const TileEntry*> order = train_tiles;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
        double epoch_loss = 0;
        std::size_t epoch_n = 0;
        for (std::size_t g = 0; g < order.size(); g += group) {
            Samples batch;
            for (std::size_t t = g; t < std::min(order.size(), g + group); ++t) {
                progress.check();
                batch.append(sample_tile(load_tile(ds, *order[t]), samples_per_tile, rng));
            }
            std::vector<std::size_t> perm(batch.size());
            std::iota(perm.begin(), perm.end(), 0);
            for (std::size_t i = perm.size(); i > 1; --i)
                std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng() % i)]);
            for (std::size_t start = 0; start < perm.size(); start += minibatch) {
                const std::size_t end = std::min(perm.size(), start + minibatch);
                std::fill(gw.begin(), gw.end(), 0.0);
                std::fill(gb.begin(), gb.end(), 0.0);
                for (std::size_t s = start; s < end; ++s) {
                    const std::size_t i = perm[s];
                    double x[baseline_feature_count];
                    for (int f = 0; f < baseline_feature_count; ++f)
                        x[f] = (batch.features[i * baseline_feature_count + f] - model.mean[f]) / model.scale[f];
                    double zmax = -INFINITY;
                    for (std::size_t k = 1; k < K; ++k) {
                        double v = b[k];
                        for (int f = 0; f < baseline_feature_count; ++f)
                            v += w[k * baseline_feature_count + f] * x[f];
                        z[k] = v;
                        zmax = std::max(zmax, v);
                    }
                    double sum = 0;
                    for (std::size_t k = 1; k < K; ++k) {
                        z[k] = std::exp(z[k] - zmax);
                        sum += z[k];
                    }
                    const std::uint16_t y = batch.labels[i];
                    epoch_loss -= std::log(std::max(z[y] / sum, 1e-300));
                    ++epoch_n;
                    for (std::size_t k = 1; k < K; ++k) {
                        const double d = z[k] / sum - (k == y ? 1.0 : 0.0);
                        gb[k] += d;
                        for (int f = 0; f < baseline_feature_count; ++f)
                            gw[k * baseline_feature_count + f] += d * x[f];
                    }
                }
                const double inv = 1.0 / static_cast<double>(end - start);
                for (std::size_t j = 0; j < w.size(); ++j) {
                    vw[j] = momentum * vw[j] - hp.learning_rate * gw[j] * inv;
                    w[j] += vw[j];
                }
                for (std::size_t k = 0; k < K; ++k) {
                    vb[k] = momentum * vb[k] - hp.learning_rate * gb[k] * inv;
                    b[k] += vb[k];
                }
            }
        }
        if (!std::isfinite(epoch_loss))
            fail(ErrorKind::internal, "training diverged at epoch " + std::to_string(epoch) + " (loss is not finite)");
        to_model();
        const double val_loss = val.size() ? mean_loss(model, val) : epoch_loss / std::max<std::size_t>(epoch_n, 1);
        if (!std::isfinite(val_loss))
            fail(ErrorKind::internal, "training diverged at epoch " + std::to_string(epoch) + " (validation loss is not finite)");
        if (val_loss < best_val) {
            best_val = val_loss;
            best = model;
            handle.best_epoch = epoch;
        }
        progress(static_cast<double>(epoch) / hp.epochs);
    }
    handle.best_val_loss = best_val;
    mean_loss(best, reference, &handle.train_accuracy);
    handle.finished = utc_now();
    result.model = std::make_unique<BaselineModel>(std::move(best));
    return result;
}

TrainResult train_external(const TileDataset& ds, const ModelBackend& backend, const Hyperparams& hp,
                           const Progress& progress) {
    TrainResult result;
    ModelHandle& handle = result.handle;
    handle.kind = ModelKind::external;
    handle.catalog = ds.catalog;
    handle.dataset = fs::absolute(ds.root).lexically_normal().string();
    handle.hyperparams = hp;
    handle.endpoint = backend.endpoint;
    handle.started = utc_now();
    json classes = json::array();
    for (const auto& e : ds.catalog.entries())
        classes.push_back(e.name);
    const json reply = http::post_json(backend.endpoint, "/train",
                                       json{{"dataset", handle.dataset},
                                            {"classes", classes},
                                            {"hyperparams", {{"epochs", hp.epochs},
                                                             {"learning_rate", hp.learning_rate},
                                                             {"batch_tiles", hp.batch_tiles},
                                                             {"seed", hp.seed}}}},
                                       backend.timeout_s);
    if (!reply.contains("id") || !reply["id"].is_string())
        fail(ErrorKind::contract_violation, "model backend /train reply has no 'id'");
    handle.remote_id = reply["id"].get<std::string>();
    double last = 0;
    for (;;) {
        progress.check();
        const json st = http::get_json(backend.endpoint, "/train/" + handle.remote_id + "/status", backend.timeout_s);
        const std::string state = st.value("state", std::string());
        const double p = std::clamp(st.value("progress", 0.0), last, 1.0);
        if (p > last)
            progress(last = p);
        if (state == "done")
            break;
        if (state == "failed")
            fail(ErrorKind::io, "model backend training failed: " + st.value("error", std::string("unknown error")));
        if (state != "running" && state != "queued")
            fail(ErrorKind::contract_violation, "model backend reported unknown state '" + state + "'");
        std::this_thread::sleep_for(std::chrono::duration<double>(backend.poll_interval_s));
    }
    handle.finished = utc_now();
    result.model = std::make_unique<ExternalModel>(backend.endpoint, handle.remote_id, ds.catalog.size(), backend.timeout_s);
    return result;
}

} // namespace

TrainResult train(const TileDataset& dataset, const ModelBackend& backend, const Hyperparams& hp, const Progress& progress) {
    require(hp.epochs > 0 && hp.learning_rate > 0 && std::isfinite(hp.learning_rate) && hp.batch_tiles > 0 && hp.seed > 0,
            "hyperparameters must be positive");
    if (dataset.count(Split::train) == 0)
        fail(ErrorKind::invalid_argument, "the dataset has an empty train split");
    if (dataset.count(Split::val) == 0)
        fail(ErrorKind::invalid_argument, "the dataset has an empty val split");
    require(dataset.catalog.size() >= 2, "the dataset catalog has no classes");
    if (backend.kind == ModelKind::external)
        return train_external(dataset, backend, hp, progress);
    return train_builtin(dataset, hp, progress);
}

// --- evaluation -------------------------------------------------------------

void accumulate_confusion(std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred,
                          std::vector<std::vector<std::uint64_t>>& confusion) {
    require(gt.size() == pred.size(), "ground truth and prediction sizes differ");
    const std::size_t K = confusion.size();
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] == 0)
            continue;
        if (gt[i] >= K || pred[i] >= K)
            fail(ErrorKind::invalid_argument, "class index outside the confusion matrix");
        ++confusion[gt[i]][pred[i]];
    }
}

EvalReport report_from_confusion(std::vector<std::vector<std::uint64_t>> confusion) {
    EvalReport r;
    const std::size_t K = confusion.size();
    r.per_class_iou.assign(K, std::nullopt);
    std::uint64_t total = 0, trace = 0;
    double iou_sum = 0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < K; ++k) {
        std::uint64_t row = 0, col = 0;
        for (std::size_t j = 0; j < K; ++j) {
            row += confusion[k][j];
            col += confusion[j][k];
        }
        total += row;
        trace += confusion[k][k];
        const std::uint64_t denom = row + col - confusion[k][k];
        if (k > 0 && denom > 0)
            r.per_class_iou[k] = static_cast<double>(confusion[k][k]) / static_cast<double>(denom);
        if (k > 0 && row > 0) {
            iou_sum += *r.per_class_iou[k];
            ++present;
        }
    }
    r.miou = present ? iou_sum / static_cast<double>(present) : 0.0;
    r.accuracy = total ? static_cast<double>(trace) / static_cast<double>(total) : 0.0;
    r.confusion = std::move(confusion);
    return r;
}

std::vector<std::uint16_t> argmax_labels(std::span<const float> probabilities, std::size_t classes) {
    require(classes >= 2 && probabilities.size() % classes == 0, "probability volume does not match the class count");
    std::vector<std::uint16_t> out(probabilities.size() / classes);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float* p = &probabilities[i * classes];
        std::size_t best = 1;
        for (std::size_t k = 2; k < classes; ++k)
            if (p[k] > p[best])
                best = k;
        out[i] = static_cast<std::uint16_t>(best);
    }
    return out;
}

EvalReport evaluate(const PixelClassifier& model, const TileDataset& ds, const fs::path& prediction_dir,
                    const Progress& progress) {
    const std::size_t K = ds.catalog.size();
    if (model.class_count() != K)
        fail(ErrorKind::invalid_argument, "model has " + std::to_string(model.class_count()) +
                                              " classes but the dataset catalog has " + std::to_string(K));
    const std::size_t n_test = ds.count(Split::test);
    if (n_test == 0)
        fail(ErrorKind::invalid_argument, "the dataset has an empty test split");
    std::vector<std::vector<std::uint64_t>> confusion(K, std::vector<std::uint64_t>(K, 0));
    std::vector<PairedTile> paired;
    std::size_t done = 0;
    for (const auto& t : ds.tiles) {
        if (t.split != Split::test)
            continue;
        progress.check();
        const LoadedTile tile = load_tile(ds, t);
        const auto probs = model.predict(tile.image);
        LabelRaster pred(t.origin, tile.image.width(), tile.image.height());
        pred.labels = argmax_labels(probs, K);
        accumulate_confusion(tile.labels.labels, pred.labels, confusion);
        const fs::path out = prediction_dir / fs::path(t.label).filename();
        fs::create_directories(prediction_dir);
        png::write_rgb(out, colorize(pred, ds.catalog));
        paired.push_back({(ds.root / t.image).string(), (ds.root / t.label).string(), out.string()});
        progress(static_cast<double>(++done) / static_cast<double>(n_test));
    }
    EvalReport r = report_from_confusion(std::move(confusion));
    r.paired_tiles = std::move(paired);
    return r;
}

// --- serialisation ----------------------------------------------------------

json to_json(const EvalReport& r) {
    json iou = json::array();
    for (const auto& v : r.per_class_iou)
        iou.push_back(v ? json(*v) : json(nullptr));
    json paired = json::array();
    for (const auto& p : r.paired_tiles)
        paired.push_back({{"image", p.image}, {"ground_truth", p.ground_truth}, {"prediction", p.prediction}});
    return json{{"confusion", r.confusion}, {"per_class_iou", iou}, {"miou", r.miou}, {"accuracy", r.accuracy}, {"paired_tiles", paired}};
}

EvalReport eval_report_from_json(const json& j) {
    EvalReport r;
    try {
        r.confusion = j.at("confusion").get<std::vector<std::vector<std::uint64_t>>>();
        for (const auto& v : j.at("per_class_iou"))
            r.per_class_iou.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
        r.miou = j.at("miou").get<double>();
        r.accuracy = j.at("accuracy").get<double>();
        for (const auto& p : j.at("paired_tiles"))
            r.paired_tiles.push_back({p.at("image").get<std::string>(), p.at("ground_truth").get<std::string>(),
                                      p.at("prediction").get<std::string>()});
    } catch (const json::exception& e) {
        fail(ErrorKind::invalid_argument, "malformed evaluation report: " + std::string(e.what()));
    }
    return r;
}

json to_json(const ModelHandle& h) {
    return json{{"id", h.id},
                {"backend", to_string(h.kind)},
                {"catalog", jsonutil::catalog_to_json(h.catalog)},
                {"dataset", h.dataset},
                {"hyperparams", {{"epochs", h.hyperparams.epochs},
                                 {"learning_rate", h.hyperparams.learning_rate},
                                 {"batch_tiles", h.hyperparams.batch_tiles},
                                 {"seed", h.hyperparams.seed}}},
                {"started", h.started},
                {"finished", h.finished},
                {"best_epoch", h.best_epoch},
                {"best_val_loss", h.best_val_loss},
                {"train_accuracy", h.train_accuracy},
                {"endpoint", h.endpoint},
                {"remote_id", h.remote_id}};
}

ModelHandle model_handle_from_json(const json& j) {
    ModelHandle h;
    try {
        h.id = j.at("id").get<std::string>();
        h.kind = model_kind_from_string(j.at("backend").get<std::string>());
        h.catalog = jsonutil::catalog_from_json(j.at("catalog"), "/catalog");
        h.dataset = j.value("dataset", std::string());
        const auto& hp = j.at("hyperparams");
        h.hyperparams = {hp.at("epochs").get<int>(), hp.at("learning_rate").get<double>(), hp.at("batch_tiles").get<int>(),
                         hp.at("seed").get<std::uint64_t>()};
        h.started = j.value("started", std::string());
        h.finished = j.value("finished", std::string());
        h.best_epoch = j.value("best_epoch", 0);
        h.best_val_loss = j.value("best_val_loss", 0.0);
        h.train_accuracy = j.value("train_accuracy", 0.0);
        h.endpoint = j.value("endpoint", std::string());
        h.remote_id = j.value("remote_id", std::string());
    } catch (const json::exception& e) {
        fail(ErrorKind::invalid_argument, "malformed model metadata: " + std::string(e.what()));
    }
    return h;
}

// --- store ------------------------------------------------------------------

ModelStore::ModelStore(fs::path root) : root_(std::move(root)) {}

fs::path ModelStore::dir(const std::string& id) const {
    if (id.empty() || id.find_first_of("/\\") != std::string::npos || id == "." || id == "..")
        fail(ErrorKind::invalid_argument, "invalid model id '" + id + "'");
    return root_ / id;
}

std::string ModelStore::new_id() const {
    long next = 1;
    if (fs::is_directory(root_))
        for (const auto& e : fs::directory_iterator(root_)) {
            const std::string name = e.path().filename().string();
            if (name.rfind("model-", 0) == 0) {
                try {
                    next = std::max(next, std::stol(name.substr(6)) + 1);
                } catch (const std::exception&) {
                }
            }
        }
    return "model-" + std::to_string(next);
}

void ModelStore::save(const ModelHandle& handle, const PixelClassifier& model) {
    const fs::path d = dir(handle.id);
    fs::create_directories(d);
    if (handle.kind == ModelKind::builtin_baseline) {
        const auto* baseline = dynamic_cast<const BaselineModel*>(&model);
        if (!baseline)
            fail(ErrorKind::internal, "builtin model handle without baseline weights");
        const auto bytes = baseline->serialize();
        jsonutil::write_atomic(d / "weights.bin", std::string(bytes.begin(), bytes.end()));
    }
    jsonutil::write_atomic(d / "model.json", to_json(handle).dump(2) + "\n");
}

void ModelStore::save_report(const std::string& id, const EvalReport& report) {
    jsonutil::write_atomic(dir(id) / "report.json", to_json(report).dump(2) + "\n");
}

std::vector<ModelHandle> ModelStore::list() const {
    std::vector<ModelHandle> out;
    if (!fs::is_directory(root_))
        return out;
    for (const auto& e : fs::directory_iterator(root_))
        if (fs::is_regular_file(e.path() / "model.json"))
            out.push_back(model_handle_from_json(jsonutil::read_file(e.path() / "model.json")));
    std::sort(out.begin(), out.end(), [](const ModelHandle& a, const ModelHandle& b) { return a.id < b.id; });
    return out;
}

ModelHandle ModelStore::handle(const std::string& id) const {
    const fs::path p = dir(id) / "model.json";
    if (!fs::is_regular_file(p))
        fail(ErrorKind::not_found, "unknown model '" + id + "'");
    return model_handle_from_json(jsonutil::read_file(p));
}

std::unique_ptr<PixelClassifier> ModelStore::load(const std::string& id) const {
    const ModelHandle h = handle(id);
    if (h.kind == ModelKind::external)
        return std::make_unique<ExternalModel>(h.endpoint, h.remote_id, h.catalog.size());
    const std::string bytes = jsonutil::read_text(dir(id) / "weights.bin");
    auto m = BaselineModel::deserialize({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
    if (m.class_count() != h.catalog.size())
        fail(ErrorKind::invalid_argument, "model '" + id + "' weights do not match its class list");
    return std::make_unique<BaselineModel>(std::move(m));
}

EvalReport ModelStore::report(const std::string& id) const {
    const fs::path p = dir(id) / "report.json";
    if (!fs::is_regular_file(p))
        fail(ErrorKind::not_found, "model '" + id + "' has no evaluation report");
    return eval_report_from_json(jsonutil::read_file(p));
}

bool ModelStore::has_report(const std::string& id) const { return fs::is_regular_file(dir(id) / "report.json"); }

} // namespace orthoseg
