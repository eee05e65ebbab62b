#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthoseg/dataset.hpp"
#include "orthoseg/progress.hpp"
#include "orthoseg/raster.hpp"

namespace orthoseg {

struct Hyperparams {
    int epochs = 20;
    double learning_rate = 0.01;
    int batch_tiles = 8;
    std::uint64_t seed = 1234;
};

enum class ModelKind { builtin_baseline, external };
std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

struct ModelHandle {
    std::string id;
    ModelKind kind = ModelKind::builtin_baseline;
    ClassCatalog catalog;
    std::string dataset; // manifest directory
    Hyperparams hyperparams;
    std::string started;  // UTC ISO-8601
    std::string finished; // UTC ISO-8601
    int best_epoch = 0;
    double best_val_loss = 0;
    double train_accuracy = 0;
    std::string endpoint;  // external backend only
    std::string remote_id; // external backend only
};

/// Per-pixel class probabilities for an RGB tile, laid out pixel-major:
/// value (y * w + x) * K + k. Each pixel sums to 1.
class PixelClassifier {
public:
    virtual ~PixelClassifier() = default;
    virtual std::size_t class_count() const = 0;
    virtual std::vector<float> predict(const ImageRgb& tile) const = 0;
};

inline constexpr int baseline_feature_count = 9;

/// RGB plus 5x5 local mean and standard deviation per channel, windows clipped at tile edges.
std::vector<float> baseline_features(const ImageRgb& tile);

/// Multinomial logistic regression on standardised baseline features. Class 0 is never predicted.
class BaselineModel final : public PixelClassifier {
public:
    explicit BaselineModel(std::size_t classes);

    std::size_t class_count() const override { return classes_; }
    std::vector<float> predict(const ImageRgb& tile) const override;

    /// Probabilities for one raw feature vector.
    void probabilities(const float* features, double* out) const;

    std::array<float, baseline_feature_count> mean{}, scale{};
    /// Row-major (class, feature) weights; the row and bias of class 0 stay zero.
    std::vector<float> weights, bias;

    std::vector<std::uint8_t> serialize() const;
    static BaselineModel deserialize(std::span<const std::uint8_t> bytes);

private:
    std::size_t classes_;
};

/// Model served by an external HTTP backend (`POST /predict`).
class ExternalModel final : public PixelClassifier {
public:
    ExternalModel(std::string endpoint, std::string remote_id, std::size_t classes, double timeout_s = 120.0);
    std::size_t class_count() const override { return classes_; }
    std::vector<float> predict(const ImageRgb& tile) const override;

private:
    std::string endpoint_, remote_id_;
    std::size_t classes_;
    double timeout_s_;
};

struct ModelBackend {
    ModelKind kind = ModelKind::builtin_baseline;
    std::string endpoint;
    double timeout_s = 120.0;
    double poll_interval_s = 0.5;
};

struct TrainResult {
    ModelHandle handle;
    std::unique_ptr<PixelClassifier> model;
};

/// Trains on the dataset's train split, keeping the parameters with the best validation loss.
TrainResult train(const TileDataset& dataset, const ModelBackend& backend, const Hyperparams& hp,
                  const Progress& progress = {});

struct PairedTile {
    std::string image, ground_truth, prediction;
};

struct EvalReport {
    /// K x K counts, rows ground truth, columns prediction; row 0 stays zero.
    std::vector<std::vector<std::uint64_t>> confusion;
    /// Empty entries for classes with a 0/0 ratio.
    std::vector<std::optional<double>> per_class_iou;
    double miou = 0;
    double accuracy = 0;
    std::vector<PairedTile> paired_tiles;
};

/// Adds one (ground truth, prediction) pair of class rasters to a confusion matrix.
void accumulate_confusion(std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred,
                          std::vector<std::vector<std::uint64_t>>& confusion);
/// Fills IoU, mIoU and accuracy from the confusion matrix.
EvalReport report_from_confusion(std::vector<std::vector<std::uint64_t>> confusion);

/// Argmax over classes 1..K-1, lowest index on ties.
std::vector<std::uint16_t> argmax_labels(std::span<const float> probabilities, std::size_t classes);

/// Evaluates on the test split and writes predicted label tiles under `prediction_dir`.
EvalReport evaluate(const PixelClassifier& model, const TileDataset& dataset, const std::filesystem::path& prediction_dir,
                    const Progress& progress = {});

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelHandle& h);
ModelHandle model_handle_from_json(const nlohmann::json& j);

/// Directory of trained models: `models/{id}/model.json`, `weights.bin`, `report.json`.
class ModelStore {
public:
    explicit ModelStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path dir(const std::string& id) const;

    /// Next unused id of the form `model-N`.
    std::string new_id() const;
    void save(const ModelHandle& handle, const PixelClassifier& model);
    void save_report(const std::string& id, const EvalReport& report);

    std::vector<ModelHandle> list() const;
    ModelHandle handle(const std::string& id) const;
    std::unique_ptr<PixelClassifier> load(const std::string& id) const;
    EvalReport report(const std::string& id) const;
    bool has_report(const std::string& id) const;

private:
    std::filesystem::path root_;
};

} // namespace orthoseg
