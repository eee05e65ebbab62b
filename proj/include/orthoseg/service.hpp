#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "orthoseg/click_segmenter.hpp"
#include "orthoseg/model.hpp"

namespace orthoseg {

/// Server settings. Environment variables ORTHOSEG_PORT, ORTHOSEG_JOBS, ORTHOSEG_SEGMENT_BACKEND and
/// ORTHOSEG_MODEL_BACKEND override the file values.
struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    int jobs = 2;
    SegmenterBackend segmenter;
    ModelBackend model_backend;
    int inference_workers = 0; // 0 = hardware concurrency

    /// Parses the JSON config document. Unknown keys are rejected.
    static ServiceConfig from_json(const nlohmann::json& j);
    /// Reads `path` if given, then applies environment overrides.
    static ServiceConfig load(const std::optional<std::filesystem::path>& path);
    void apply_env();
};

/// Parses a backend setting: "builtin" or an http:// endpoint.
SegmenterBackend parse_segmenter_backend(const std::string& value);
ModelBackend parse_model_backend(const std::string& value);

enum class JobKind { export_dataset, train, infer, preview };
enum class JobState { queued, running, done, failed, cancelled };
std::string to_string(JobKind k);
std::string to_string(JobState s);

/// HTTP facade over one project file. Mutations are serialized and saved after each change.
class Service {
public:
    Service(std::filesystem::path project_file, ServiceConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds the configured host and port (0 picks a free port) and returns the bound port.
    int bind();
    /// Serves requests until stop() is called.
    void run();
    /// Binds and serves on a background thread; returns the bound port.
    int start();
    void stop();

    /// Blocks until all queued and running jobs have finished.
    void wait_for_jobs();
    std::uint64_t revision() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace orthoseg
