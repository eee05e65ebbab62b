#include "orthoseg/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "json_util.hpp"
#include "orthoseg/analysis.hpp"
#include "orthoseg/dataset.hpp"
#include "orthoseg/edit_tools.hpp"
#include "orthoseg/graphcut.hpp"
#include "orthoseg/inference.hpp"
#include "orthoseg/png_io.hpp"
#include "orthoseg/project.hpp"

namespace orthoseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_http_endpoint(const std::string& v) { return v.rfind("http://", 0) == 0 || v.rfind("https://", 0) == 0; }

int parse_int(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos == s.size())
            return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::invalid_argument, what + " must be an integer, got '" + s + "'");
}

} // namespace

SegmenterBackend parse_segmenter_backend(const std::string& value) {
    if (value == "builtin")
        return {};
    require(is_http_endpoint(value), "segment backend must be 'builtin' or an http:// endpoint, got '" + value + "'");
    return {BackendKind::external, value, 30.0};
}

ModelBackend parse_model_backend(const std::string& value) {
    if (value == "builtin" || value == "builtin-baseline")
        return {};
    require(is_http_endpoint(value), "model backend must be 'builtin' or an http:// endpoint, got '" + value + "'");
    ModelBackend b;
    b.kind = ModelKind::external;
    b.endpoint = value;
    return b;
}

ServiceConfig ServiceConfig::from_json(const json& j) {
    require(j.is_object(), "service config must be a JSON object");
    static const std::vector<std::string> known{"host",          "port",           "jobs", "segment_backend", "model_backend",
                                                "segment_timeout_s", "model_timeout_s", "inference_workers"};
    for (const auto& [k, v] : j.items())
        require(std::find(known.begin(), known.end(), k) != known.end(), "unknown service config key '" + k + "'");
    ServiceConfig c;
    try {
        c.host = j.value("host", c.host);
        c.port = j.value("port", c.port);
        c.jobs = j.value("jobs", c.jobs);
        if (j.contains("segment_backend"))
            c.segmenter = parse_segmenter_backend(j["segment_backend"].get<std::string>());
        if (j.contains("model_backend"))
            c.model_backend = parse_model_backend(j["model_backend"].get<std::string>());
        c.segmenter.timeout_s = j.value("segment_timeout_s", c.segmenter.timeout_s);
        c.model_backend.timeout_s = j.value("model_timeout_s", c.model_backend.timeout_s);
        c.inference_workers = j.value("inference_workers", c.inference_workers);
    } catch (const json::exception& e) {
        fail(ErrorKind::invalid_argument, std::string("service config: ") + e.what());
    }
    require(c.port >= 0 && c.port <= 65535, "port out of range");
    require(c.jobs >= 1, "job parallelism must be at least 1");
    require(c.inference_workers >= 0, "inference workers must be non-negative");
    return c;
}

ServiceConfig ServiceConfig::load(const std::optional<fs::path>& path) {
    ServiceConfig c = path ? from_json(jsonutil::read_file(*path)) : ServiceConfig{};
    c.apply_env();
    return c;
}

void ServiceConfig::apply_env() {
    if (const char* v = std::getenv("ORTHOSEG_PORT")) {
        port = parse_int(v, "ORTHOSEG_PORT");
        require(port >= 0 && port <= 65535, "ORTHOSEG_PORT out of range");
    }
    if (const char* v = std::getenv("ORTHOSEG_JOBS")) {
        jobs = parse_int(v, "ORTHOSEG_JOBS");
        require(jobs >= 1, "ORTHOSEG_JOBS must be at least 1");
    }
    if (const char* v = std::getenv("ORTHOSEG_SEGMENT_BACKEND")) {
        const double t = segmenter.timeout_s;
        segmenter = parse_segmenter_backend(v);
        segmenter.timeout_s = t;
    }
    if (const char* v = std::getenv("ORTHOSEG_MODEL_BACKEND")) {
        const double t = model_backend.timeout_s;
        model_backend = parse_model_backend(v);
        model_backend.timeout_s = t;
    }
}

std::string to_string(JobKind k) {
    switch (k) {
    case JobKind::export_dataset: return "export-dataset";
    case JobKind::train: return "train";
    case JobKind::infer: return "infer";
    case JobKind::preview: return "preview";
    }
    return "?";
}

std::string to_string(JobState s) {
    switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
    case JobState::cancelled: return "cancelled";
    }
    return "?";
}

namespace {

using httplib::Request;
using httplib::Response;

int http_status(ErrorKind k) {
    switch (k) {
    case ErrorKind::invalid_argument: return 400;
    case ErrorKind::not_found: return 404;
    case ErrorKind::conflict: return 409;
    case ErrorKind::cancelled: return 409;
    case ErrorKind::contract_violation: return 422;
    case ErrorKind::io:
    case ErrorKind::internal: return 500;
    }
    return 500;
}

std::string kind_name(ErrorKind k) {
    switch (k) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::not_found: return "not-found";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::cancelled: return "cancelled";
    case ErrorKind::contract_violation: return "contract-violation";
    case ErrorKind::io: return "io";
    case ErrorKind::internal: return "internal";
    }
    return "internal";
}

void send_json(Response& res, const json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

json parse_body(const Request& req) {
    if (req.body.empty())
        return json::object();
    json j = json::parse(req.body, nullptr, false);
    if (j.is_discarded())
        fail(ErrorKind::invalid_argument, "request body is not valid JSON");
    require(j.is_object(), "request body must be a JSON object");
    return j;
}

const json& need(const json& j, const std::string& key) {
    if (!j.contains(key))
        fail(ErrorKind::invalid_argument, "missing field '" + key + "'");
    return j[key];
}

template <class T> T need_as(const json& j, const std::string& key) {
    try {
        return need(j, key).get<T>();
    } catch (const json::exception&) {
        fail(ErrorKind::invalid_argument, "field '" + key + "' has the wrong type");
    }
}

template <class T> T value_as(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key) || j[key].is_null())
        return fallback;
    return need_as<T>(j, key);
}

Point point_from_json(const json& p, const std::string& where) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
        fail(ErrorKind::invalid_argument, where + " must be an [x, y] pair");
    return {p[0].get<double>(), p[1].get<double>()};
}

std::vector<Point> points_from_json(const json& j, const std::string& key) {
    const json& a = need(j, key);
    require(a.is_array(), "field '" + key + "' must be an array of [x, y] pairs");
    std::vector<Point> out;
    for (std::size_t i = 0; i < a.size(); ++i)
        out.push_back(point_from_json(a[i], key + "[" + std::to_string(i) + "]"));
    return out;
}

PixelRect rect_from_json(const json& a, const std::string& where) {
    if (!a.is_array() || a.size() != 4)
        fail(ErrorKind::invalid_argument, where + " must be [x, y, w, h]");
    for (const auto& v : a)
        require(v.is_number_integer(), where + " must contain integers");
    return {a[0].get<int>(), a[1].get<int>(), a[2].get<int>(), a[3].get<int>()};
}

PixelRect rect_from_query(const std::string& s) {
    std::vector<int> v;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ','))
        v.push_back(parse_int(part, "area"));
    require(v.size() == 4, "area must be x,y,w,h");
    return {v[0], v[1], v[2], v[3]};
}

json rect_to_json(const PixelRect& r) { return json::array({r.x, r.y, r.w, r.h}); }

std::int64_t parse_id(const std::string& s) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos == s.size())
            return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::invalid_argument, "invalid region id '" + s + "'");
}

std::string read_binary(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in)
        fail(ErrorKind::not_found, "file not found: " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SplitCriterion criterion_from_json(const json& j) {
    SplitCriterion c;
    if (j.is_null())
        return c;
    require(j.is_object(), "criterion must be an object");
    const std::string kind = value_as<std::string>(j, "kind", "random");
    if (kind == "random")
        c.kind = SplitKind::random;
    else if (kind == "spatial-bands")
        c.kind = SplitKind::spatial_bands;
    else
        fail(ErrorKind::invalid_argument, "unknown split criterion '" + kind + "'");
    c.seed = value_as<std::uint64_t>(j, "seed", c.seed);
    const std::string axis = value_as<std::string>(j, "axis", "x");
    require(axis == "x" || axis == "y", "axis must be 'x' or 'y'");
    c.axis = axis == "x" ? Axis::x : Axis::y;
    if (j.contains("fractions")) {
        const auto f = need_as<std::vector<double>>(j, "fractions");
        require(f.size() == 3, "fractions must have three entries");
        c.fractions = {f[0], f[1], f[2]};
    }
    return c;
}

Hyperparams hyperparams_from_json(const json& j) {
    Hyperparams h;
    if (j.is_null())
        return h;
    require(j.is_object(), "hyperparams must be an object");
    h.epochs = value_as<int>(j, "epochs", h.epochs);
    h.learning_rate = value_as<double>(j, "learning_rate", h.learning_rate);
    h.batch_tiles = value_as<int>(j, "batch_tiles", h.batch_tiles);
    h.seed = value_as<std::uint64_t>(j, "seed", h.seed);
    return h;
}

struct Job {
    std::string id;
    JobKind kind;
    std::function<json(const Progress&)> run;
    std::function<void()> cleanup;

    std::mutex mutex;
    JobState state = JobState::queued;
    double progress = 0;
    json result;
    std::string error;
    std::atomic<bool> cancel{false};

    json to_json() {
        std::lock_guard lock(mutex);
        return json{{"id", id},
                    {"kind", orthoseg::to_string(kind)},
                    {"state", orthoseg::to_string(state)},
                    {"progress", progress},
                    {"result", result},
                    {"error", error.empty() ? json(nullptr) : json(error)},
                    {"cancel_requested", cancel.load()}};
    }
};

class JobManager {
public:
    explicit JobManager(int workers) {
        for (int i = 0; i < workers; ++i)
            threads_.emplace_back([this] { loop(); });
    }
    ~JobManager() {
        {
            std::lock_guard lock(mutex_);
            stopping_ = true;
            for (auto& j : queue_)
                j->cancel = true;
            for (auto& [id, j] : jobs_)
                j->cancel = true;
        }
        cv_.notify_all();
        for (auto& t : threads_)
            t.join();
    }

    std::string reserve_id() {
        std::lock_guard lock(mutex_);
        return "job-" + std::to_string(++counter_);
    }

    std::shared_ptr<Job> submit(std::string id, JobKind kind, std::function<json(const Progress&)> run,
                                std::function<void()> cleanup) {
        auto job = std::make_shared<Job>();
        job->id = std::move(id);
        job->kind = kind;
        job->run = std::move(run);
        job->cleanup = std::move(cleanup);
        {
            std::lock_guard lock(mutex_);
            jobs_[job->id] = job;
            queue_.push_back(job);
            ++pending_;
        }
        cv_.notify_all();
        return job;
    }

    std::shared_ptr<Job> get(const std::string& id) {
        std::lock_guard lock(mutex_);
        auto it = jobs_.find(id);
        if (it == jobs_.end())
            fail(ErrorKind::not_found, "unknown job '" + id + "'");
        return it->second;
    }

    std::vector<std::shared_ptr<Job>> all() {
        std::lock_guard lock(mutex_);
        std::vector<std::shared_ptr<Job>> out;
        for (const auto& [id, j] : jobs_)
            out.push_back(j);
        return out;
    }

    void cancel(const std::shared_ptr<Job>& job) {
        std::unique_lock lock(mutex_);
        std::lock_guard jl(job->mutex);
        if (job->state == JobState::done || job->state == JobState::failed || job->state == JobState::cancelled)
            fail(ErrorKind::conflict, "job '" + job->id + "' already " + orthoseg::to_string(job->state));
        job->cancel = true;
        if (job->state == JobState::queued) {
            auto it = std::find(queue_.begin(), queue_.end(), job);
            if (it != queue_.end()) {
                queue_.erase(it);
                --pending_;
            }
            job->state = JobState::cancelled;
            idle_.notify_all();
        }
    }

    void wait_idle() {
        std::unique_lock lock(mutex_);
        idle_.wait(lock, [this] { return pending_ == 0; });
    }

private:
    void loop() {
        for (;;) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
                if (queue_.empty())
                    return;
                job = queue_.front();
                queue_.pop_front();
                std::lock_guard jl(job->mutex);
                job->state = JobState::running;
            }
            execute(*job);
            {
                std::lock_guard lock(mutex_);
                --pending_;
            }
            idle_.notify_all();
        }
    }

    static void execute(Job& job) {
        Progress progress;
        progress.cancel = &job.cancel;
        progress.report = [&job](double f) {
            std::lock_guard lock(job.mutex);
            job.progress = std::max(job.progress, std::clamp(f, 0.0, 1.0));
        };
        JobState final_state = JobState::done;
        json result;
        std::string error;
        try {
            progress.check();
            result = job.run(progress);
        } catch (const Error& e) {
            final_state = e.kind() == ErrorKind::cancelled ? JobState::cancelled : JobState::failed;
            error = e.what();
        } catch (const std::exception& e) {
            final_state = JobState::failed;
            error = e.what();
        }
        if (final_state != JobState::done && job.cleanup) {
            try {
                job.cleanup();
            } catch (const std::exception& e) {
                std::cerr << "orthoseg: cleanup of " << job.id << " failed: " << e.what() << "\n";
            }
        }
        std::lock_guard lock(job.mutex);
        job.state = final_state;
        if (final_state == JobState::done) {
            job.progress = 1.0;
            job.result = std::move(result);
        } else {
            job.error = error;
        }
    }

    std::mutex mutex_;
    std::condition_variable cv_, idle_;
    std::deque<std::shared_ptr<Job>> queue_;
    std::map<std::string, std::shared_ptr<Job>> jobs_;
    std::vector<std::thread> threads_;
    std::size_t pending_ = 0;
    std::uint64_t counter_ = 0;
    bool stopping_ = false;
};

} // namespace

struct Service::Impl {
    fs::path project_file, project_dir;
    ServiceConfig config;

    mutable std::shared_mutex project_mutex;
    Project project;
    std::uint64_t revision = 0;

    std::mutex maps_mutex;
    std::unordered_map<std::string, std::shared_ptr<const OrthoMap>> maps;

    std::mutex model_id_mutex;
    ModelStore store;

    std::atomic<std::uint64_t> correlation{0};
    std::uint64_t correlation_salt;

    httplib::Server server;
    std::thread thread;
    int bound_port = -1;

    std::unique_ptr<JobManager> jobs;

    Impl(fs::path file, ServiceConfig cfg)
        : project_file(fs::absolute(std::move(file))), project_dir(project_file.parent_path()), config(std::move(cfg)),
          project(Project::load(project_file)), store(project_dir / "models"),
          correlation_salt(std::random_device{}()) {
        jobs = std::make_unique<JobManager>(config.jobs);
        routes();
    }

    // ---- helpers ----

    std::shared_ptr<const OrthoMap> open_map(const std::string& id) {
        {
            std::lock_guard lock(maps_mutex);
            if (auto it = maps.find(id); it != maps.end())
                return it->second;
        }
        MapRecord record;
        {
            std::shared_lock lock(project_mutex);
            record = project.map(id);
        }
        fs::path p = record.path;
        if (p.is_relative())
            p = project_dir / p;
        OpenOptions opt;
        opt.id = record.id;
        opt.acquisition_date = record.acquisition_date;
        auto m = std::make_shared<const OrthoMap>(open_orthomap(p, record.pixel_size_mm, opt));
        std::lock_guard lock(maps_mutex);
        return maps.emplace(id, m).first->second;
    }

    fs::path resolve(const std::string& p) const {
        fs::path path(p);
        return path.is_relative() ? project_dir / path : path;
    }

    void check_revision(const Request& req, const json& body) const {
        std::optional<std::uint64_t> expected;
        if (body.contains("revision") && !body["revision"].is_null())
            expected = need_as<std::uint64_t>(body, "revision");
        else if (req.has_param("revision"))
            expected = static_cast<std::uint64_t>(parse_id(req.get_param_value("revision")));
        if (expected && *expected != revision)
            fail(ErrorKind::conflict, "project changed: revision is " + std::to_string(revision) + ", request expected " +
                                          std::to_string(*expected));
    }

    // Runs a mutation under the writer lock and persists the project.
    template <class F> json mutate(const Request& req, const json& body, F&& f) {
        std::unique_lock lock(project_mutex);
        check_revision(req, body);
        json out = f(project);
        commit_locked();
        out["revision"] = revision;
        return out;
    }

    void commit_locked() {
        try {
            project.save(project_file);
        } catch (...) {
            project = Project::load(project_file);
            throw;
        }
        ++revision;
    }

    json regions_json(const std::vector<std::int64_t>& ids) const {
        json a = json::array();
        for (auto id : ids)
            a.push_back(region_to_json(project.region(id)));
        return a;
    }

    void send_error(Response& res, ErrorKind kind, const std::string& message) {
        json err{{"kind", kind_name(kind)}, {"message", message}};
        const int status = http_status(kind);
        if (status >= 500) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%08llx-%06llu", static_cast<unsigned long long>(correlation_salt & 0xffffffffu),
                          static_cast<unsigned long long>(++correlation));
            err["correlation_id"] = buf;
            std::cerr << "orthoseg: error " << buf << ": " << message << "\n";
        }
        send_json(res, json{{"error", err}}, status);
    }

    template <class F> httplib::Server::Handler guard(F f) {
        return [this, f](const Request& req, Response& res) {
            try {
                f(req, res);
            } catch (const Error& e) {
                send_error(res, e.kind(), e.what());
            } catch (const json::exception& e) {
                send_error(res, ErrorKind::invalid_argument, std::string("malformed request: ") + e.what());
            } catch (const std::exception& e) {
                send_error(res, ErrorKind::internal, e.what());
            }
        };
    }

    PixelRect area_param(const Request& req, const OrthoMap& map) const {
        const PixelRect full{0, 0, map.width(), map.height()};
        if (!req.has_param("area"))
            return full;
        const PixelRect a = rect_from_query(req.get_param_value("area"));
        require(!a.empty() && full.contains(a), "area must be a non-empty rectangle inside the map");
        return a;
    }

    std::vector<Region> map_regions(const std::string& map) const {
        std::shared_lock lock(project_mutex);
        return project.regions(map);
    }

    // ---- routes ----

    void routes() {
        server.set_payload_max_length(std::size_t{512} << 20);

        server.Get("/project", guard([this](const Request&, Response& res) {
                       std::shared_lock lock(project_mutex);
                       send_json(res, json{{"revision", revision},
                                           {"undo_depth", project.undo_depth()},
                                           {"project", project.to_json()}});
                   }));
        server.Post("/project", guard([this](const Request& req, Response& res) { post_project(req, res); }));

        server.Get("/maps", guard([this](const Request&, Response& res) {
                       std::vector<std::string> ids;
                       {
                           std::shared_lock lock(project_mutex);
                           for (const auto& m : project.maps())
                               ids.push_back(m.id);
                       }
                       json out = json::array();
                       for (const auto& id : ids)
                           out.push_back(map_info(*open_map(id)));
                       send_json(res, json{{"maps", out}});
                   }));
        server.Get(R"(/maps/([^/]+))", guard([this](const Request& req, Response& res) {
                       send_json(res, map_info(*open_map(req.matches[1])));
                   }));
        server.Get(R"(/maps/([^/]+)/tiles/(\d+)/(\d+)/(\d+)\.png)", guard([this](const Request& req, Response& res) {
                       const auto map = open_map(req.matches[1]);
                       const int z = parse_int(req.matches[2], "level");
                       const int x = parse_int(req.matches[3], "tile x");
                       const int y = parse_int(req.matches[4], "tile y");
                       if (z >= map->levels())
                           fail(ErrorKind::not_found, "no pyramid level " + std::to_string(z));
                       const auto [tx, ty] = map->level_tiles(z);
                       if (x >= tx || y >= ty)
                           fail(ErrorKind::not_found, "tile outside level " + std::to_string(z));
                       res.set_content(read_binary(map->tile_path(z, x, y)), "image/png");
                   }));

        server.Get("/regions", guard([this](const Request& req, Response& res) { get_regions(req, res); }));
        server.Get(R"(/regions/(-?\d+))", guard([this](const Request& req, Response& res) {
                       const std::int64_t id = parse_id(req.matches[1]);
                       std::shared_lock lock(project_mutex);
                       send_json(res, json{{"revision", revision},
                                           {"map", project.map_of(id)},
                                           {"region", region_to_json(project.region(id))}});
                   }));
        server.Post("/regions", guard([this](const Request& req, Response& res) {
                        const json body = parse_body(req);
                        const std::string map = need_as<std::string>(body, "map");
                        const Region r = request_region(body);
                        send_json(res, mutate(req, body, [&](Project& p) {
                                      const auto ids = p.apply({RegionOp::create(map, r)});
                                      return json{{"regions", regions_json(ids)}};
                                  }),
                                  201);
                    }));
        server.Put(R"(/regions/(-?\d+))", guard([this](const Request& req, Response& res) {
                       const std::int64_t id = parse_id(req.matches[1]);
                       const json body = parse_body(req);
                       const Region r = request_region(body);
                       send_json(res, mutate(req, body, [&](Project& p) {
                                     p.apply({RegionOp::replace(id, r)});
                                     return json{{"regions", regions_json({id})}};
                                 }));
                   }));
        server.Delete(R"(/regions/(-?\d+))", guard([this](const Request& req, Response& res) {
                          const std::int64_t id = parse_id(req.matches[1]);
                          const json body = parse_body(req);
                          send_json(res, mutate(req, body, [&](Project& p) {
                                        p.apply({RegionOp::remove(id)});
                                        return json{{"removed", json::array({id})}};
                                    }));
                      }));

        server.Post("/tools/freehand", guard([this](const Request& req, Response& res) { tool_freehand(req, res); }));
        server.Post("/tools/cut", guard([this](const Request& req, Response& res) { tool_cut(req, res); }));
        server.Post("/tools/edit-border", guard([this](const Request& req, Response& res) { tool_edit_border(req, res); }));
        server.Post("/tools/refine", guard([this](const Request& req, Response& res) { tool_refine(req, res); }));
        server.Post("/tools/extreme-click", guard([this](const Request& req, Response& res) { tool_extreme(req, res); }));
        server.Post("/tools/posneg-click", guard([this](const Request& req, Response& res) { tool_posneg(req, res); }));

        server.Post("/jobs/export-dataset", guard([this](const Request& req, Response& res) { job_export(req, res); }));
        server.Post("/jobs/train", guard([this](const Request& req, Response& res) { job_train(req, res); }));
        server.Post("/jobs/infer", guard([this](const Request& req, Response& res) { job_infer(req, res, false); }));
        server.Post("/jobs/preview", guard([this](const Request& req, Response& res) { job_infer(req, res, true); }));
        server.Get("/jobs", guard([this](const Request&, Response& res) {
                       json out = json::array();
                       for (const auto& j : jobs->all())
                           out.push_back(j->to_json());
                       send_json(res, json{{"jobs", out}});
                   }));
        server.Get(R"(/jobs/([^/]+))", guard([this](const Request& req, Response& res) {
                       send_json(res, jobs->get(req.matches[1])->to_json());
                   }));
        server.Get(R"(/jobs/([^/]+)/result\.png)", guard([this](const Request& req, Response& res) {
                       const json j = jobs->get(req.matches[1])->to_json();
                       if (j["state"] != "done" || !j["result"].contains("label_png"))
                           fail(ErrorKind::not_found, "job has no label image");
                       res.set_content(read_binary(j["result"]["label_png"].get<std::string>()), "image/png");
                   }));
        server.Delete(R"(/jobs/([^/]+))", guard([this](const Request& req, Response& res) {
                          auto job = jobs->get(req.matches[1]);
                          jobs->cancel(job);
                          send_json(res, job->to_json());
                      }));

        server.Get("/models", guard([this](const Request&, Response& res) {
                       json out = json::array();
                       for (const auto& h : store.list())
                           out.push_back(orthoseg::to_json(h));
                       send_json(res, json{{"models", out}});
                   }));
        server.Get(R"(/models/([^/]+))", guard([this](const Request& req, Response& res) {
                       send_json(res, orthoseg::to_json(store.handle(req.matches[1])));
                   }));
        server.Get(R"(/models/([^/]+)/report)", guard([this](const Request& req, Response& res) {
                       const std::string id = req.matches[1];
                       (void)store.handle(id);
                       if (!store.has_report(id))
                           fail(ErrorKind::not_found, "model '" + id + "' has no evaluation report");
                       send_json(res, orthoseg::to_json(store.report(id)));
                   }));
        server.Get(R"(/models/([^/]+)/tiles/(\d+)/(image|ground_truth|prediction)\.png)",
                   guard([this](const Request& req, Response& res) {
                       const std::string id = req.matches[1];
                       (void)store.handle(id);
                       if (!store.has_report(id))
                           fail(ErrorKind::not_found, "model '" + id + "' has no evaluation report");
                       const EvalReport r = store.report(id);
                       const int k = parse_int(req.matches[2], "tile index");
                       if (k >= static_cast<int>(r.paired_tiles.size()))
                           fail(ErrorKind::not_found, "paired tile " + std::to_string(k) + " out of range");
                       const PairedTile& t = r.paired_tiles[static_cast<std::size_t>(k)];
                       const std::string which = req.matches[3];
                       const std::string& path =
                           which == "image" ? t.image : which == "ground_truth" ? t.ground_truth : t.prediction;
                       res.set_content(read_binary(path), "image/png");
                   }));

        server.Get("/analysis/coverage", guard([this](const Request& req, Response& res) {
                       const CoverageReport r = coverage_report(req);
                       send_json(res, orthoseg::to_json(r));
                   }));
        server.Post("/analysis/changes", guard([this](const Request& req, Response& res) {
                        const json body = parse_body(req);
                        const auto changes = change_records(need_as<std::string>(body, "map_a"),
                                                            need_as<std::string>(body, "map_b"), body);
                        json out = json::array();
                        for (const auto& c : changes)
                            out.push_back(orthoseg::to_json(c));
                        send_json(res, json{{"changes", out}});
                    }));

        server.Get("/export/labelmap", guard([this](const Request& req, Response& res) {
                       const std::string map_id = need_param(req, "map");
                       const auto map = open_map(map_id);
                       const PixelRect area = area_param(req, *map);
                       require(static_cast<std::int64_t>(area.w) * area.h <= max_in_memory_pixels,
                               "label map export is limited to 8192x8192 pixels per request; pass an area");
                       const auto regions = map_regions(map_id);
                       ClassCatalog catalog;
                       {
                           std::shared_lock lock(project_mutex);
                           catalog = project.catalog();
                       }
                       const auto png = png::encode_rgb(colorize(render_labels(regions, area), catalog));
                       res.set_content(std::string(png.begin(), png.end()), "image/png");
                   }));
        server.Get("/export/vector", guard([this](const Request& req, Response& res) {
                       const std::string map_id = need_param(req, "map");
                       std::shared_lock lock(project_mutex);
                       const auto& regions = project.regions(map_id);
                       res.set_content(regions_to_geojson(regions, project.catalog()).dump(2) + "\n",
                                       "application/geo+json");
                   }));
        server.Get("/export/csv", guard([this](const Request& req, Response& res) {
                       const std::string kind = req.has_param("kind") ? req.get_param_value("kind") : "coverage";
                       if (kind == "coverage") {
                           res.set_content(coverage_csv(coverage_report(req)), "text/csv");
                       } else if (kind == "changes") {
                           json params = json::object();
                           if (req.has_param("iou_threshold"))
                               params["iou_threshold"] = std::stod(req.get_param_value("iou_threshold"));
                           if (req.has_param("grow_threshold"))
                               params["grow_threshold"] = std::stod(req.get_param_value("grow_threshold"));
                           res.set_content(
                               changes_csv(change_records(need_param(req, "map_a"), need_param(req, "map_b"), params)),
                               "text/csv");
                       } else {
                           fail(ErrorKind::invalid_argument, "csv kind must be 'coverage' or 'changes'");
                       }
                   }));
    }

    static std::string need_param(const Request& req, const std::string& key) {
        if (!req.has_param(key))
            fail(ErrorKind::invalid_argument, "missing query parameter '" + key + "'");
        return req.get_param_value(key);
    }

    static json map_info(const OrthoMap& m) {
        return json{{"id", m.id()},
                    {"width", m.width()},
                    {"height", m.height()},
                    {"pixel_size_mm", m.pixel_size_mm()},
                    {"acquisition_date", m.info().acquisition_date},
                    {"levels", m.levels()},
                    {"tile_size", pyramid_tile_size}};
    }

    static Region request_region(const json& body) {
        json r = need(body, "region");
        require(r.is_object(), "field 'region' must be an object");
        if (!r.contains("id"))
            r["id"] = 0;
        if (!r.contains("holes"))
            r["holes"] = json::array();
        if (!r.contains("provenance"))
            r["provenance"] = "manual";
        return region_from_json(r, "/region");
    }

    void post_project(const Request& req, Response& res) {
        const json body = parse_body(req);
        const std::string action = need_as<std::string>(body, "action");
        if (action == "undo") {
            send_json(res, mutate(req, body, [](Project& p) {
                          p.undo();
                          return json{{"undo_depth", p.undo_depth()}};
                      }));
        } else if (action == "save") {
            send_json(res, mutate(req, body, [](Project&) { return json::object(); }));
        } else if (action == "add-class") {
            const std::string name = need_as<std::string>(body, "name");
            const Rgb8 color = jsonutil::rgb_from_json(need(body, "color"), "/color");
            send_json(res, mutate(req, body, [&](Project& p) { return json{{"class_index", p.add_class(name, color)}}; }));
        } else if (action == "add-map") {
            MapRecord rec;
            rec.path = need_as<std::string>(body, "path");
            rec.pixel_size_mm = need_as<double>(body, "pixel_size_mm");
            rec.acquisition_date = value_as<std::string>(body, "acquisition_date", "");
            rec.id = value_as<std::string>(body, "id", fs::path(rec.path).stem().string());
            OpenOptions opt;
            opt.id = rec.id;
            opt.acquisition_date = rec.acquisition_date;
            auto opened = std::make_shared<const OrthoMap>(open_orthomap(resolve(rec.path), rec.pixel_size_mm, opt));
            rec.path = resolve(rec.path).string();
            send_json(res, mutate(req, body, [&](Project& p) {
                          p.add_map(rec, project_dir);
                          return json{{"map", rec.id}};
                      }),
                      201);
            std::lock_guard lock(maps_mutex);
            maps[rec.id] = opened;
        } else if (action == "import-labelmap") {
            const std::string map_id = need_as<std::string>(body, "map");
            const auto map = open_map(map_id);
            const PixelRect area = body.contains("area") ? rect_from_json(body["area"], "/area")
                                                         : PixelRect{0, 0, map->width(), map->height()};
            ClassCatalog catalog;
            {
                std::shared_lock lock(project_mutex);
                catalog = project.catalog();
            }
            const LabelImport imp =
                import_labelmap(resolve(need_as<std::string>(body, "path")), catalog, area, value_as<bool>(body, "strict", true));
            auto regions = regions_from_labels(imp.raster, catalog.size(), value_as<int>(body, "min_region_px", 0));
            for (auto& r : regions)
                r.provenance = Provenance::imported;
            json unmatched = json::array();
            for (const auto& [c, n] : imp.unmatched)
                unmatched.push_back({{"color", jsonutil::rgb_to_json(c)}, {"pixels", n}});
            send_json(res, mutate(req, body, [&](Project& p) {
                          const auto ids = regions.empty() ? std::vector<std::int64_t>{} : commit_regions(p, map_id, regions);
                          return json{{"created", ids}, {"unmatched", unmatched}};
                      }));
        } else if (action == "import-vector") {
            const std::string map_id = need_as<std::string>(body, "map");
            ClassCatalog catalog;
            {
                std::shared_lock lock(project_mutex);
                (void)project.map(map_id);
                catalog = project.catalog();
            }
            const auto regions = import_vector(resolve(need_as<std::string>(body, "path")), catalog);
            send_json(res, mutate(req, body, [&](Project& p) {
                          const auto ids = regions.empty() ? std::vector<std::int64_t>{} : commit_regions(p, map_id, regions);
                          return json{{"created", ids}};
                      }));
        } else {
            fail(ErrorKind::invalid_argument, "unknown project action '" + action + "'");
        }
    }

    void get_regions(const Request& req, Response& res) {
        std::shared_lock lock(project_mutex);
        json out = json::array();
        auto add = [&](const std::string& map) {
            for (const auto& r : project.regions(map)) {
                json j = region_to_json(r);
                j["map"] = map;
                out.push_back(std::move(j));
            }
        };
        if (req.has_param("map")) {
            add(req.get_param_value("map"));
        } else {
            for (const auto& m : project.maps())
                add(m.id);
        }
        send_json(res, json{{"revision", revision}, {"regions", out}});
    }

    // Applies a tool result: the first region replaces `target` when given, the others are created.
    json apply_tool(const Request& req, const json& body, const std::string& map, std::optional<std::int64_t> target,
                    std::vector<Region> regions) {
        if (!value_as<bool>(body, "commit", true)) {
            json a = json::array();
            for (auto& r : regions) {
                if (target)
                    r.id = *target;
                a.push_back(region_to_json(r));
            }
            return json{{"regions", a}, {"committed", false}};
        }
        return mutate(req, body, [&](Project& p) {
            Transaction tx;
            for (std::size_t i = 0; i < regions.size(); ++i) {
                if (i == 0 && target)
                    tx.push_back(RegionOp::replace(*target, regions[i]));
                else
                    tx.push_back(RegionOp::create(map, regions[i]));
            }
            auto created = p.apply(tx);
            std::vector<std::int64_t> ids;
            if (target)
                ids.push_back(*target);
            ids.insert(ids.end(), created.begin(), created.end());
            return json{{"regions", regions_json(ids)}, {"committed", true}};
        });
    }

    std::pair<std::string, Region> lookup_region(std::int64_t id) const {
        std::shared_lock lock(project_mutex);
        return {project.map_of(id), project.region(id)};
    }

    std::uint16_t class_param(const json& body) const {
        const int c = need_as<int>(body, "class_index");
        std::shared_lock lock(project_mutex);
        require(c >= 1 && c < static_cast<int>(project.catalog().size()),
                "class_index " + std::to_string(c) + " is not a labelled class");
        return static_cast<std::uint16_t>(c);
    }

    void tool_freehand(const Request& req, Response& res) {
        const json body = parse_body(req);
        const std::string map = need_as<std::string>(body, "map");
        const std::uint16_t cls = class_param(body);
        {
            std::shared_lock lock(project_mutex);
            (void)project.map(map);
        }
        Region r = freehand_close(Sketch{points_from_json(body, "points")}, cls);
        send_json(res, apply_tool(req, body, map, std::nullopt, {std::move(r)}));
    }

    void tool_cut(const Request& req, Response& res) {
        const json body = parse_body(req);
        const std::int64_t id = need_as<std::int64_t>(body, "region");
        const auto [map, region] = lookup_region(id);
        auto parts = cut(region, Sketch{points_from_json(body, "points")});
        send_json(res, apply_tool(req, body, map, id, std::move(parts)));
    }

    void tool_edit_border(const Request& req, Response& res) {
        const json body = parse_body(req);
        const std::int64_t id = need_as<std::int64_t>(body, "region");
        const auto [map, region] = lookup_region(id);
        Region r = edit_border(region, Sketch{points_from_json(body, "points")});
        send_json(res, apply_tool(req, body, map, id, {std::move(r)}));
    }

    void tool_refine(const Request& req, Response& res) {
        const json body = parse_body(req);
        const std::int64_t id = need_as<std::int64_t>(body, "region");
        RefineParams params;
        params.band_width = value_as<int>(body, "band_width", params.band_width);
        params.lambda = value_as<double>(body, "lambda", params.lambda);
        params.hist_bins = value_as<int>(body, "hist_bins", params.hist_bins);
        const auto [map_id, region] = lookup_region(id);
        Region r = refine_on_map(*open_map(map_id), region, params);
        send_json(res, apply_tool(req, body, map_id, id, {std::move(r)}));
    }

    void tool_extreme(const Request& req, Response& res) {
        const json body = parse_body(req);
        const std::string map_id = need_as<std::string>(body, "map");
        const std::uint16_t cls = class_param(body);
        const auto pts = points_from_json(body, "points");
        require(pts.size() == 4, "extreme-click needs exactly four points");
        Region r = extreme_click_region(*open_map(map_id), ExtremeClicks{{pts[0], pts[1], pts[2], pts[3]}}, cls,
                                        config.segmenter);
        send_json(res, apply_tool(req, body, map_id, std::nullopt, {std::move(r)}));
    }

    void tool_posneg(const Request& req, Response& res) {
        const json body = parse_body(req);
        ClickSet clicks;
        clicks.positives = points_from_json(body, "positives");
        if (body.contains("negatives"))
            clicks.negatives = points_from_json(body, "negatives");
        require(!clicks.positives.empty(), "posneg-click needs at least one positive click");
        std::optional<std::int64_t> target;
        std::optional<Region> prior;
        std::string map_id;
        std::uint16_t cls = 0;
        if (body.contains("region") && !body["region"].is_null()) {
            target = need_as<std::int64_t>(body, "region");
            auto [m, r] = lookup_region(*target);
            map_id = m;
            cls = r.class_index;
            prior = std::move(r);
        } else {
            map_id = need_as<std::string>(body, "map");
            cls = class_param(body);
        }
        auto parts = click_regions(*open_map(map_id), clicks.positives, clicks.negatives, prior, cls, config.segmenter,
                                   value_as<int>(body, "margin", 128));
        send_json(res, apply_tool(req, body, map_id, target, std::move(parts)));
    }

    CoverageReport coverage_report(const Request& req) {
        const std::string map_id = need_param(req, "map");
        const auto map = open_map(map_id);
        const PixelRect area = area_param(req, *map);
        std::shared_lock lock(project_mutex);
        return coverage(project.regions(map_id), project.catalog(), area, project.map(map_id).pixel_size_mm);
    }

    std::vector<ChangeRecord> change_records(const std::string& a, const std::string& b, const json& params) {
        ChangeParams cp;
        cp.iou_threshold = value_as<double>(params, "iou_threshold", cp.iou_threshold);
        cp.grow_threshold = value_as<double>(params, "grow_threshold", cp.grow_threshold);
        std::shared_lock lock(project_mutex);
        return detect_changes(project.regions(a), project.regions(b), project.map(a).pixel_size_mm,
                              project.map(b).pixel_size_mm, cp);
    }

    // ---- jobs ----

    void job_export(const Request& req, Response& res) {
        const json body = parse_body(req);
        const std::string map_id = need_as<std::string>(body, "map");
        const auto map = open_map(map_id);
        const PixelRect area = body.contains("area") ? rect_from_json(body["area"], "/area")
                                                     : PixelRect{0, 0, map->width(), map->height()};
        const int tile = value_as<int>(body, "tile_size", 1024);
        const int stride = value_as<int>(body, "stride", tile);
        const SplitCriterion crit = criterion_from_json(body.value("criterion", json()));
        std::string name = value_as<std::string>(body, "name", "");
        require(name.find('/') == std::string::npos && name != "." && name != "..", "invalid dataset name");
        std::vector<Region> regions;
        ClassCatalog catalog;
        {
            std::shared_lock lock(project_mutex);
            regions = project.regions(map_id);
            catalog = project.catalog();
        }
        const std::string id = jobs->reserve_id();
        const fs::path out = project_dir / "datasets" / (name.empty() ? id : name);
        if (fs::exists(out))
            fail(ErrorKind::conflict, "dataset directory already exists: " + out.string());
        auto job = jobs->submit(
            id, JobKind::export_dataset,
            [map, regions, catalog, area, crit, tile, stride, out](const Progress& progress) {
                const TileDataset ds = export_dataset(*map, regions, catalog, area, crit, tile, stride, out, progress);
                return json{{"dataset", out.string()},
                            {"tiles", ds.tiles.size()},
                            {"counts",
                             {{"train", ds.count(Split::train)}, {"val", ds.count(Split::val)}, {"test", ds.count(Split::test)}}},
                            {"warnings", ds.warnings}};
            },
            [out] {
                std::error_code ec;
                fs::remove_all(out, ec);
            });
        send_json(res, job->to_json(), 202);
    }

    void job_train(const Request& req, Response& res) {
        const json body = parse_body(req);
        const fs::path dataset = resolve(need_as<std::string>(body, "dataset"));
        const Hyperparams hp = hyperparams_from_json(body.value("hyperparams", json()));
        require(hp.epochs > 0 && hp.learning_rate > 0 && hp.batch_tiles > 0, "hyperparameters must be positive");
        ModelBackend backend = config.model_backend;
        if (body.contains("backend"))
            backend = parse_model_backend(need_as<std::string>(body, "backend"));
        auto created = std::make_shared<fs::path>();
        auto job = jobs->submit(
            jobs->reserve_id(), JobKind::train,
            [this, dataset, hp, backend, created](const Progress& progress) {
                const TileDataset ds = load_dataset(dataset);
                Progress train_progress = progress;
                train_progress.report = [&progress](double f) { progress(0.9 * f); };
                TrainResult tr = train(ds, backend, hp, train_progress);
                progress.check();
                {
                    std::lock_guard lock(model_id_mutex);
                    tr.handle.id = store.new_id();
                    *created = store.dir(tr.handle.id);
                    store.save(tr.handle, *tr.model);
                }
                json result{{"model", tr.handle.id}, {"report", nullptr}};
                if (ds.count(Split::test) > 0) {
                    Progress eval_progress = progress;
                    eval_progress.report = [&progress](double f) { progress(0.9 + 0.1 * f); };
                    const EvalReport rep = evaluate(*tr.model, ds, *created / "predictions", eval_progress);
                    store.save_report(tr.handle.id, rep);
                    result["report"] = {{"miou", rep.miou}, {"accuracy", rep.accuracy}};
                }
                std::unique_lock lock(project_mutex);
                progress.check();
                project.add_model(tr.handle);
                commit_locked();
                return result;
            },
            [created] {
                std::error_code ec;
                if (!created->empty())
                    fs::remove_all(*created, ec);
            });
        send_json(res, job->to_json(), 202);
    }

    void job_infer(const Request& req, Response& res, bool preview_only) {
        const json body = parse_body(req);
        const std::string map_id = need_as<std::string>(body, "map");
        const std::string model_id = need_as<std::string>(body, "model");
        (void)store.handle(model_id);
        const auto map = open_map(map_id);
        const PixelRect full{0, 0, map->width(), map->height()};
        PixelRect area = body.contains("area") ? rect_from_json(body["area"], "/area") : full;
        InferenceConfig cfg;
        cfg.tile_size = value_as<int>(body, "tile_size", cfg.tile_size);
        cfg.stride = value_as<int>(body, "stride", cfg.stride);
        cfg.min_region_px = value_as<int>(body, "min_region_px", cfg.min_region_px);
        cfg.workers = config.inference_workers;
        const bool commit = !preview_only && value_as<bool>(body, "commit", true);
        ClassCatalog catalog;
        {
            std::shared_lock lock(project_mutex);
            catalog = project.catalog();
        }
        const std::string id = jobs->reserve_id();
        const fs::path out = project_dir / "predictions" / (id + ".png");
        auto job = jobs->submit(
            id, preview_only ? JobKind::preview : JobKind::infer,
            [this, map, map_id, model_id, area, full, cfg, commit, catalog, preview_only, out](const Progress& progress) {
                const auto model = store.load(model_id);
                fs::create_directories(out.parent_path());
                json result{{"label_png", out.string()}};
                if (preview_only) {
                    const LabelRaster labels = preview(*map, *model, area, cfg, progress);
                    png::write_rgb(out, colorize(labels, catalog));
                    result["area"] = rect_to_json(labels.rect());
                    return result;
                }
                require(!area.empty() && full.contains(area), "area must be a non-empty rectangle inside the map");
                result["area"] = rect_to_json(area);
                if (static_cast<std::int64_t>(area.w) * area.h > max_in_memory_pixels) {
                    infer_to_png(*map, *model, catalog, area, cfg, out, progress);
                    result["regions"] = nullptr;
                    return result;
                }
                InferenceResult ir = run_inference(*map, *model, catalog, area, cfg, progress);
                png::write_rgb(out, colorize(ir.raster, catalog));
                result["regions"] = ir.regions.size();
                if (commit && !ir.regions.empty()) {
                    std::unique_lock lock(project_mutex);
                    progress.check();
                    result["created"] = commit_regions(project, map_id, ir.regions);
                    commit_locked();
                }
                return result;
            },
            [out] {
                std::error_code ec;
                fs::remove(out, ec);
            });
        send_json(res, job->to_json(), 202);
    }
};

Service::Service(fs::path project_file, ServiceConfig config)
    : impl_(std::make_unique<Impl>(std::move(project_file), std::move(config))) {}

Service::~Service() {
    stop();
    impl_->jobs.reset();
}

int Service::bind() {
    if (impl_->bound_port >= 0)
        return impl_->bound_port;
    const int port = impl_->config.port == 0 ? impl_->server.bind_to_any_port(impl_->config.host)
                                              : (impl_->server.bind_to_port(impl_->config.host, impl_->config.port)
                                                     ? impl_->config.port
                                                     : -1);
    if (port < 0)
        fail(ErrorKind::io, "cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
    impl_->bound_port = port;
    return port;
}

void Service::run() {
    bind();
    impl_->server.listen_after_bind();
}

int Service::start() {
    const int port = bind();
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port;
}

void Service::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable())
        impl_->thread.join();
}

void Service::wait_for_jobs() { impl_->jobs->wait_idle(); }

std::uint64_t Service::revision() const {
    std::shared_lock lock(impl_->project_mutex);
    return impl_->revision;
}

} // namespace orthoseg
