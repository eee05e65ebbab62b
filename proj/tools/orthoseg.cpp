#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthoseg/analysis.hpp"
#include "orthoseg/dataset.hpp"
#include "orthoseg/inference.hpp"
#include "orthoseg/model.hpp"
#include "orthoseg/png_io.hpp"
#include "orthoseg/project.hpp"
#include "orthoseg/service.hpp"

using namespace orthoseg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, sep))
        out.push_back(part);
    return out;
}

PixelRect parse_area(const std::string& s) {
    const auto parts = split(s, ',');
    require(parts.size() == 4, "area must be x,y,w,h");
    try {
        return {std::stoi(parts[0]), std::stoi(parts[1]), std::stoi(parts[2]), std::stoi(parts[3])};
    } catch (const std::exception&) {
        fail(ErrorKind::invalid_argument, "area must be x,y,w,h with integers");
    }
}

Rgb8 parse_color(const std::string& s) {
    const auto parts = split(s, ',');
    require(parts.size() == 3, "colour must be r,g,b");
    Rgb8 c;
    std::uint8_t* ch[3] = {&c.r, &c.g, &c.b};
    for (int i = 0; i < 3; ++i) {
        int v = -1;
        try {
            v = std::stoi(parts[static_cast<std::size_t>(i)]);
        } catch (const std::exception&) {
        }
        require(v >= 0 && v <= 255, "colour channels must be integers in 0..255");
        *ch[i] = static_cast<std::uint8_t>(v);
    }
    return c;
}

// Prints coarse progress to stderr.
Progress console_progress(const std::string& label) {
    auto last = std::make_shared<int>(-1);
    Progress p;
    p.report = [label, last](double f) {
        const int pct = static_cast<int>(f * 100);
        if (pct / 10 != *last / 10) {
            *last = pct;
            std::cerr << label << ": " << pct << "%\n";
        }
    };
    return p;
}

struct ProjectFile {
    fs::path file, dir;
    Project project;

    explicit ProjectFile(const std::string& path)
        : file(fs::absolute(path)), dir(file.parent_path()), project(Project::load(file)) {}
    ModelStore models() const { return ModelStore(dir / "models"); }
    void save() const { project.save(file); }
    PixelRect area_or_full(const std::string& area, const OrthoMap& map) const {
        return area.empty() ? PixelRect{0, 0, map.width(), map.height()} : parse_area(area);
    }
};

int exit_code(ErrorKind k) {
    switch (k) {
    case ErrorKind::invalid_argument: return 2;
    case ErrorKind::not_found: return 3;
    case ErrorKind::conflict: return 4;
    case ErrorKind::contract_violation: return 5;
    case ErrorKind::cancelled: return 6;
    case ErrorKind::io:
    case ErrorKind::internal: return 1;
    }
    return 1;
}

Service* running_service = nullptr;

extern "C" void on_signal(int) {
    if (running_service)
        running_service->stop();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Orthoimage annotation engine"};
    app.require_subcommand(1);
    std::string project_path = "project.json";

    // init
    auto* init = app.add_subcommand("init", "Create an empty project");
    std::vector<std::string> init_classes;
    init->add_option("--project", project_path, "Project file to create")->required();
    init->add_option("--class", init_classes, "Class as name:r,g,b (repeatable)");

    // add-class
    auto* add_class = app.add_subcommand("add-class", "Append a class to the catalog");
    std::string class_name, class_color;
    add_class->add_option("--project", project_path)->required();
    add_class->add_option("--name", class_name)->required();
    add_class->add_option("--color", class_color, "r,g,b")->required();

    // add-map
    auto* add_map = app.add_subcommand("add-map", "Register an orthoimage and build its pyramid");
    std::string map_image, map_id, map_date;
    double map_px_mm = 0;
    add_map->add_option("--project", project_path)->required();
    add_map->add_option("--image", map_image, "PNG orthoimage")->required()->check(CLI::ExistingFile);
    add_map->add_option("--pixel-size", map_px_mm, "Ground sampling distance in mm")->required();
    add_map->add_option("--id", map_id, "Map id (default: file stem)");
    add_map->add_option("--date", map_date, "Acquisition date yyyy-mm-dd");

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    std::optional<int> serve_port, serve_jobs;
    std::optional<std::string> serve_host, serve_config;
    serve->add_option("--project", project_path)->required();
    serve->add_option("--port", serve_port, "Port (0 picks a free port)");
    serve->add_option("--host", serve_host);
    serve->add_option("--jobs", serve_jobs, "Parallel jobs");
    serve->add_option("--config", serve_config, "JSON config file");

    // export-dataset
    auto* exp = app.add_subcommand("export-dataset", "Tile a working area into a training dataset");
    std::string exp_map, exp_area, exp_out, exp_split = "random", exp_axis = "x", exp_fractions;
    int exp_tile = 1024;
    std::optional<int> exp_stride;
    std::uint64_t exp_seed = 42;
    exp->add_option("--project", project_path)->required();
    exp->add_option("--map", exp_map)->required();
    exp->add_option("--area", exp_area, "x,y,w,h (default: whole map)");
    exp->add_option("--tile", exp_tile);
    exp->add_option("--stride", exp_stride, "default: tile size");
    exp->add_option("--split", exp_split)->check(CLI::IsMember({"random", "spatial-bands"}));
    exp->add_option("--seed", exp_seed);
    exp->add_option("--axis", exp_axis)->check(CLI::IsMember({"x", "y"}));
    exp->add_option("--fractions", exp_fractions, "train,val,test (default 0.7,0.15,0.15)");
    exp->add_option("--out", exp_out)->required();

    // merge-datasets
    auto* merge = app.add_subcommand("merge-datasets", "Merge two datasets at a common pixel size");
    std::string merge_a, merge_b, merge_out;
    double merge_px = 0;
    merge->add_option("--a", merge_a)->required();
    merge->add_option("--b", merge_b)->required();
    merge->add_option("--pixel-size", merge_px)->required();
    merge->add_option("--out", merge_out)->required();

    // train
    auto* trn = app.add_subcommand("train", "Train a model on a dataset");
    std::string trn_dataset, trn_backend = "builtin";
    Hyperparams hp;
    trn->add_option("--project", project_path)->required();
    trn->add_option("--dataset", trn_dataset)->required();
    trn->add_option("--epochs", hp.epochs);
    trn->add_option("--learning-rate", hp.learning_rate);
    trn->add_option("--batch-tiles", hp.batch_tiles);
    trn->add_option("--seed", hp.seed);
    trn->add_option("--backend", trn_backend, "builtin or an http:// endpoint");

    // evaluate
    auto* evl = app.add_subcommand("evaluate", "Evaluate a model on a dataset's test split");
    std::string evl_model, evl_dataset;
    evl->add_option("--project", project_path)->required();
    evl->add_option("--model", evl_model)->required();
    evl->add_option("--dataset", evl_dataset, "default: the training dataset");

    // infer
    auto* inf = app.add_subcommand("infer", "Run tiled inference over a map area");
    std::string inf_map, inf_model, inf_area, inf_out;
    InferenceConfig icfg;
    bool inf_commit = false;
    inf->add_option("--project", project_path)->required();
    inf->add_option("--map", inf_map)->required();
    inf->add_option("--model", inf_model)->required();
    inf->add_option("--area", inf_area, "x,y,w,h (default: whole map)");
    inf->add_option("--tile", icfg.tile_size);
    inf->add_option("--stride", icfg.stride);
    inf->add_option("--min-region", icfg.min_region_px);
    inf->add_option("--workers", icfg.workers, "0 = hardware concurrency");
    inf->add_option("--out", inf_out, "Colour-coded label PNG")->required();
    inf->add_flag("--commit", inf_commit, "Add the predicted regions to the project");

    // changes
    auto* chg = app.add_subcommand("changes", "Compare the regions of two surveys");
    std::string chg_a, chg_b, chg_out;
    ChangeParams cparams;
    chg->add_option("--project", project_path)->required();
    chg->add_option("--map-a", chg_a)->required();
    chg->add_option("--map-b", chg_b)->required();
    chg->add_option("--iou", cparams.iou_threshold);
    chg->add_option("--grow", cparams.grow_threshold);
    chg->add_option("--out", chg_out, "CSV file (default: stdout)");

    // coverage
    auto* cov = app.add_subcommand("coverage", "Per-class area statistics");
    std::string cov_map, cov_area, cov_out;
    cov->add_option("--project", project_path)->required();
    cov->add_option("--map", cov_map)->required();
    cov->add_option("--area", cov_area);
    cov->add_option("--out", cov_out, "CSV file (default: stdout)");

    // import / export
    auto* imp_labels = app.add_subcommand("import-labelmap", "Import a colour-coded label map as regions");
    std::string il_map, il_path, il_area;
    bool il_lenient = false;
    imp_labels->add_option("--project", project_path)->required();
    imp_labels->add_option("--map", il_map)->required();
    imp_labels->add_option("--labels", il_path)->required()->check(CLI::ExistingFile);
    imp_labels->add_option("--area", il_area, "Placement x,y,w,h (default: whole map)");
    imp_labels->add_flag("--lenient", il_lenient, "Map unknown colours to unlabeled instead of failing");

    auto* imp_vec = app.add_subcommand("import-vector", "Import GeoJSON polygons");
    std::string iv_map, iv_path;
    imp_vec->add_option("--project", project_path)->required();
    imp_vec->add_option("--map", iv_map)->required();
    imp_vec->add_option("--geojson", iv_path)->required()->check(CLI::ExistingFile);

    auto* exp_labels = app.add_subcommand("export-labelmap", "Export regions as a colour-coded label map");
    std::string el_map, el_area, el_out;
    exp_labels->add_option("--project", project_path)->required();
    exp_labels->add_option("--map", el_map)->required();
    exp_labels->add_option("--area", el_area);
    exp_labels->add_option("--out", el_out)->required();

    auto* exp_vec = app.add_subcommand("export-vector", "Export regions as GeoJSON");
    std::string ev_map, ev_out;
    exp_vec->add_option("--project", project_path)->required();
    exp_vec->add_option("--map", ev_map)->required();
    exp_vec->add_option("--out", ev_out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*init) {
            require(!fs::exists(project_path), "project file already exists: " + project_path);
            Project p;
            for (const auto& c : init_classes) {
                const auto pos = c.find(':');
                require(pos != std::string::npos, "class must be name:r,g,b");
                p.add_class(c.substr(0, pos), parse_color(c.substr(pos + 1)));
            }
            p.save(project_path);
        } else if (*add_class) {
            ProjectFile pf(project_path);
            std::cout << pf.project.add_class(class_name, parse_color(class_color)) << "\n";
            pf.save();
        } else if (*add_map) {
            ProjectFile pf(project_path);
            OpenOptions opt;
            opt.id = map_id.empty() ? fs::path(map_image).stem().string() : map_id;
            opt.acquisition_date = map_date;
            const OrthoMap m = open_orthomap(map_image, map_px_mm, opt);
            pf.project.add_map({m.id(), fs::absolute(map_image).string(), map_px_mm, map_date, json::object()}, pf.dir);
            pf.save();
            std::cout << m.id() << " " << m.width() << "x" << m.height() << " levels=" << m.levels() << "\n";
        } else if (*serve) {
            ServiceConfig cfg = ServiceConfig::load(serve_config ? std::optional<fs::path>(*serve_config) : std::nullopt);
            if (serve_port)
                cfg.port = *serve_port;
            if (serve_host)
                cfg.host = *serve_host;
            if (serve_jobs)
                cfg.jobs = *serve_jobs;
            Service svc(project_path, cfg);
            const int port = svc.bind();
            std::cout << "listening on http://" << cfg.host << ":" << port << std::endl;
            running_service = &svc;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            svc.run();
            running_service = nullptr;
        } else if (*exp) {
            ProjectFile pf(project_path);
            const OrthoMap map = pf.project.open_map(exp_map, pf.dir);
            SplitCriterion crit;
            crit.kind = exp_split == "random" ? SplitKind::random : SplitKind::spatial_bands;
            crit.seed = exp_seed;
            crit.axis = exp_axis == "x" ? Axis::x : Axis::y;
            if (!exp_fractions.empty()) {
                const auto f = split(exp_fractions, ',');
                require(f.size() == 3, "fractions must be train,val,test");
                crit.fractions = {std::stod(f[0]), std::stod(f[1]), std::stod(f[2])};
            }
            const TileDataset ds =
                export_dataset(map, pf.project.regions(exp_map), pf.project.catalog(), pf.area_or_full(exp_area, map), crit,
                               exp_tile, exp_stride.value_or(exp_tile), exp_out, console_progress("export"));
            for (const auto& w : ds.warnings)
                std::cerr << "warning: " << w << "\n";
            std::cout << ds.tiles.size() << " tiles (train " << ds.count(Split::train) << ", val "
                      << ds.count(Split::val) << ", test " << ds.count(Split::test) << ")\n";
        } else if (*merge) {
            const TileDataset ds = merge_datasets(load_dataset(merge_a), load_dataset(merge_b), merge_px, merge_out);
            std::cout << ds.tiles.size() << " tiles\n";
        } else if (*trn) {
            ProjectFile pf(project_path);
            const TileDataset ds = load_dataset(trn_dataset);
            TrainResult tr = train(ds, parse_model_backend(trn_backend), hp, console_progress("train"));
            ModelStore store = pf.models();
            tr.handle.id = store.new_id();
            store.save(tr.handle, *tr.model);
            if (ds.count(Split::test) > 0) {
                const EvalReport rep = evaluate(*tr.model, ds, store.dir(tr.handle.id) / "predictions");
                store.save_report(tr.handle.id, rep);
                std::printf("test accuracy %.4f mIoU %.4f\n", rep.accuracy, rep.miou);
            }
            pf.project.add_model(tr.handle);
            pf.save();
            std::cout << tr.handle.id << "\n";
        } else if (*evl) {
            ProjectFile pf(project_path);
            ModelStore store = pf.models();
            const ModelHandle h = store.handle(evl_model);
            const TileDataset ds = load_dataset(evl_dataset.empty() ? h.dataset : evl_dataset);
            const EvalReport rep =
                evaluate(*store.load(evl_model), ds, store.dir(evl_model) / "predictions", console_progress("evaluate"));
            store.save_report(evl_model, rep);
            std::cout << to_json(rep).dump(2) << "\n";
        } else if (*inf) {
            ProjectFile pf(project_path);
            const OrthoMap map = pf.project.open_map(inf_map, pf.dir);
            const PixelRect area = pf.area_or_full(inf_area, map);
            const auto model = pf.models().load(inf_model);
            if (static_cast<std::int64_t>(area.w) * area.h > max_in_memory_pixels) {
                require(!inf_commit, "--commit needs an area of at most 8192x8192 pixels");
                infer_to_png(map, *model, pf.project.catalog(), area, icfg, inf_out, console_progress("infer"));
                std::cout << "wrote " << inf_out << "\n";
            } else {
                const InferenceResult r =
                    run_inference(map, *model, pf.project.catalog(), area, icfg, console_progress("infer"));
                png::write_rgb(inf_out, colorize(r.raster, pf.project.catalog()));
                if (inf_commit && !r.regions.empty()) {
                    commit_regions(pf.project, inf_map, r.regions);
                    pf.save();
                }
                std::cout << r.regions.size() << " regions\n";
            }
        } else if (*chg) {
            ProjectFile pf(project_path);
            const auto records = detect_changes(pf.project.regions(chg_a), pf.project.regions(chg_b),
                                                pf.project.map(chg_a).pixel_size_mm, pf.project.map(chg_b).pixel_size_mm,
                                                cparams);
            const std::string csv = changes_csv(records);
            if (chg_out.empty())
                std::cout << csv;
            else
                write_csv(csv, chg_out);
        } else if (*cov) {
            ProjectFile pf(project_path);
            const MapRecord& rec = pf.project.map(cov_map);
            const OrthoMap map = pf.project.open_map(cov_map, pf.dir);
            const std::string csv = coverage_csv(
                coverage(pf.project.regions(cov_map), pf.project.catalog(), pf.area_or_full(cov_area, map), rec.pixel_size_mm));
            if (cov_out.empty())
                std::cout << csv;
            else
                write_csv(csv, cov_out);
        } else if (*imp_labels) {
            ProjectFile pf(project_path);
            const OrthoMap map = pf.project.open_map(il_map, pf.dir);
            const LabelImport imp = import_labelmap(il_path, pf.project.catalog(), pf.area_or_full(il_area, map), !il_lenient);
            for (const auto& [c, n] : imp.unmatched)
                std::cerr << "warning: colour " << format_rgb(c) << " (" << n << " px) has no class\n";
            auto regions = regions_from_labels(imp.raster, pf.project.catalog().size(), 0);
            for (auto& r : regions)
                r.provenance = Provenance::imported;
            if (!regions.empty()) {
                commit_regions(pf.project, il_map, regions);
                pf.save();
            }
            std::cout << regions.size() << " regions\n";
        } else if (*imp_vec) {
            ProjectFile pf(project_path);
            (void)pf.project.map(iv_map);
            const auto regions = import_vector(iv_path, pf.project.catalog());
            if (!regions.empty()) {
                commit_regions(pf.project, iv_map, regions);
                pf.save();
            }
            std::cout << regions.size() << " regions\n";
        } else if (*exp_labels) {
            ProjectFile pf(project_path);
            const OrthoMap map = pf.project.open_map(el_map, pf.dir);
            const PixelRect area = pf.area_or_full(el_area, map);
            require(static_cast<std::int64_t>(area.w) * area.h <= max_in_memory_pixels,
                    "label map export is limited to 8192x8192 pixels; pass --area");
            export_labelmap(render_labels(pf.project.regions(el_map), area), pf.project.catalog(), el_out);
        } else if (*exp_vec) {
            ProjectFile pf(project_path);
            export_vector(pf.project.regions(ev_map), pf.project.catalog(), ev_out);
        }
    } catch (const Error& e) {
        std::cerr << "orthoseg: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "orthoseg: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
