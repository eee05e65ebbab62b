#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "orthoseg/analysis.hpp"
#include "orthoseg/click_segmenter.hpp"
#include "orthoseg/dataset.hpp"
#include "orthoseg/edit_tools.hpp"
#include "orthoseg/graphcut.hpp"
#include "orthoseg/inference.hpp"
#include "orthoseg/model.hpp"
#include "orthoseg/png_io.hpp"
#include "orthoseg/project.hpp"
#include "orthoseg/service.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace orthoseg;
using nlohmann::json;

namespace {

using Points = std::vector<std::pair<double, double>>;
using Rect = std::tuple<int, int, int, int>;

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& o) {
    return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::object region_py(const Region& r) { return to_py(region_to_json(r)); }

Region region_arg(const py::handle& o) {
    json j = from_py(o);
    require(j.is_object(), "region must be a dict");
    if (!j.contains("id"))
        j["id"] = 0;
    if (!j.contains("holes"))
        j["holes"] = json::array();
    if (!j.contains("provenance"))
        j["provenance"] = "manual";
    return region_from_json(j, "/");
}

py::list regions_py(const std::vector<Region>& rs) {
    py::list out;
    for (const auto& r : rs)
        out.append(region_py(r));
    return out;
}

std::vector<Point> points_arg(const Points& pts) {
    std::vector<Point> out;
    for (auto [x, y] : pts)
        out.push_back({x, y});
    return out;
}

PixelRect rect_arg(const Rect& r) { return {std::get<0>(r), std::get<1>(r), std::get<2>(r), std::get<3>(r)}; }

SegmenterBackend segmenter(const std::string& backend) { return parse_segmenter_backend(backend); }

py::array_t<std::uint8_t> mask_py(const Mask& m) {
    py::array_t<std::uint8_t> out({m.height(), m.width()});
    std::copy(m.bytes().begin(), m.bytes().end(), out.mutable_data());
    return out;
}

Mask mask_arg(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
    require(a.ndim() == 2, "mask must be a 2-D array");
    Mask m(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
    const std::uint8_t* p = a.data();
    for (std::size_t i = 0; i < m.bytes().size(); ++i)
        m.bytes()[i] = p[i] ? 1 : 0;
    return m;
}

std::vector<std::uint16_t> labels_arg(const py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>& a) {
    return {a.data(), a.data() + a.size()};
}

struct ProjectFile {
    fs::path file, dir;
    Project project;
    explicit ProjectFile(const fs::path& path)
        : file(fs::absolute(path)), dir(file.parent_path()), project(Project::load(file)) {}
    ModelStore models() const { return ModelStore(dir / "models"); }
};

void translate(const Error& e, PyObject* base, PyObject* invalid, PyObject* missing, PyObject* conflict,
               PyObject* contract, PyObject* cancelled) {
    switch (e.kind()) {
    case ErrorKind::invalid_argument: PyErr_SetString(invalid, e.what()); break;
    case ErrorKind::not_found: PyErr_SetString(missing, e.what()); break;
    case ErrorKind::conflict: PyErr_SetString(conflict, e.what()); break;
    case ErrorKind::contract_violation: PyErr_SetString(contract, e.what()); break;
    case ErrorKind::cancelled: PyErr_SetString(cancelled, e.what()); break;
    default: PyErr_SetString(base, e.what()); break;
    }
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Orthoimage annotation engine";

    static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
    static py::exception<Error> invalid(m, "InvalidArgument", base.ptr());
    static py::exception<Error> missing(m, "NotFound", base.ptr());
    static py::exception<Error> conflict(m, "Conflict", base.ptr());
    static py::exception<Error> contract(m, "ContractViolation", base.ptr());
    static py::exception<Error> cancelled(m, "Cancelled", base.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p)
                std::rethrow_exception(p);
        } catch (const Error& e) {
            translate(e, base.ptr(), invalid.ptr(), missing.ptr(), conflict.ptr(), contract.ptr(), cancelled.ptr());
        }
    });

    py::class_<OrthoMap>(m, "OrthoMap")
        .def_property_readonly("id", &OrthoMap::id)
        .def_property_readonly("width", &OrthoMap::width)
        .def_property_readonly("height", &OrthoMap::height)
        .def_property_readonly("levels", &OrthoMap::levels)
        .def_property_readonly("pixel_size_mm", &OrthoMap::pixel_size_mm)
        .def(
            "read_window",
            [](const OrthoMap& map, int x, int y, int w, int h, int level) {
                const RasterWindow win = map.read_window({x, y}, w, h, level);
                py::array_t<std::uint8_t> out({h, w, 3});
                std::copy(win.pixels.bytes().begin(), win.pixels.bytes().end(), out.mutable_data());
                return out;
            },
            py::arg("x"), py::arg("y"), py::arg("w"), py::arg("h"), py::arg("level") = 0,
            "RGB pixels of a window as an (h, w, 3) uint8 array");

    m.def(
        "open_orthomap",
        [](const fs::path& path, double pixel_size_mm, const std::string& id) {
            OpenOptions opt;
            opt.id = id;
            return open_orthomap(path, pixel_size_mm, opt);
        },
        py::arg("path"), py::arg("pixel_size_mm"), py::arg("id") = "");

    // Region geometry. Regions are dicts with id, class_index, provenance, outer and holes.
    m.def(
        "rasterize", [](const py::dict& region, const Rect& rect) { return mask_py(rasterize(region_arg(region), rect_arg(rect))); },
        py::arg("region"), py::arg("rect"));
    m.def(
        "vectorize",
        [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& mask, std::pair<int, int> origin,
           int class_index, int min_area_px) {
            VectorizeOptions opt;
            opt.min_area_px = min_area_px;
            opt.class_index = static_cast<std::uint16_t>(class_index);
            return regions_py(vectorize(mask_arg(mask), {origin.first, origin.second}, opt));
        },
        py::arg("mask"), py::arg("origin") = std::pair<int, int>{0, 0}, py::arg("class_index") = 1,
        py::arg("min_area_px") = 0);
    m.def(
        "region_stats",
        [](const py::dict& region, double pixel_size_mm) {
            const RegionStats s = compute_stats(region_arg(region), pixel_size_mm);
            py::dict d;
            d["area_px"] = s.area_px;
            d["area_mm2"] = s.area_mm2;
            d["perimeter_px"] = s.perimeter_px;
            d["perimeter_mm"] = s.perimeter_mm;
            d["centroid"] = py::make_tuple(s.centroid.x, s.centroid.y);
            d["bbox"] = py::make_tuple(s.bbox.x, s.bbox.y, s.bbox.w, s.bbox.h);
            return d;
        },
        py::arg("region"), py::arg("pixel_size_mm") = 1.0);

    // Editing tools.
    m.def(
        "freehand_close",
        [](const Points& pts, int class_index) {
            return region_py(freehand_close(Sketch{points_arg(pts)}, static_cast<std::uint16_t>(class_index)));
        },
        py::arg("points"), py::arg("class_index"));
    m.def(
        "cut", [](const py::dict& region, const Points& pts) { return regions_py(cut(region_arg(region), Sketch{points_arg(pts)})); },
        py::arg("region"), py::arg("points"));
    m.def(
        "edit_border",
        [](const py::dict& region, const Points& pts) { return region_py(edit_border(region_arg(region), Sketch{points_arg(pts)})); },
        py::arg("region"), py::arg("points"));
    m.def(
        "refine",
        [](const OrthoMap& map, const py::dict& region, int band_width, double lambda, int hist_bins) {
            RefineParams p;
            p.band_width = band_width;
            p.lambda = lambda;
            p.hist_bins = hist_bins;
            const Region r = region_arg(region);
            Region out;
            {
                py::gil_scoped_release release;
                out = refine_on_map(map, r, p);
            }
            return region_py(out);
        },
        py::arg("map"), py::arg("region"), py::arg("band_width") = 30, py::arg("lam") = 50.0, py::arg("hist_bins") = 16);
    m.def(
        "extreme_click",
        [](const OrthoMap& map, const Points& pts, int class_index, const std::string& backend) {
            const auto p = points_arg(pts);
            require(p.size() == 4, "extreme_click needs exactly four points");
            return region_py(
                extreme_click_region(map, ExtremeClicks{{p[0], p[1], p[2], p[3]}}, static_cast<std::uint16_t>(class_index),
                                     segmenter(backend)));
        },
        py::arg("map"), py::arg("points"), py::arg("class_index"), py::arg("backend") = "builtin");
    m.def(
        "posneg_click",
        [](const OrthoMap& map, const Points& positives, const Points& negatives, int class_index,
           const std::optional<py::dict>& prior, const std::string& backend) {
            std::optional<Region> pr;
            if (prior)
                pr = region_arg(*prior);
            return regions_py(click_regions(map, points_arg(positives), points_arg(negatives), pr,
                                            static_cast<std::uint16_t>(class_index), segmenter(backend)));
        },
        py::arg("map"), py::arg("positives"), py::arg("negatives") = Points{}, py::arg("class_index") = 1,
        py::arg("prior") = py::none(), py::arg("backend") = "builtin");

    // Projects.
    py::class_<Project>(m, "Project")
        .def_static("load", &Project::load, py::arg("path"))
        .def("save", &Project::save, py::arg("path"))
        .def_property_readonly("classes",
                               [](const Project& p) {
                                   py::list out;
                                   for (const auto& c : p.catalog().entries())
                                       out.append(py::make_tuple(c.name, py::make_tuple(c.color.r, c.color.g, c.color.b)));
                                   return out;
                               })
        .def_property_readonly("maps",
                               [](const Project& p) {
                                   py::list out;
                                   for (const auto& r : p.maps())
                                       out.append(r.id);
                                   return out;
                               })
        .def("regions", [](const Project& p, const std::string& map) { return regions_py(p.regions(map)); }, py::arg("map"))
        .def("region", [](const Project& p, std::int64_t id) { return region_py(p.region(id)); }, py::arg("id"))
        .def_property_readonly("region_count", &Project::region_count)
        .def_property_readonly("undo_depth", &Project::undo_depth)
        .def(
            "apply",
            [](Project& p, const py::list& ops) {
                Transaction tx;
                for (const auto& o : ops) {
                    const json j = from_py(o);
                    const std::string op = j.at("op").get<std::string>();
                    if (op == "create")
                        tx.push_back(RegionOp::create(j.at("map").get<std::string>(), region_arg(o["region"])));
                    else if (op == "remove")
                        tx.push_back(RegionOp::remove(j.at("id").get<std::int64_t>()));
                    else if (op == "replace")
                        tx.push_back(RegionOp::replace(j.at("id").get<std::int64_t>(), region_arg(o["region"])));
                    else
                        fail(ErrorKind::invalid_argument, "unknown op '" + op + "'");
                }
                return p.apply(tx);
            },
            py::arg("ops"), "Applies a list of {'op': 'create'|'remove'|'replace', ...} atomically; returns created ids")
        .def("undo", &Project::undo)
        .def("to_json", [](const Project& p) { return to_py(p.to_json()); });

    m.def(
        "new_project",
        [](const std::vector<std::pair<std::string, std::tuple<int, int, int>>>& classes) {
            Project p;
            for (const auto& [name, c] : classes)
                p.add_class(name, {static_cast<std::uint8_t>(std::get<0>(c)), static_cast<std::uint8_t>(std::get<1>(c)),
                                   static_cast<std::uint8_t>(std::get<2>(c))});
            return p;
        },
        py::arg("classes"));
    m.def(
        "add_map",
        [](Project& p, const fs::path& image, double pixel_size_mm, const std::string& id, const fs::path& project_dir) {
            OpenOptions opt;
            opt.id = id.empty() ? image.stem().string() : id;
            const OrthoMap map = open_orthomap(image, pixel_size_mm, opt);
            p.add_map({map.id(), fs::absolute(image).string(), pixel_size_mm, "", json::object()}, project_dir);
            return map;
        },
        py::arg("project"), py::arg("image"), py::arg("pixel_size_mm"), py::arg("id") = "",
        py::arg("project_dir") = fs::path{});

    // Pipeline operations on a project file.
    m.def(
        "export_dataset",
        [](const fs::path& project, const std::string& map_id, const fs::path& out, std::optional<Rect> area, int tile,
           std::optional<int> stride, const std::string& split, std::uint64_t seed, const std::string& axis) {
            py::gil_scoped_release release;
            ProjectFile pf(project);
            const OrthoMap map = pf.project.open_map(map_id, pf.dir);
            SplitCriterion crit;
            require(split == "random" || split == "spatial-bands", "split must be 'random' or 'spatial-bands'");
            require(axis == "x" || axis == "y", "axis must be 'x' or 'y'");
            crit.kind = split == "random" ? SplitKind::random : SplitKind::spatial_bands;
            crit.seed = seed;
            crit.axis = axis == "x" ? Axis::x : Axis::y;
            const PixelRect a = area ? rect_arg(*area) : PixelRect{0, 0, map.width(), map.height()};
            const TileDataset ds = export_dataset(map, pf.project.regions(map_id), pf.project.catalog(), a, crit, tile,
                                                  stride.value_or(tile), out);
            return std::make_tuple(ds.count(Split::train), ds.count(Split::val), ds.count(Split::test));
        },
        py::arg("project"), py::arg("map"), py::arg("out"), py::arg("area") = py::none(), py::arg("tile") = 1024,
        py::arg("stride") = py::none(), py::arg("split") = "random", py::arg("seed") = 42, py::arg("axis") = "x",
        "Tiles a map area into a dataset; returns (train, val, test) tile counts");
    m.def(
        "train",
        [](const fs::path& project, const fs::path& dataset, int epochs, double learning_rate, int batch_tiles,
           std::uint64_t seed, const std::string& backend) {
            py::gil_scoped_release release;
            ProjectFile pf(project);
            const TileDataset ds = load_dataset(dataset);
            TrainResult tr = train(ds, parse_model_backend(backend), Hyperparams{epochs, learning_rate, batch_tiles, seed});
            ModelStore store = pf.models();
            tr.handle.id = store.new_id();
            store.save(tr.handle, *tr.model);
            if (ds.count(Split::test) > 0)
                store.save_report(tr.handle.id, evaluate(*tr.model, ds, store.dir(tr.handle.id) / "predictions"));
            pf.project.add_model(tr.handle);
            pf.project.save(pf.file);
            return tr.handle.id;
        },
        py::arg("project"), py::arg("dataset"), py::arg("epochs") = 20, py::arg("learning_rate") = 0.01,
        py::arg("batch_tiles") = 8, py::arg("seed") = 1234, py::arg("backend") = "builtin",
        "Trains a model, evaluates it on the test split and records it; returns the model id");
    m.def(
        "evaluate",
        [](const fs::path& project, const std::string& model, std::optional<fs::path> dataset) {
            json report;
            {
                py::gil_scoped_release release;
                ProjectFile pf(project);
                ModelStore store = pf.models();
                const ModelHandle h = store.handle(model);
                const TileDataset ds = load_dataset(dataset ? *dataset : fs::path(h.dataset));
                const EvalReport r = evaluate(*store.load(model), ds, store.dir(model) / "predictions");
                store.save_report(model, r);
                report = to_json(r);
            }
            return to_py(report);
        },
        py::arg("project"), py::arg("model"), py::arg("dataset") = py::none());
    m.def(
        "infer",
        [](const fs::path& project, const std::string& map_id, const std::string& model, const fs::path& out,
           std::optional<Rect> area, int tile, int stride, bool commit) {
            py::gil_scoped_release release;
            ProjectFile pf(project);
            const OrthoMap map = pf.project.open_map(map_id, pf.dir);
            const PixelRect a = area ? rect_arg(*area) : PixelRect{0, 0, map.width(), map.height()};
            const auto classifier = pf.models().load(model);
            InferenceConfig cfg;
            cfg.tile_size = tile;
            cfg.stride = stride;
            if (static_cast<std::int64_t>(a.w) * a.h > max_in_memory_pixels) {
                require(!commit, "commit needs an area of at most 8192x8192 pixels");
                infer_to_png(map, *classifier, pf.project.catalog(), a, cfg, out);
                return std::size_t{0};
            }
            const InferenceResult r = run_inference(map, *classifier, pf.project.catalog(), a, cfg);
            png::write_rgb(out, colorize(r.raster, pf.project.catalog()));
            if (commit && !r.regions.empty()) {
                commit_regions(pf.project, map_id, r.regions);
                pf.project.save(pf.file);
            }
            return r.regions.size();
        },
        py::arg("project"), py::arg("map"), py::arg("model"), py::arg("out"), py::arg("area") = py::none(),
        py::arg("tile") = 1024, py::arg("stride") = 512, py::arg("commit") = false,
        "Runs tiled inference, writes a colour-coded label PNG and returns the number of regions");

    // Metrics and analysis.
    m.def(
        "metrics",
        [](const py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>& gt,
           const py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>& pred, std::size_t classes) {
            require(gt.size() == pred.size(), "ground truth and prediction sizes differ");
            std::vector<std::vector<std::uint64_t>> confusion(classes, std::vector<std::uint64_t>(classes, 0));
            accumulate_confusion(labels_arg(gt), labels_arg(pred), confusion);
            return to_py(to_json(report_from_confusion(std::move(confusion))));
        },
        py::arg("ground_truth"), py::arg("prediction"), py::arg("classes"));
    m.def(
        "coverage",
        [](const fs::path& project, const std::string& map_id, std::optional<Rect> area) {
            ProjectFile pf(project);
            const OrthoMap map = pf.project.open_map(map_id, pf.dir);
            const PixelRect a = area ? rect_arg(*area) : PixelRect{0, 0, map.width(), map.height()};
            return to_py(to_json(coverage(pf.project.regions(map_id), pf.project.catalog(), a, map.pixel_size_mm())));
        },
        py::arg("project"), py::arg("map"), py::arg("area") = py::none());
    m.def(
        "detect_changes",
        [](const fs::path& project, const std::string& a, const std::string& b, double iou_threshold, double grow_threshold) {
            ProjectFile pf(project);
            const auto records = detect_changes(pf.project.regions(a), pf.project.regions(b), pf.project.map(a).pixel_size_mm,
                                                pf.project.map(b).pixel_size_mm, {iou_threshold, grow_threshold});
            json out = json::array();
            for (const auto& r : records)
                out.push_back(to_json(r));
            return to_py(out);
        },
        py::arg("project"), py::arg("map_a"), py::arg("map_b"), py::arg("iou_threshold") = 0.25,
        py::arg("grow_threshold") = 0.05);

    // HTTP service.
    py::class_<Service>(m, "Service")
        .def(py::init([](const fs::path& project, int port, int jobs, const std::string& host) {
                 ServiceConfig cfg = ServiceConfig::load(std::nullopt);
                 cfg.port = port;
                 cfg.jobs = jobs;
                 cfg.host = host;
                 return std::make_unique<Service>(project, cfg);
             }),
             py::arg("project"), py::arg("port") = 0, py::arg("jobs") = 2, py::arg("host") = "127.0.0.1")
        .def("start", &Service::start, "Serves on a background thread; returns the bound port")
        .def("stop", &Service::stop, py::call_guard<py::gil_scoped_release>())
        .def("wait_for_jobs", &Service::wait_for_jobs, py::call_guard<py::gil_scoped_release>())
        .def_property_readonly("revision", &Service::revision);
}
