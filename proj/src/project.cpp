#include "orthoseg/project.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json_util.hpp"

namespace orthoseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double q3(double v) { return std::round(v * 1000.0) / 1000.0; }

[[noreturn]] void schema_error(const std::string& where, const std::string& what) {
    fail(ErrorKind::invalid_argument, "schema error at " + (where.empty() ? std::string("/") : where) + ": " + what);
}

const json& field(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object())
        schema_error(where, "expected an object");
    const auto it = obj.find(key);
    if (it == obj.end())
        schema_error(where + "/" + key, "missing field");
    return *it;
}

std::string get_string(const json& obj, const char* key, const std::string& where) {
    const json& v = field(obj, key, where);
    if (!v.is_string())
        schema_error(where + "/" + key, "expected a string");
    return v.get<std::string>();
}

double get_number(const json& obj, const char* key, const std::string& where) {
    const json& v = field(obj, key, where);
    if (!v.is_number() || !std::isfinite(v.get<double>()))
        schema_error(where + "/" + key, "expected a finite number");
    return v.get<double>();
}

std::int64_t get_int(const json& obj, const char* key, const std::string& where) {
    const json& v = field(obj, key, where);
    if (!v.is_number_integer())
        schema_error(where + "/" + key, "expected an integer");
    return v.get<std::int64_t>();
}

json extras_of(const json& obj, std::initializer_list<const char*> known) {
    json out = json::object();
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; }))
            out[it.key()] = it.value();
    return out;
}

json ring_to_json(const Ring& ring) {
    json out = json::array();
    for (const auto& p : ring)
        out.push_back(json::array({q3(p.x), q3(p.y)}));
    return out;
}

Ring ring_from_json(const json& j, const std::string& where) {
    if (!j.is_array())
        schema_error(where, "expected an array of [x, y] pairs");
    Ring ring;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const json& p = j[i];
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
            schema_error(where + "/" + std::to_string(i), "expected an [x, y] pair of numbers");
        ring.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    return ring;
}

const std::vector<Region> no_regions;

} // namespace

Region quantize(Region r) {
    for (auto& p : r.outer)
        p = {q3(p.x), q3(p.y)};
    for (auto& h : r.holes)
        for (auto& p : h)
            p = {q3(p.x), q3(p.y)};
    r.cached_stats.reset();
    return r;
}

json region_to_json(const Region& r) {
    json holes = json::array();
    for (const auto& h : r.holes)
        holes.push_back(ring_to_json(h));
    return json{{"id", r.id},
                {"class_index", r.class_index},
                {"provenance", to_string(r.provenance)},
                {"outer", ring_to_json(r.outer)},
                {"holes", holes}};
}

Region region_from_json(const json& j, const std::string& where) {
    Region r;
    r.id = get_int(j, "id", where);
    const std::int64_t cls = get_int(j, "class_index", where);
    if (cls < 0 || cls > 0xFFFF)
        schema_error(where + "/class_index", "out of range");
    r.class_index = static_cast<std::uint16_t>(cls);
    if (j.contains("provenance")) {
        try {
            r.provenance = provenance_from_string(get_string(j, "provenance", where));
        } catch (const Error& e) {
            schema_error(where + "/provenance", e.what());
        }
    }
    r.outer = ring_from_json(field(j, "outer", where), where + "/outer");
    if (j.contains("holes")) {
        const json& holes = j["holes"];
        if (!holes.is_array())
            schema_error(where + "/holes", "expected an array of rings");
        for (std::size_t i = 0; i < holes.size(); ++i)
            r.holes.push_back(ring_from_json(holes[i], where + "/holes/" + std::to_string(i)));
    }
    return r;
}

// --- Project ----------------------------------------------------------------

const MapRecord& Project::map(const std::string& id) const {
    for (const auto& m : maps_)
        if (m.id == id)
            return m;
    fail(ErrorKind::not_found, "unknown map '" + id + "'");
}

bool Project::has_map(const std::string& id) const {
    return std::any_of(maps_.begin(), maps_.end(), [&](const MapRecord& m) { return m.id == id; });
}

const std::vector<Region>& Project::regions(const std::string& map_id) const {
    (void)map(map_id);
    const auto it = regions_.find(map_id);
    return it == regions_.end() ? no_regions : it->second;
}

const std::string& Project::map_of(std::int64_t id) const {
    for (const auto& [m, rs] : regions_)
        for (const auto& r : rs)
            if (r.id == id)
                return m;
    fail(ErrorKind::not_found, "unknown region " + std::to_string(id));
}

const Region& Project::region(std::int64_t id) const {
    for (const auto& r : regions_.at(map_of(id)))
        if (r.id == id)
            return r;
    fail(ErrorKind::not_found, "unknown region " + std::to_string(id));
}

std::size_t Project::region_count() const {
    std::size_t n = 0;
    for (const auto& [m, rs] : regions_)
        n += rs.size();
    return n;
}

void Project::add_model(const ModelHandle& handle) {
    for (auto& m : models_)
        if (m.id == handle.id) {
            m = handle;
            return;
        }
    models_.push_back(handle);
}

void Project::add_map(MapRecord record, const fs::path& project_dir) {
    require(!record.id.empty(), "map id must not be empty");
    require(record.id.find('/') == std::string::npos, "map id must not contain '/'");
    require(record.pixel_size_mm > 0 && std::isfinite(record.pixel_size_mm), "pixel size must be positive");
    if (has_map(record.id))
        fail(ErrorKind::conflict, "map '" + record.id + "' already exists");
    if (record.extras.is_null())
        record.extras = nlohmann::json::object();
    if (!project_dir.empty()) {
        const fs::path abs = fs::absolute(record.path).lexically_normal();
        const fs::path rel = abs.lexically_relative(fs::absolute(project_dir).lexically_normal());
        if (!rel.empty() && *rel.begin() != "..")
            record.path = rel.generic_string();
        else
            record.path = abs.generic_string();
    }
    maps_.push_back(std::move(record));
}

std::uint16_t Project::add_class(const std::string& name, Rgb8 color) {
    require(!name.empty(), "class name must not be empty");
    ClassCatalog c = catalog_;
    const auto idx = c.add(name, color);
    catalog_ = std::move(c);
    return idx;
}

OrthoMap Project::open_map(const std::string& id, const fs::path& project_dir) const {
    const MapRecord& m = map(id);
    fs::path p = m.path;
    if (p.is_relative())
        p = project_dir / p;
    OpenOptions opt;
    opt.id = m.id;
    opt.acquisition_date = m.acquisition_date;
    return open_orthomap(p, m.pixel_size_mm, opt);
}

std::vector<std::int64_t> Project::apply(const Transaction& tx) {
    require(!tx.empty(), "empty transaction");
    auto regions = regions_;
    auto extras = region_extras_;
    std::int64_t next = next_id_;
    std::vector<std::int64_t> created;
    std::set<std::string> touched;

    auto locate = [&](std::int64_t id, std::size_t op) -> std::pair<std::vector<Region>*, std::size_t> {
        for (auto& [m, rs] : regions)
            for (std::size_t i = 0; i < rs.size(); ++i)
                if (rs[i].id == id) {
                    touched.insert(m);
                    return {&rs, i};
                }
        fail(ErrorKind::not_found, "operation " + std::to_string(op) + ": unknown region " + std::to_string(id));
    };
    auto check_region = [&](const Region& r, std::size_t op) {
        if (r.class_index == 0 || r.class_index >= catalog_.size())
            fail(ErrorKind::invalid_argument, "operation " + std::to_string(op) + ": class index " +
                                                  std::to_string(r.class_index) + " is outside the catalog");
        const std::string err = validation_error(r);
        if (!err.empty())
            fail(ErrorKind::invalid_argument, "operation " + std::to_string(op) + ": invalid region: " + err);
    };

    for (std::size_t i = 0; i < tx.size(); ++i) {
        const RegionOp& op = tx[i];
        switch (op.kind) {
        case RegionOp::Kind::create: {
            if (!has_map(op.map))
                fail(ErrorKind::not_found, "operation " + std::to_string(i) + ": unknown map '" + op.map + "'");
            Region r = op.region;
            normalize_orientation(r);
            check_region(r, i);
            r.id = next++;
            r.cached_stats.reset();
            regions[op.map].push_back(std::move(r));
            touched.insert(op.map);
            created.push_back(next - 1);
            break;
        }
        case RegionOp::Kind::remove: {
            auto [rs, idx] = locate(op.id, i);
            rs->erase(rs->begin() + static_cast<std::ptrdiff_t>(idx));
            extras.erase(op.id);
            break;
        }
        case RegionOp::Kind::replace: {
            auto [rs, idx] = locate(op.id, i);
            Region r = op.region;
            normalize_orientation(r);
            check_region(r, i);
            r.id = op.id;
            r.cached_stats.reset();
            (*rs)[idx] = std::move(r);
            break;
        }
        }
    }

    JournalEntry entry{{}, region_extras_, next_id_};
    for (const auto& m : touched) {
        const auto it = regions_.find(m);
        entry.regions[m] = it == regions_.end() ? std::vector<Region>{} : it->second;
    }
    journal_.push_back(std::move(entry));
    if (journal_.size() > journal_depth)
        journal_.pop_front();
    regions_ = std::move(regions);
    region_extras_ = std::move(extras);
    next_id_ = next;
    return created;
}

void Project::undo() {
    if (journal_.empty())
        fail(ErrorKind::conflict, "nothing to undo");
    JournalEntry e = std::move(journal_.back());
    journal_.pop_back();
    for (auto& [m, rs] : e.regions) {
        if (rs.empty())
            regions_.erase(m);
        else
            regions_[m] = std::move(rs);
    }
    region_extras_ = std::move(e.region_extras);
    next_id_ = e.next_id;
}

json Project::to_json() const {
    json j = extras_;
    j["format"] = "orthoseg-project";
    j["version"] = project_format_version;
    j["catalog"] = jsonutil::catalog_to_json(catalog_);
    json maps = json::array();
    for (const auto& m : maps_) {
        json mj = m.extras;
        mj["id"] = m.id;
        mj["path"] = m.path;
        mj["pixel_size_mm"] = m.pixel_size_mm;
        mj["acquisition_date"] = m.acquisition_date;
        maps.push_back(std::move(mj));
    }
    j["maps"] = std::move(maps);
    json regions = json::object();
    for (const auto& m : maps_) {
        json arr = json::array();
        if (const auto it = regions_.find(m.id); it != regions_.end())
            for (const auto& r : it->second) {
                json rj = region_to_json(r);
                if (const auto ex = region_extras_.find(r.id); ex != region_extras_.end())
                    for (auto e = ex->second.begin(); e != ex->second.end(); ++e)
                        rj[e.key()] = e.value();
                arr.push_back(std::move(rj));
            }
        regions[m.id] = std::move(arr);
    }
    j["regions"] = std::move(regions);
    json models = json::array();
    for (const auto& h : models_)
        models.push_back(orthoseg::to_json(h));
    j["models"] = std::move(models);
    j["next_id"] = next_id_;
    return j;
}

Project Project::from_json(const json& j) {
    if (!j.is_object())
        schema_error("", "expected a project object");
    if (j.contains("format") && j["format"] != "orthoseg-project")
        schema_error("/format", "not an orthoseg project");
    const std::int64_t version = get_int(j, "version", "");
    if (version > project_format_version)
        fail(ErrorKind::invalid_argument, "project version " + std::to_string(version) +
                                              " is newer than the supported version " +
                                              std::to_string(project_format_version));
    if (version < 1)
        schema_error("/version", "unsupported version");
    Project p;
    p.catalog_ = jsonutil::catalog_from_json(field(j, "catalog", ""), "/catalog");
    const json& maps = field(j, "maps", "");
    if (!maps.is_array())
        schema_error("/maps", "expected an array");
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const std::string at = "/maps/" + std::to_string(i);
        MapRecord m;
        m.id = get_string(maps[i], "id", at);
        m.path = get_string(maps[i], "path", at);
        m.pixel_size_mm = get_number(maps[i], "pixel_size_mm", at);
        if (m.pixel_size_mm <= 0)
            schema_error(at + "/pixel_size_mm", "must be positive");
        if (maps[i].contains("acquisition_date"))
            m.acquisition_date = get_string(maps[i], "acquisition_date", at);
        m.extras = extras_of(maps[i], {"id", "path", "pixel_size_mm", "acquisition_date"});
        if (p.has_map(m.id))
            schema_error(at + "/id", "duplicate map id '" + m.id + "'");
        p.maps_.push_back(std::move(m));
    }
    std::set<std::int64_t> ids;
    std::int64_t max_id = 0;
    if (j.contains("regions")) {
        const json& regions = j["regions"];
        if (!regions.is_object())
            schema_error("/regions", "expected an object keyed by map id");
        for (auto it = regions.begin(); it != regions.end(); ++it) {
            const std::string at = "/regions/" + it.key();
            if (!p.has_map(it.key()))
                schema_error(at, "regions for unknown map '" + it.key() + "'");
            if (!it.value().is_array())
                schema_error(at, "expected an array");
            std::vector<Region> rs;
            for (std::size_t i = 0; i < it.value().size(); ++i) {
                const std::string rat = at + "/" + std::to_string(i);
                const json& rj = it.value()[i];
                Region r = region_from_json(rj, rat);
                if (r.class_index == 0 || r.class_index >= p.catalog_.size())
                    schema_error(rat + "/class_index", "outside the catalog");
                const std::string err = validation_error(r);
                if (!err.empty())
                    schema_error(rat, "invalid region: " + err);
                if (!ids.insert(r.id).second)
                    schema_error(rat + "/id", "duplicate region id " + std::to_string(r.id));
                max_id = std::max(max_id, r.id);
                json ex = extras_of(rj, {"id", "class_index", "provenance", "outer", "holes"});
                if (!ex.empty())
                    p.region_extras_[r.id] = std::move(ex);
                rs.push_back(std::move(r));
            }
            if (!rs.empty())
                p.regions_[it.key()] = std::move(rs);
        }
    }
    if (j.contains("models")) {
        const json& models = j["models"];
        if (!models.is_array())
            schema_error("/models", "expected an array");
        for (std::size_t i = 0; i < models.size(); ++i) {
            try {
                p.models_.push_back(model_handle_from_json(models[i]));
            } catch (const Error& e) {
                schema_error("/models/" + std::to_string(i), e.what());
            }
        }
    }
    p.next_id_ = j.contains("next_id") ? get_int(j, "next_id", "") : max_id + 1;
    if (p.next_id_ <= max_id)
        schema_error("/next_id", "must exceed every region id");
    p.extras_ = extras_of(j, {"format", "version", "catalog", "maps", "regions", "models", "next_id"});
    return p;
}

void Project::save(const fs::path& file) const { jsonutil::write_atomic(file, to_json().dump(1) + "\n"); }

Project Project::load(const fs::path& file) { return from_json(jsonutil::read_file(file)); }

bool operator==(const Project& a, const Project& b) {
    if (!(a.catalog_ == b.catalog_) || !(a.maps_ == b.maps_) || a.next_id_ != b.next_id_ || a.extras_ != b.extras_ ||
        a.region_extras_ != b.region_extras_ || a.models_.size() != b.models_.size())
        return false;
    for (std::size_t i = 0; i < a.models_.size(); ++i)
        if (to_json(a.models_[i]) != to_json(b.models_[i]))
            return false;
    auto non_empty = [](const Project& p) {
        std::size_t n = 0;
        for (const auto& [m, rs] : p.regions_)
            n += !rs.empty();
        return n;
    };
    if (non_empty(a) != non_empty(b))
        return false;
    for (const auto& [m, rs] : a.regions_) {
        if (rs.empty())
            continue;
        const auto it = b.regions_.find(m);
        if (it == b.regions_.end() || it->second.size() != rs.size())
            return false;
        for (std::size_t i = 0; i < rs.size(); ++i) {
            const Region x = quantize(rs[i]), y = quantize(it->second[i]);
            if (x.id != y.id || x.class_index != y.class_index || x.provenance != y.provenance || x.outer != y.outer ||
                x.holes != y.holes)
                return false;
        }
    }
    return true;
}

std::vector<std::int64_t> commit_regions(Project& project, const std::string& map, std::span<const Region> regions) {
    require(!regions.empty(), "no regions to commit");
    Transaction tx;
    for (const auto& r : regions)
        tx.push_back(RegionOp::create(map, r));
    return project.apply(tx);
}

// --- GeoJSON ----------------------------------------------------------------

namespace {

json closed_ring(const Ring& ring) {
    json out = ring_to_json(ring);
    if (!ring.empty())
        out.push_back(out.front());
    return out;
}

Ring open_ring(const json& j, const std::string& where) {
    Ring r = ring_from_json(j, where);
    if (r.size() >= 2 && r.front() == r.back())
        r.pop_back();
    if (r.size() < 3)
        schema_error(where, "ring needs at least 3 distinct vertices");
    return r;
}

Region polygon_region(const json& rings, const std::string& where) {
    if (!rings.is_array() || rings.empty())
        schema_error(where, "polygon needs at least one ring");
    Region r;
    r.outer = open_ring(rings[0], where + "/0");
    for (std::size_t i = 1; i < rings.size(); ++i)
        r.holes.push_back(open_ring(rings[i], where + "/" + std::to_string(i)));
    normalize_orientation(r);
    return r;
}

} // namespace

json regions_to_geojson(std::span<const Region> regions, const ClassCatalog& catalog) {
    json features = json::array();
    for (const auto& r : regions) {
        if (r.class_index >= catalog.size())
            fail(ErrorKind::invalid_argument, "region " + std::to_string(r.id) + " has a class outside the catalog");
        json rings = json::array({closed_ring(r.outer)});
        for (const auto& h : r.holes)
            rings.push_back(closed_ring(h));
        features.push_back(json{{"type", "Feature"},
                                {"properties", {{"class_name", catalog[r.class_index].name},
                                                {"id", r.id},
                                                {"provenance", to_string(r.provenance)}}},
                                {"geometry", {{"type", "Polygon"}, {"coordinates", rings}}}});
    }
    return json{{"type", "FeatureCollection"}, {"features", features}};
}

std::vector<Region> regions_from_geojson(const json& doc, const ClassCatalog& catalog) {
    if (!doc.is_object() || doc.value("type", std::string()) != "FeatureCollection")
        schema_error("/type", "expected a FeatureCollection");
    const json& features = field(doc, "features", "");
    if (!features.is_array())
        schema_error("/features", "expected an array");
    std::vector<Region> out;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const std::string at = "/features/" + std::to_string(i);
        const json& f = features[i];
        const json& props = field(f, "properties", at);
        const std::string name = get_string(props, "class_name", at + "/properties");
        const auto cls = catalog.find(name);
        if (!cls)
            fail(ErrorKind::invalid_argument, at + ": class_name '" + name + "' is not in the catalog");
        Provenance prov = Provenance::imported;
        if (props.contains("provenance") && props["provenance"].is_string()) {
            try {
                prov = provenance_from_string(props["provenance"].get<std::string>());
            } catch (const Error&) {
            }
        }
        const json& geom = field(f, "geometry", at);
        const std::string type = get_string(geom, "type", at + "/geometry");
        const json& coords = field(geom, "coordinates", at + "/geometry");
        std::vector<Region> parts;
        if (type == "Polygon") {
            parts.push_back(polygon_region(coords, at + "/geometry/coordinates"));
        } else if (type == "MultiPolygon") {
            if (!coords.is_array())
                schema_error(at + "/geometry/coordinates", "expected an array of polygons");
            for (std::size_t k = 0; k < coords.size(); ++k)
                parts.push_back(polygon_region(coords[k], at + "/geometry/coordinates/" + std::to_string(k)));
        } else {
            fail(ErrorKind::invalid_argument, at + ": geometry type '" + type + "' is not a polygon");
        }
        for (auto& r : parts) {
            r.class_index = *cls;
            r.provenance = prov;
            r.id = props.contains("id") && props["id"].is_number_integer() ? props["id"].get<std::int64_t>() : 0;
            const std::string err = validation_error(r);
            if (!err.empty())
                fail(ErrorKind::invalid_argument, at + ": invalid polygon: " + err);
            out.push_back(std::move(r));
        }
    }
    return out;
}

void export_vector(std::span<const Region> regions, const ClassCatalog& catalog, const fs::path& path) {
    jsonutil::write_atomic(path, regions_to_geojson(regions, catalog).dump(1) + "\n");
}

std::vector<Region> import_vector(const fs::path& path, const ClassCatalog& catalog) {
    return regions_from_geojson(jsonutil::read_file(path), catalog);
}

} // namespace orthoseg
