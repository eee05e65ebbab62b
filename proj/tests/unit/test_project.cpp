#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "orthoseg/png_io.hpp"
#include "orthoseg/project.hpp"
#include "test_util.hpp"

using namespace orthoseg;
using nlohmann::json;

namespace {

Region square(double x, double y, double s, std::uint16_t cls = 1) {
    Region r;
    r.class_index = cls;
    r.outer = {{x, y}, {x + s, y}, {x + s, y + s}, {x, y + s}};
    return r;
}

Region random_region(std::mt19937& rng) {
    std::uniform_real_distribution<double> pos(0, 5000), rad(5, 40), u(0.6, 1.0);
    const double cx = pos(rng), cy = pos(rng), r = rad(rng);
    const int n = 3 + static_cast<int>(rng() % 20);
    Region reg;
    reg.class_index = static_cast<std::uint16_t>(1 + rng() % 3);
    for (int i = 0; i < n; ++i) {
        const double t = 2 * std::numbers::pi * i / n;
        const double rr = r * u(rng);
        reg.outer.push_back({cx + rr * std::cos(t), cy + rr * std::sin(t)});
    }
    if (rng() % 3 == 0) {
        const double hr = r * 0.2;
        reg.holes.push_back({{cx - hr, cy - hr}, {cx - hr, cy + hr}, {cx + hr, cy + hr}, {cx + hr, cy - hr}});
    }
    reg.provenance = static_cast<Provenance>(rng() % 6);
    return reg;
}

ClassCatalog catalog() {
    ClassCatalog c;
    c.add("brick", {200, 60, 40});
    c.add("mortar", {220, 220, 200});
    c.add("stone", {90, 90, 90});
    return c;
}

Project sample_project() {
    Project p(catalog());
    p.add_map({"wall", "wall.png", 1.0, "2020-06-01", json::object()});
    p.add_map({"wall2", "wall2.png", 1.0, "2021-06-01", json::object()});
    return p;
}

bool same_at_precision(const Region& a, const Region& b) {
    const Region x = quantize(a), y = quantize(b);
    return x.class_index == y.class_index && x.outer == y.outer && x.holes == y.holes;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("transactions and undo") {
    Project p = sample_project();
    const Project before = p;
    const auto ids = p.apply({RegionOp::create("wall", square(0, 0, 10))});
    REQUIRE(ids.size() == 1);
    CHECK(p.region(ids[0]).id == ids[0]);
    CHECK(p.region_count() == 1);
    p.undo();
    CHECK(p.region_count() == 0);
    CHECK(p == before);

    const auto a = p.apply({RegionOp::create("wall", square(0, 0, 10))})[0];
    const auto b = p.apply({RegionOp::remove(a), RegionOp::create("wall", square(20, 0, 5, 2))})[0];
    CHECK_THROWS_AS(p.region(a), Error);
    CHECK(p.region(b).class_index == 2);
    p.undo();
    CHECK(p.region(a).outer == square(0, 0, 10).outer);
    CHECK_THROWS_AS(p.region(b), Error);

    // Replace keeps the id; clockwise input is normalised.
    Region cw = square(1, 1, 3);
    std::reverse(cw.outer.begin(), cw.outer.end());
    p.apply({RegionOp::replace(a, cw)});
    CHECK(p.region(a).id == a);
    CHECK(signed_area(p.region(a).outer) > 0);

    // Atomicity: a failing op leaves everything unchanged.
    const Project snapshot = p;
    const std::size_t depth = p.undo_depth();
    CHECK_THROWS_AS(p.apply({RegionOp::create("wall", square(50, 50, 5)), RegionOp::remove(999)}), Error);
    CHECK_THROWS_AS(p.apply({RegionOp::create("wall", square(50, 50, 5, 9))}), Error);
    CHECK_THROWS_AS(p.apply({RegionOp::create("nowhere", square(50, 50, 5))}), Error);
    Region bow;
    bow.class_index = 1;
    bow.outer = {{0, 0}, {10, 10}, {10, 0}, {0, 10}};
    CHECK_THROWS_AS(p.apply({RegionOp::create("wall", bow)}), Error);
    CHECK(p == snapshot);
    CHECK(p.undo_depth() == depth);

    const std::size_t n = p.region_count();
    commit_regions(p, "wall2", std::vector<Region>{square(0, 0, 2), square(5, 5, 2)});
    CHECK(p.region_count() == n + 2);
    p.undo();
    CHECK(p.region_count() == n);
}

TEST_CASE("journal depth") {
    Project p = sample_project();
    for (int i = 0; i < 65; ++i)
        p.apply({RegionOp::create("wall", square(i * 20.0, 0, 10))});
    CHECK(p.undo_depth() == journal_depth);
    for (int i = 0; i < 64; ++i)
        p.undo();
    CHECK(p.region_count() == 1);
    CHECK_THROWS_WITH_AS(p.undo(), doctest::Contains("nothing to undo"), Error);
}

TEST_CASE("project save and load") {
    testutil::TempDir dir;
    Project empty(catalog());
    empty.save(dir / "empty.json");
    CHECK(Project::load(dir / "empty.json") == empty);

    Project p = sample_project();
    std::mt19937 rng(21);
    std::vector<Region> rs;
    for (int i = 0; i < 1000; ++i)
        rs.push_back(random_region(rng));
    commit_regions(p, "wall", rs);
    ModelHandle h;
    h.id = "model-1";
    h.catalog = p.catalog();
    p.add_model(h);
    p.extras()["viewer"] = {{"zoom", 3}};
    p.save(dir / "p.json");
    const Project q = Project::load(dir / "p.json");
    CHECK(q == p);
    const auto& loaded = q.regions("wall");
    REQUIRE(loaded.size() == 1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        CHECK(same_at_precision(loaded[i], rs[i]));
        CHECK(loaded[i].provenance == rs[i].provenance);
        for (const auto& v : loaded[i].outer) {
            CHECK(std::abs(v.x * 1000 - std::round(v.x * 1000)) < 1e-6);
        }
    }
    q.save(dir / "q.json");
    CHECK(slurp(dir / "p.json") == slurp(dir / "q.json"));

    // Unknown fields survive a round trip at every level.
    json j = json::parse(slurp(dir / "p.json"));
    j["future_top"] = 42;
    j["maps"][0]["future_map"] = "x";
    j["regions"]["wall"][0]["future_region"] = json::array({1, 2});
    std::ofstream(dir / "f.json") << j.dump();
    Project::load(dir / "f.json").save(dir / "f2.json");
    const json back = json::parse(slurp(dir / "f2.json"));
    CHECK(back["future_top"] == 42);
    CHECK(back["maps"][0]["future_map"] == "x");
    CHECK(back["regions"]["wall"][0]["future_region"] == json::array({1, 2}));
}

TEST_CASE("project load errors") {
    testutil::TempDir dir;
    Project p = sample_project();
    commit_regions(p, "wall", std::vector<Region>{square(0, 0, 4)});
    p.save(dir / "p.json");
    const std::string text = slurp(dir / "p.json");
    std::ofstream(dir / "t.json") << text.substr(0, text.size() / 2);
    CHECK_THROWS_AS(Project::load(dir / "t.json"), Error);

    auto load_modified = [&](auto edit) {
        json j = json::parse(text);
        edit(j);
        std::ofstream(dir / "m.json") << j.dump();
        return Project::load(dir / "m.json");
    };
    CHECK_THROWS_WITH_AS(load_modified([](json& j) { j["version"] = 2; }), doctest::Contains("newer"), Error);
    CHECK_THROWS_WITH_AS(load_modified([](json& j) { j["maps"][0]["pixel_size_mm"] = "big"; }),
                         doctest::Contains("/maps/0/pixel_size_mm"), Error);
    CHECK_THROWS_WITH_AS(load_modified([](json& j) { j["regions"]["wall"][0]["outer"][1] = "x"; }),
                         doctest::Contains("/regions/wall/0/outer/1"), Error);
    CHECK_THROWS_WITH_AS(load_modified([](json& j) { j["regions"]["wall"][0]["class_index"] = 7; }),
                         doctest::Contains("/regions/wall/0/class_index"), Error);
    CHECK_THROWS_WITH_AS(load_modified([](json& j) { j["regions"]["ghost"] = json::array(); }),
                         doctest::Contains("/regions/ghost"), Error);
    CHECK_THROWS_WITH_AS(load_modified([](json& j) { j.erase("catalog"); }), doctest::Contains("/catalog"), Error);
    CHECK_THROWS_AS(Project::load(dir / "missing.json"), Error);
}

TEST_CASE("maps are stored relative to the project") {
    testutil::TempDir dir;
    std::filesystem::create_directories(dir / "images");
    png::write_rgb(dir / "images" / "m.png", testutil::noise_image(40, 30, 1));
    Project p(catalog());
    p.add_map({"m", (dir / "images" / "m.png").string(), 2.0, "", json::object()}, dir.path());
    CHECK(p.map("m").path == "images/m.png");
    const OrthoMap map = p.open_map("m", dir.path());
    CHECK(map.width() == 40);
    CHECK(map.pixel_size_mm() == 2.0);
    CHECK_THROWS_AS(p.add_map({"m", "x.png", 1.0, "", json::object()}), Error);
    CHECK_THROWS_AS(p.map("zz"), Error);
}

TEST_CASE("GeoJSON vector exchange") {
    testutil::TempDir dir;
    const ClassCatalog cat = catalog();
    const json one = json::parse(R"({"type":"FeatureCollection","features":[
        {"type":"Feature","properties":{"class_name":"brick"},
         "geometry":{"type":"Polygon","coordinates":[[[0,0],[10,0],[10,10],[0,10],[0,0]]]}}]})");
    const auto rs = regions_from_geojson(one, cat);
    REQUIRE(rs.size() == 1);
    CHECK(rs[0].class_index == 1);
    CHECK(rs[0].provenance == Provenance::imported);
    CHECK(region_area(rs[0]) == 100);

    // Both windings give the same region.
    const json ccw = json::parse(R"({"type":"FeatureCollection","features":[
        {"type":"Feature","properties":{"class_name":"stone"},
         "geometry":{"type":"Polygon","coordinates":[[[0,0],[10,0],[10,10],[0,10],[0,0]],[[2,2],[2,8],[8,8],[8,2],[2,2]]]}}]})");
    const json cw = json::parse(R"({"type":"FeatureCollection","features":[
        {"type":"Feature","properties":{"class_name":"stone"},
         "geometry":{"type":"Polygon","coordinates":[[[0,0],[0,10],[10,10],[10,0],[0,0]],[[2,2],[8,2],[8,8],[2,8],[2,2]]]}}]})");
    const auto a = canonical(regions_from_geojson(ccw, cat)[0]);
    const auto b = canonical(regions_from_geojson(cw, cat)[0]);
    CHECK(a.outer == b.outer);
    CHECK(a.holes == b.holes);
    CHECK(a.holes.size() == 1);
    CHECK(region_area(a) == 64);

    const json multi = json::parse(R"({"type":"FeatureCollection","features":[
        {"type":"Feature","properties":{"class_name":"mortar"},
         "geometry":{"type":"MultiPolygon","coordinates":[[[[0,0],[1,0],[1,1],[0,0]]],[[[5,5],[6,5],[6,6],[5,5]]]]}}]})");
    CHECK(regions_from_geojson(multi, cat).size() == 2);

    json unknown = one;
    unknown["features"][0]["properties"]["class_name"] = "lichen";
    CHECK_THROWS_WITH_AS(regions_from_geojson(unknown, cat), doctest::Contains("lichen"), Error);
    json line = one;
    line["features"][0]["geometry"] = {{"type", "LineString"}, {"coordinates", {{0, 0}, {1, 1}}}};
    CHECK_THROWS_WITH_AS(regions_from_geojson(line, cat), doctest::Contains("LineString"), Error);

    export_vector({}, cat, dir / "empty.geojson");
    const json e = json::parse(slurp(dir / "empty.geojson"));
    CHECK(e["type"] == "FeatureCollection");
    CHECK(e["features"].empty());

    std::mt19937 rng(4);
    std::vector<Region> many;
    for (int i = 0; i < 50; ++i) {
        many.push_back(random_region(rng));
        many.back().id = i + 1;
    }
    export_vector(many, cat, dir / "v.geojson");
    const auto back = import_vector(dir / "v.geojson", cat);
    REQUIRE(back.size() == 50);
    for (int i = 0; i < 50; ++i) {
        CHECK(same_at_precision(back[i], many[i]));
        CHECK(back[i].id == i + 1);
    }
    const json doc = json::parse(slurp(dir / "v.geojson"));
    for (std::size_t i = 0; i < 50; ++i)
        CHECK(doc["features"][i]["geometry"]["coordinates"].size() == 1 + many[i].holes.size());
    export_vector(back, cat, dir / "v2.geojson");
    CHECK(slurp(dir / "v.geojson") == slurp(dir / "v2.geojson"));
}
