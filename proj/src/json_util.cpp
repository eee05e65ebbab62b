#include "json_util.hpp"

#include <fstream>
#include <sstream>

namespace orthoseg::jsonutil {

namespace fs = std::filesystem;
using nlohmann::json;

json rgb_to_json(Rgb8 c) { return json::array({c.r, c.g, c.b}); }

Rgb8 rgb_from_json(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3)
        fail(ErrorKind::invalid_argument, where + ": colour must be an [r, g, b] array");
    Rgb8 c;
    std::uint8_t* ch[3] = {&c.r, &c.g, &c.b};
    for (int i = 0; i < 3; ++i) {
        if (!j[i].is_number_integer() || j[i].get<int>() < 0 || j[i].get<int>() > 255)
            fail(ErrorKind::invalid_argument, where + ": colour channels must be integers in [0, 255]");
        *ch[i] = static_cast<std::uint8_t>(j[i].get<int>());
    }
    return c;
}

json catalog_to_json(const ClassCatalog& catalog) {
    json out = json::array();
    for (const auto& e : catalog.entries())
        out.push_back(json{{"name", e.name}, {"color", rgb_to_json(e.color)}});
    return out;
}

ClassCatalog catalog_from_json(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty())
        fail(ErrorKind::invalid_argument, where + ": catalog must be a non-empty array");
    ClassCatalog cat;
    const auto& first = j[0];
    if (first.value("name", std::string()) != cat[0].name ||
        rgb_from_json(first.at("color"), where + "/0/color") != cat[0].color)
        fail(ErrorKind::invalid_argument, where + ": entry 0 must be (\"unlabeled\", [0, 0, 0])");
    for (std::size_t i = 1; i < j.size(); ++i) {
        const std::string at = where + "/" + std::to_string(i);
        if (!j[i].is_object() || !j[i].contains("name") || !j[i]["name"].is_string() || !j[i].contains("color"))
            fail(ErrorKind::invalid_argument, at + ": class needs a string name and a colour");
        try {
            cat.add(j[i]["name"].get<std::string>(), rgb_from_json(j[i]["color"], at + "/color"));
        } catch (const Error& e) {
            fail(ErrorKind::invalid_argument, at + ": " + e.what());
        }
    }
    return cat;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::not_found, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_file(const fs::path& path) {
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::invalid_argument, "'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            fail(ErrorKind::io, "cannot write '" + tmp.string() + "'");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out.flush())
            fail(ErrorKind::io, "write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
        fail(ErrorKind::io, "cannot replace '" + path.string() + "': " + ec.message());
}

} // namespace orthoseg::jsonutil
