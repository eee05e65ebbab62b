#include "http_client.hpp"

#include <httplib.h>

#include <cmath>

#include "orthoseg/error.hpp"

namespace orthoseg::http {

namespace {

httplib::Client make_client(const std::string& endpoint, double timeout_s) {
    httplib::Client cli(endpoint);
    if (!cli.is_valid())
        fail(ErrorKind::invalid_argument, "invalid backend endpoint '" + endpoint + "'");
    const auto sec = static_cast<time_t>(std::floor(timeout_s));
    const auto usec = static_cast<time_t>((timeout_s - std::floor(timeout_s)) * 1e6);
    cli.set_connection_timeout(sec, usec);
    cli.set_read_timeout(sec, usec);
    cli.set_write_timeout(sec, usec);
    return cli;
}

nlohmann::json parse_reply(const httplib::Result& res, const std::string& what) {
    if (!res)
        fail(ErrorKind::io, what + " failed: " + httplib::to_string(res.error()));
    nlohmann::json body = nlohmann::json::parse(res->body, nullptr, false);
    if (res->status < 200 || res->status >= 300) {
        std::string detail = body.is_object() && body.contains("error") ? body["error"].dump() : res->body.substr(0, 200);
        fail(ErrorKind::io, what + " returned HTTP " + std::to_string(res->status) + ": " + detail);
    }
    if (body.is_discarded())
        fail(ErrorKind::io, what + " returned a malformed JSON reply");
    return body;
}

} // namespace

nlohmann::json post_json(const std::string& endpoint, const std::string& path, const nlohmann::json& body,
                         double timeout_s) {
    auto cli = make_client(endpoint, timeout_s);
    return parse_reply(cli.Post(path, body.dump(), "application/json"), "POST " + endpoint + path);
}

nlohmann::json get_json(const std::string& endpoint, const std::string& path, double timeout_s) {
    auto cli = make_client(endpoint, timeout_s);
    return parse_reply(cli.Get(path), "GET " + endpoint + path);
}

} // namespace orthoseg::http
