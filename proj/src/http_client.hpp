#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace orthoseg::http {

/// POSTs a JSON body to `endpoint` + `path` and parses the JSON reply. Transport
/// failures, timeouts, non-2xx statuses and malformed replies raise io errors.
nlohmann::json post_json(const std::string& endpoint, const std::string& path, const nlohmann::json& body,
                         double timeout_s);
nlohmann::json get_json(const std::string& endpoint, const std::string& path, double timeout_s);

} // namespace orthoseg::http
