#pragma once

#include <chrono>
#include <string>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vad/core/error.hpp"

namespace vad {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

inline Url split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto start = scheme == std::string::npos ? 0 : scheme + 3;
  const auto slash = url.find('/', start);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

// POSTs a JSON body and parses the JSON reply. Any connection failure, non-2xx status
// or unparseable body raises TransportError.
inline nlohmann::json post_json(const std::string& url, const nlohmann::json& body,
                                std::chrono::seconds timeout = std::chrono::seconds(120)) {
  const Url u = split_url(url);
  httplib::Client cli(u.origin);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  auto res = cli.Post(u.path, body.dump(), "application/json");
  if (!res) throw TransportError(url + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw TransportError(url + ": HTTP " + std::to_string(res->status));
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(url + ": malformed reply: " + e.what());
  }
}

}  // namespace vad
