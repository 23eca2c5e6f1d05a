#pragma once

// Minimal JSON-over-HTTP(S) POST client shared by the chat gateway and the
// remote embedding provider.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <httplib.h>

#include "veille/error.hpp"

namespace veille {

struct HttpResponse {
  int status = 0;
  std::string body;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

class HttpClient {
public:
  virtual ~HttpClient() = default;
  /// Throws TransportError (transient) when no response was received.
  virtual HttpResponse post_json(const std::string& url, const std::string& body, const HttpHeaders& headers) = 0;
};

/// Process-wide count of requests that reached the network layer.
inline std::atomic<std::uint64_t>& network_request_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline ParsedUrl split_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw ConfigError("endpoint URL lacks a scheme: " + std::string(url));
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, path_start)), std::string(url.substr(path_start))};
}

inline std::string join_url(std::string_view base, std::string_view suffix) {
  std::string out(base);
  while (!out.empty() && out.back() == '/') out.pop_back();
  if (!suffix.empty() && suffix.front() != '/') out.push_back('/');
  out += suffix;
  return out;
}

class HttplibClient final : public HttpClient {
public:
  explicit HttplibClient(std::chrono::seconds timeout = std::chrono::seconds(120)) : timeout_(timeout) {}

  HttpResponse post_json(const std::string& url, const std::string& body, const HttpHeaders& headers) override {
    const auto parsed = split_url(url);
    httplib::Client cli(parsed.origin);
    cli.set_connection_timeout(std::chrono::seconds(30));
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    network_request_counter().fetch_add(1, std::memory_order_relaxed);
    auto res = cli.Post(parsed.path, h, body, "application/json");
    if (!res) {
      throw TransportError("HTTP request to " + parsed.origin + " failed: " + httplib::to_string(res.error()),
                           true);
    }
    return {res->status, res->body};
  }

private:
  std::chrono::seconds timeout_;
};

inline bool is_transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace veille
