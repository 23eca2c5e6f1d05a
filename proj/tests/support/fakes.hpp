#pragma once

// In-process stand-ins for the chat provider.

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <utility>

#include <json.hpp>

#include "veille/corpus.hpp"
#include "veille/http.hpp"
#include "veille/promptkit.hpp"

namespace fakes {

/// OpenAI-shaped chat completion payload.
inline std::string chat_payload(const std::string& content, std::uint64_t in = 100, std::uint64_t out = 50) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}},
                        {"usage", {{"prompt_tokens", in}, {"completion_tokens", out}}}}
      .dump();
}

/// Answers every POST with `handler(parsed request body)`.
class ScriptedClient final : public veille::HttpClient {
public:
  using Handler = std::function<veille::HttpResponse(const nlohmann::json&)>;

  explicit ScriptedClient(Handler h) : handler_(std::move(h)) {}

  veille::HttpResponse post_json(const std::string& url, const std::string& body,
                                 const veille::HttpHeaders& headers) override {
    std::lock_guard lock(mutex_);
    ++calls;
    last_url = url;
    last_headers = headers;
    return handler_(nlohmann::json::parse(body));
  }

  std::atomic<int> calls{0};
  std::string last_url;
  veille::HttpHeaders last_headers;

private:
  std::mutex mutex_;
  Handler handler_;
};

inline std::string last_user_message(const nlohmann::json& body) {
  return body.at("messages").back().at("content").get<std::string>();
}

/// Maps the document whose text appears in the final user message to a canned reply.
class ByDocument {
public:
  void add(const std::string& text, std::string reply) { replies_.emplace_back(text, std::move(reply)); }

  std::optional<std::string> reply_for(const std::string& prompt) const {
    const std::pair<std::string, std::string>* best = nullptr;
    for (const auto& r : replies_) {
      if (prompt.find(r.first) != std::string::npos && (!best || r.first.size() > best->first.size())) best = &r;
    }
    if (!best) return std::nullopt;
    return best->second;
  }

  veille::HttpResponse operator()(const nlohmann::json& body) const {
    auto r = reply_for(last_user_message(body));
    if (!r) return {400, "{\"error\":\"unknown document\"}"};
    return {200, chat_payload(*r)};
  }

private:
  std::vector<std::pair<std::string, std::string>> replies_;
};

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& stem) {
  static std::mt19937_64 rng(std::random_device{}());
  auto p = std::filesystem::temp_directory_path() / ("veille-" + stem + "-" + std::to_string(rng()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fakes
