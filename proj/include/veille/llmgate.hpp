#pragma once

// Chat-completion gateway: live HTTP calls with retries, replay from a
// content-addressed fixture store, and per-stage usage accounting.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "veille/error.hpp"
#include "veille/http.hpp"
#include "veille/promptkit.hpp"
#include "veille/text.hpp"

namespace veille {

struct CompletionRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_output = 4096;
  std::string tag;  // pipeline stage; not part of the digest
};

struct TokenUsage {
  std::uint64_t input_tokens = 0;
  std::uint64_t output_tokens = 0;
  bool operator==(const TokenUsage&) const = default;
};

struct CompletionResponse {
  std::string content;
  TokenUsage usage;
  std::chrono::milliseconds latency{0};
  int attempts = 1;
};

enum class GatewayMode { live, replay, record };

inline std::string_view to_string(GatewayMode m) {
  switch (m) {
    case GatewayMode::live: return "live";
    case GatewayMode::replay: return "replay";
    case GatewayMode::record: return "record";
  }
  return "?";
}

inline GatewayMode parse_gateway_mode(std::string_view s) {
  if (s == "live") return GatewayMode::live;
  if (s == "replay") return GatewayMode::replay;
  if (s == "record") return GatewayMode::record;
  throw ConfigError("unknown gateway mode '" + std::string(s) + "' (expected live, replay or record)");
}

inline void check_request(const CompletionRequest& req) {
  if (req.messages.empty()) throw ValidationError("completion request has no messages");
  if (req.messages.front().role != Role::system) {
    throw ValidationError("completion request must start with a system message");
  }
  if (req.temperature < 0.0) throw ValidationError("negative temperature");
  for (const auto& m : req.messages) {
    if (m.content.empty()) throw ValidationError("completion request contains an empty message");
  }
}

/// Serialization the digest is taken over: model, temperature, max_output, messages.
inline std::string canonical_request(const CompletionRequest& req) {
  nlohmann::ordered_json msgs = nlohmann::ordered_json::array();
  for (const auto& m : req.messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  nlohmann::ordered_json j = {{"model", req.model},
                              {"temperature", req.temperature},
                              {"max_output", req.max_output},
                              {"messages", std::move(msgs)}};
  return j.dump();
}

inline std::string request_digest(const CompletionRequest& req) {
  return text::sha256_hex(canonical_request(req));
}

/// Directory of `<digest>.json` files holding recorded responses.
class FixtureStore {
public:
  explicit FixtureStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }

  std::optional<CompletionResponse> find(const std::string& digest) const {
    std::ifstream in(dir_ / (digest + ".json"), std::ios::binary);
    if (!in) return std::nullopt;
    try {
      auto j = nlohmann::json::parse(in);
      const auto& r = j.at("response");
      CompletionResponse out;
      out.content = r.at("content").get<std::string>();
      out.usage.input_tokens = r.at("usage").at("input_tokens").get<std::uint64_t>();
      out.usage.output_tokens = r.at("usage").at("output_tokens").get<std::uint64_t>();
      out.latency = std::chrono::milliseconds(r.value("latency_ms", std::int64_t{0}));
      out.attempts = 1;
      return out;
    } catch (const nlohmann::json::exception& err) {
      throw ConfigError("corrupt fixture " + digest + ": " + err.what());
    }
  }

  void put(const std::string& digest, const CompletionRequest& req, const CompletionResponse& resp) {
    std::lock_guard lock(write_mutex_);
    std::filesystem::create_directories(dir_);
    nlohmann::ordered_json j = {
        {"digest", digest},
        {"request", nlohmann::ordered_json::parse(canonical_request(req))},
        {"response",
         {{"content", resp.content},
          {"usage", {{"input_tokens", resp.usage.input_tokens}, {"output_tokens", resp.usage.output_tokens}}},
          {"latency_ms", resp.latency.count()}}}};
    const auto final_path = dir_ / (digest + ".json");
    auto tmp = final_path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, final_path);
  }

private:
  std::filesystem::path dir_;
  std::mutex write_mutex_;
};

struct Prices {
  double input_per_million = 0.0;
  double output_per_million = 0.0;
};

struct StageUsage {
  std::uint64_t input_tokens = 0;
  std::uint64_t output_tokens = 0;
  std::uint64_t requests = 0;
  std::chrono::milliseconds wall_time{0};
  double cost = 0.0;
};

struct UsageReport {
  std::map<std::string, StageUsage> stages;
  StageUsage total;
};

/// Per-stage accumulation; safe to update from several threads.
class UsageLedger {
public:
  void record(const std::string& stage, const TokenUsage& usage, std::chrono::milliseconds latency) {
    std::lock_guard lock(mutex_);
    auto& s = stages_[stage];
    s.input_tokens += usage.input_tokens;
    s.output_tokens += usage.output_tokens;
    s.requests += 1;
    s.wall_time += latency;
  }

  std::map<std::string, StageUsage> snapshot() const {
    std::lock_guard lock(mutex_);
    return stages_;
  }

private:
  mutable std::mutex mutex_;
  std::map<std::string, StageUsage> stages_;
};

inline double estimate_cost(const StageUsage& s, const Prices& p) {
  return static_cast<double>(s.input_tokens) * p.input_per_million / 1e6 +
         static_cast<double>(s.output_tokens) * p.output_per_million / 1e6;
}

inline UsageReport report_usage(const std::map<std::string, StageUsage>& stages, const Prices& prices) {
  UsageReport r;
  for (auto [name, s] : stages) {
    s.cost = estimate_cost(s, prices);
    r.total.input_tokens += s.input_tokens;
    r.total.output_tokens += s.output_tokens;
    r.total.requests += s.requests;
    r.total.wall_time += s.wall_time;
    r.stages.emplace(name, s);
  }
  r.total.cost = estimate_cost(r.total, prices);
  return r;
}

inline UsageReport report_usage(const UsageLedger& ledger, const Prices& prices) {
  return report_usage(ledger.snapshot(), prices);
}

inline nlohmann::ordered_json to_json(const StageUsage& s) {
  return {{"input_tokens", s.input_tokens},
          {"output_tokens", s.output_tokens},
          {"requests", s.requests},
          {"wall_time_ms", s.wall_time.count()},
          {"estimated_cost", s.cost}};
}

inline nlohmann::ordered_json to_json(const UsageReport& r) {
  nlohmann::ordered_json stages = nlohmann::ordered_json::object();
  for (const auto& [name, s] : r.stages) stages[name] = to_json(s);
  return {{"stages", std::move(stages)}, {"total", to_json(r.total)}};
}

inline std::map<std::string, StageUsage> stages_from_json(const nlohmann::json& j) {
  std::map<std::string, StageUsage> out;
  for (const auto& [name, s] : j.at("stages").items()) {
    StageUsage u;
    u.input_tokens = s.at("input_tokens").get<std::uint64_t>();
    u.output_tokens = s.at("output_tokens").get<std::uint64_t>();
    u.requests = s.at("requests").get<std::uint64_t>();
    u.wall_time = std::chrono::milliseconds(s.at("wall_time_ms").get<std::int64_t>());
    out[name] = u;
  }
  return out;
}

struct GatewayConfig {
  GatewayMode mode = GatewayMode::replay;
  std::string endpoint = "https://api.openai.com/v1";
  std::string api_key;  // from the environment only
  std::filesystem::path fixtures = "fixtures/llm";
  int max_attempts = 3;
  std::chrono::milliseconds backoff{500};
  std::size_t parallelism = 8;
  Prices prices;
};

/// Serves NER, event, verification and augmentation requests; the stage is the request tag.
class Gateway {
public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit Gateway(GatewayConfig cfg, std::shared_ptr<HttpClient> client = nullptr)
      : cfg_(std::move(cfg)), client_(std::move(client)), store_(cfg_.fixtures),
        sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
    if (cfg_.max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
    if (cfg_.mode != GatewayMode::replay && !client_) client_ = std::make_shared<HttplibClient>();
  }

  void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }

  CompletionResponse complete(const CompletionRequest& req) {
    check_request(req);
    const std::string digest = request_digest(req);
    CompletionResponse resp;
    if (cfg_.mode == GatewayMode::replay) {
      auto hit = store_.find(digest);
      if (!hit) throw ReplayMissError(digest);
      resp = std::move(*hit);
    } else {
      resp = call_with_retries(req);
      if (cfg_.mode == GatewayMode::record) store_.put(digest, req, resp);
    }
    ledger_.record(req.tag, resp.usage, resp.latency);
    return resp;
  }

  const GatewayConfig& config() const { return cfg_; }
  const UsageLedger& ledger() const { return ledger_; }
  std::uint64_t live_calls() const { return live_calls_.load(); }
  UsageReport usage() const { return report_usage(ledger_, cfg_.prices); }

private:
  CompletionResponse call_with_retries(const CompletionRequest& req) {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : req.messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    const nlohmann::json body = {{"model", req.model},
                                 {"messages", std::move(msgs)},
                                 {"temperature", req.temperature},
                                 {"max_tokens", req.max_output}};
    HttpHeaders headers;
    if (!cfg_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + cfg_.api_key);
    const std::string url = join_url(cfg_.endpoint, "chat/completions");
    const std::string payload = body.dump();

    for (int attempt = 1;; ++attempt) {
      try {
        const auto t0 = std::chrono::steady_clock::now();
        live_calls_.fetch_add(1);
        HttpResponse http = client_->post_json(url, payload, headers);
        const auto latency =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
        if (http.status < 200 || http.status >= 300) {
          throw TransportError("provider returned HTTP " + std::to_string(http.status),
                               is_transient_status(http.status));
        }
        CompletionResponse resp = parse_provider_payload(http.body);
        resp.latency = latency;
        resp.attempts = attempt;
        return resp;
      } catch (const TransportError& err) {
        if (!err.transient() || attempt >= cfg_.max_attempts) {
          if (err.transient()) {
            throw TransportError(std::string(err.what()) + " (gave up after " + std::to_string(attempt) +
                                     " attempts)",
                                 false);
          }
          throw;
        }
        sleeper_(cfg_.backoff * (1 << (attempt - 1)));
      }
    }
  }

public:
  static CompletionResponse parse_provider_payload(const std::string& body) {
    try {
      auto j = nlohmann::json::parse(body);
      CompletionResponse out;
      const auto& content = j.at("choices").at(0).at("message").at("content");
      if (!content.is_string()) throw ProviderError("provider message content is not a string");
      out.content = content.get<std::string>();
      if (j.contains("usage") && j["usage"].is_object()) {
        out.usage.input_tokens = j["usage"].value("prompt_tokens", std::uint64_t{0});
        out.usage.output_tokens = j["usage"].value("completion_tokens", std::uint64_t{0});
      }
      return out;
    } catch (const nlohmann::json::exception& err) {
      throw ProviderError(std::string("malformed provider payload: ") + err.what());
    }
  }

private:
  GatewayConfig cfg_;
  std::shared_ptr<HttpClient> client_;
  FixtureStore store_;
  UsageLedger ledger_;
  Sleeper sleeper_;
  std::atomic<std::uint64_t> live_calls_{0};
};

}  // namespace veille
