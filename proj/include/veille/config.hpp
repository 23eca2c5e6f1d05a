#pragma once

// TOML run configuration. Relative paths are resolved against the directory
// holding the configuration file. Credentials never come from here.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <toml.hpp>

#include "veille/augment.hpp"
#include "veille/error.hpp"
#include "veille/evalkit.hpp"
#include "veille/fewshot.hpp"
#include "veille/llmgate.hpp"
#include "veille/pipelines.hpp"

namespace veille {

struct CliPaths {
  std::filesystem::path pool;
  std::filesystem::path templates;  // empty: compiled-in defaults only
  std::filesystem::path embedding_cache;
};

struct CliConfig {
  CliPaths paths;
  RunConfig run;
  AugmentConfig augment;
  GatewayConfig gateway;
  MatchMode match = MatchMode::strict;
  LabelInventory inventory = LabelInventory::present;
  std::string embedding_model = "text-embedding-3-small";
};

namespace detail {

inline void reject_unknown_keys(const toml::table& t, std::string_view where, std::set<std::string_view> allowed) {
  for (const auto& [k, v] : t) {
    if (!allowed.count(k.str())) {
      throw ConfigError("unknown configuration key '" + std::string(k.str()) + "' in [" + std::string(where) + "]");
    }
  }
}

template <class T>
void read(const toml::table& t, std::string_view key, T& into, std::string_view where) {
  const auto* node = t.get(key);
  if (!node) return;
  if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = node->value<std::string>()) {
      into = *v;
      return;
    }
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = node->value<bool>()) {
      into = *v;
      return;
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (auto v = node->value<double>()) {
      into = *v;
      return;
    }
  } else {
    if (auto v = node->value<std::int64_t>(); v && *v >= 0) {
      into = static_cast<T>(*v);
      return;
    }
  }
  throw ConfigError("configuration key [" + std::string(where) + "]." + std::string(key) + " has the wrong type");
}

inline void read_stage(const toml::table& root, std::string_view name, StageSettings& s,
                       std::set<std::string_view> extra = {}) {
  const auto* t = root.get_as<toml::table>(name);
  if (!t) return;
  std::set<std::string_view> allowed{"template", "model", "temperature", "max_output"};
  allowed.insert(extra.begin(), extra.end());
  reject_unknown_keys(*t, name, allowed);
  read(*t, "template", s.template_name, name);
  read(*t, "model", s.model, name);
  read(*t, "temperature", s.temperature, name);
  read(*t, "max_output", s.max_output, name);
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace detail

inline CliConfig default_config() {
  CliConfig c;
  c.run.jobs = default_jobs();
  c.augment.jobs = c.run.jobs;
  return c;
}

inline CliConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& err) {
    throw ConfigError("configuration syntax error: " + std::string(err.description()));
  }
  detail::reject_unknown_keys(root, "top level",
                              {"paths", "gateway", "fewshot", "ner", "verify", "events", "augment", "run", "score"});
  CliConfig c = default_config();

  if (const auto* t = root.get_as<toml::table>("paths")) {
    detail::reject_unknown_keys(*t, "paths", {"pool", "fixtures", "templates", "embedding_cache"});
    std::string pool, fixtures, templates, cache;
    detail::read(*t, "pool", pool, "paths");
    detail::read(*t, "fixtures", fixtures, "paths");
    detail::read(*t, "templates", templates, "paths");
    detail::read(*t, "embedding_cache", cache, "paths");
    c.paths.pool = detail::resolve(base_dir, pool);
    if (!fixtures.empty()) c.gateway.fixtures = detail::resolve(base_dir, fixtures);
    c.paths.templates = detail::resolve(base_dir, templates);
    c.paths.embedding_cache = detail::resolve(base_dir, cache);
  }
  if (const auto* t = root.get_as<toml::table>("gateway")) {
    detail::reject_unknown_keys(*t, "gateway",
                                {"mode", "endpoint", "max_attempts", "backoff_ms", "parallelism",
                                 "input_price_per_million", "output_price_per_million", "embedding_model"});
    std::string mode = std::string(to_string(c.gateway.mode));
    std::size_t backoff = static_cast<std::size_t>(c.gateway.backoff.count());
    std::size_t attempts = static_cast<std::size_t>(c.gateway.max_attempts);
    detail::read(*t, "mode", mode, "gateway");
    detail::read(*t, "endpoint", c.gateway.endpoint, "gateway");
    detail::read(*t, "max_attempts", attempts, "gateway");
    detail::read(*t, "backoff_ms", backoff, "gateway");
    detail::read(*t, "parallelism", c.gateway.parallelism, "gateway");
    detail::read(*t, "input_price_per_million", c.gateway.prices.input_per_million, "gateway");
    detail::read(*t, "output_price_per_million", c.gateway.prices.output_per_million, "gateway");
    detail::read(*t, "embedding_model", c.embedding_model, "gateway");
    c.gateway.mode = parse_gateway_mode(mode);
    c.gateway.max_attempts = static_cast<int>(attempts);
    c.gateway.backoff = std::chrono::milliseconds(backoff);
  }
  if (const auto* t = root.get_as<toml::table>("fewshot")) {
    detail::reject_unknown_keys(*t, "fewshot", {"k", "provider", "exclude_self"});
    detail::read(*t, "k", c.run.fewshot.k, "fewshot");
    detail::read(*t, "provider", c.run.fewshot.provider, "fewshot");
    detail::read(*t, "exclude_self", c.run.fewshot.exclude_self, "fewshot");
  }
  detail::read_stage(root, "ner", c.run.ner);
  detail::read_stage(root, "verify", c.run.verify, {"merge_policy"});
  detail::read_stage(root, "events", c.run.events, {"max_events", "warn_doc_date"});
  detail::read_stage(root, "augment", c.augment.stage, {"variants_per_seed", "temperatures", "max_retries"});
  if (const auto* t = root.get_as<toml::table>("verify")) {
    std::string policy(to_string(c.run.merge));
    detail::read(*t, "merge_policy", policy, "verify");
    c.run.merge = parse_merge_policy(policy);
  }
  if (const auto* t = root.get_as<toml::table>("events")) {
    detail::read(*t, "max_events", c.run.event_policy.max_events, "events");
    detail::read(*t, "warn_doc_date", c.run.event_policy.warn_doc_date, "events");
  }
  if (const auto* t = root.get_as<toml::table>("augment")) {
    detail::read(*t, "variants_per_seed", c.augment.variants_per_seed, "augment");
    detail::read(*t, "max_retries", c.augment.max_retries, "augment");
    if (const auto* arr = t->get_as<toml::array>("temperatures")) {
      c.augment.temperature_schedule.clear();
      for (const auto& v : *arr) {
        auto d = v.value<double>();
        if (!d) throw ConfigError("[augment].temperatures must be numbers");
        c.augment.temperature_schedule.push_back(*d);
      }
    }
  }
  if (const auto* t = root.get_as<toml::table>("run")) {
    detail::reject_unknown_keys(*t, "run", {"window", "jobs", "lenient"});
    detail::read(*t, "window", c.run.align.window, "run");
    detail::read(*t, "jobs", c.run.jobs, "run");
    detail::read(*t, "lenient", c.run.parse.lenient, "run");
    c.augment.jobs = c.run.jobs;
  }
  if (const auto* t = root.get_as<toml::table>("score")) {
    detail::reject_unknown_keys(*t, "score", {"match", "inventory"});
    std::string match(to_string(c.match));
    std::string inventory = c.inventory == LabelInventory::present ? "present" : "fixed";
    detail::read(*t, "match", match, "score");
    detail::read(*t, "inventory", inventory, "score");
    c.match = parse_match_mode(match);
    if (inventory == "present") c.inventory = LabelInventory::present;
    else if (inventory == "fixed") c.inventory = LabelInventory::fixed;
    else throw ConfigError("[score].inventory must be 'present' or 'fixed'");
  }
  return c;
}

inline CliConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open configuration file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

/// EXTRACT_API_KEY and EXTRACT_ENDPOINT.
inline void apply_environment(CliConfig& c) {
  if (const char* key = std::getenv("EXTRACT_API_KEY")) c.gateway.api_key = key;
  if (const char* ep = std::getenv("EXTRACT_ENDPOINT"); ep && *ep) c.gateway.endpoint = ep;
}

/// Stands in for the remote embedder in replay mode, so a cache miss fails
/// instead of reaching the network.
class ReplayOnlyEmbedder final : public EmbeddingProvider {
public:
  explicit ReplayOnlyEmbedder(std::string name) : name_(std::move(name)) {}
  std::string name() const override { return name_; }
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    throw ConfigError("embedding cache has no entry for " + std::to_string(texts.size()) +
                      " text(s) and replay mode forbids network calls");
  }

private:
  std::string name_;
};

inline std::shared_ptr<EmbeddingProvider> make_embedder(const CliConfig& c) {
  const auto& p = c.run.fewshot.provider;
  if (p == "hashed-trigram") return std::make_shared<HashedTrigramEmbedder>();
  if (p == "remote") {
    if (c.paths.embedding_cache.empty()) throw ConfigError("the remote embedder needs paths.embedding_cache");
    std::shared_ptr<EmbeddingProvider> remote;
    if (c.gateway.mode == GatewayMode::replay) {
      remote = std::make_shared<ReplayOnlyEmbedder>("remote:" + c.embedding_model);
    } else {
      remote = std::make_shared<RemoteEmbedder>(std::make_shared<HttplibClient>(), c.gateway.endpoint,
                                                c.embedding_model, c.gateway.api_key);
    }
    return std::make_shared<CachedEmbedder>(remote, c.paths.embedding_cache);
  }
  throw ConfigError("unknown embedding provider '" + p + "' (expected hashed-trigram or remote)");
}

}  // namespace veille
