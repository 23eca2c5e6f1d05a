#pragma once

// Few-shot example retrieval: top-k pool documents by cosine similarity of
// text embeddings.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>
#include <unicode/uchar.h>

#include "veille/corpus.hpp"
#include "veille/error.hpp"
#include "veille/http.hpp"
#include "veille/text.hpp"

namespace veille {

struct EmbeddingVector {
  std::vector<double> values;
  bool operator==(const EmbeddingVector&) const = default;
};

/// a·b / (‖a‖‖b‖), or 0 when either norm is 0.
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.values.size() != b.values.size()) {
    throw ValidationError("cosine of vectors with lengths " + std::to_string(a.values.size()) + " and " +
                          std::to_string(b.values.size()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

class EmbeddingProvider {
public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string name() const = 0;
  virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
};

inline void check_batch(const std::vector<EmbeddingVector>& batch) {
  for (const auto& v : batch) {
    if (v.values.size() != batch.front().values.size()) {
      throw ValidationError("embedding dimension mismatch within a batch");
    }
    for (double x : v.values) {
      if (!std::isfinite(x)) throw ValidationError("embedding contains a non-finite value");
    }
  }
}

/// Offline embedder: hashed counts of lower-cased code point trigrams, L2-normalized.
class HashedTrigramEmbedder final : public EmbeddingProvider {
public:
  static constexpr std::size_t kDimension = 512;

  std::string name() const override { return "hashed-trigram-512"; }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
  }

  static EmbeddingVector embed_one(std::string_view utf8) {
    std::u32string cps = text::decode_utf8(utf8);
    for (auto& c : cps) c = static_cast<char32_t>(u_tolower(static_cast<UChar32>(c)));
    EmbeddingVector v{std::vector<double>(kDimension, 0.0)};
    for (std::size_t i = 0; i + 3 <= cps.size(); ++i) {
      std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
      for (std::size_t k = 0; k < 3; ++k) {
        std::uint32_t c = cps[i + k];
        for (int b = 0; b < 4; ++b) {
          h ^= (c >> (8 * b)) & 0xFFu;
          h *= 1099511628211ULL;
        }
      }
      v.values[h % kDimension] += 1.0;
    }
    double norm = 0.0;
    for (double x : v.values) norm += x * x;
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (double& x : v.values) x /= norm;
    }
    return v;
  }
};

/// OpenAI-style `/embeddings` endpoint.
class RemoteEmbedder final : public EmbeddingProvider {
public:
  RemoteEmbedder(std::shared_ptr<HttpClient> client, std::string endpoint, std::string model, std::string api_key)
      : client_(std::move(client)), endpoint_(std::move(endpoint)), model_(std::move(model)),
        api_key_(std::move(api_key)) {}

  std::string name() const override { return "remote:" + model_; }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    if (texts.empty()) return {};
    nlohmann::json body = {{"model", model_}, {"input", texts}};
    HttpHeaders headers;
    if (!api_key_.empty()) headers.emplace_back("Authorization", "Bearer " + api_key_);
    auto res = client_->post_json(join_url(endpoint_, "embeddings"), body.dump(), headers);
    if (res.status < 200 || res.status >= 300) {
      throw TransportError("embedding request returned HTTP " + std::to_string(res.status),
                           is_transient_status(res.status));
    }
    std::vector<EmbeddingVector> out(texts.size());
    try {
      auto j = nlohmann::json::parse(res.body);
      const auto& data = j.at("data");
      if (data.size() != texts.size()) throw ProviderError("embedding count mismatch");
      for (std::size_t i = 0; i < data.size(); ++i) {
        const std::size_t idx = data[i].contains("index") ? data[i].at("index").get<std::size_t>() : i;
        if (idx >= out.size()) throw ProviderError("embedding index out of range");
        out[idx].values = data[i].at("embedding").get<std::vector<double>>();
      }
    } catch (const nlohmann::json::exception& err) {
      throw ProviderError(std::string("malformed embedding payload: ") + err.what());
    }
    check_batch(out);
    return out;
  }

private:
  std::shared_ptr<HttpClient> client_;
  std::string endpoint_;
  std::string model_;
  std::string api_key_;
};

/// Disk cache in front of another provider: one JSON file per
/// sha256(provider name, text), written to a temporary name then renamed.
class CachedEmbedder final : public EmbeddingProvider {
public:
  CachedEmbedder(std::shared_ptr<EmbeddingProvider> inner, std::filesystem::path dir)
      : inner_(std::move(inner)), dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  std::string name() const override { return inner_->name(); }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    std::vector<EmbeddingVector> out(texts.size());
    std::vector<std::string> missing;
    std::vector<std::size_t> missing_at;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (auto hit = read(key(texts[i]))) {
        out[i] = std::move(*hit);
      } else {
        missing.push_back(texts[i]);
        missing_at.push_back(i);
      }
    }
    if (!missing.empty()) {
      auto fresh = inner_->embed(missing);
      for (std::size_t k = 0; k < fresh.size(); ++k) {
        write(key(missing[k]), fresh[k]);
        out[missing_at[k]] = std::move(fresh[k]);
      }
    }
    check_batch(out);
    return out;
  }

  std::string key(std::string_view text) const {
    std::string material = inner_->name();
    material.push_back('\0');
    material.append(text);
    return text::sha256_hex(material);
  }

private:
  std::optional<EmbeddingVector> read(const std::string& k) const {
    std::ifstream in(dir_ / (k + ".json"));
    if (!in) return std::nullopt;
    try {
      auto j = nlohmann::json::parse(in);
      return EmbeddingVector{j.at("values").get<std::vector<double>>()};
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;
    }
  }

  void write(const std::string& k, const EmbeddingVector& v) const {
    const auto final_path = dir_ / (k + ".json");
    auto tmp = final_path;
    tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << nlohmann::json{{"provider", inner_->name()}, {"values", v.values}}.dump();
    }
    std::filesystem::rename(tmp, final_path);
  }

  std::shared_ptr<EmbeddingProvider> inner_;
  std::filesystem::path dir_;
};

struct FewShotConfig {
  std::size_t k = 10;
  std::string provider = "hashed-trigram";
  bool exclude_self = true;
};

struct ScoredExample {
  const Document* document = nullptr;
  double score = 0.0;
};

/// Descending score, then ascending document ID.
inline bool ranks_before(const ScoredExample& a, const ScoredExample& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.document->id < b.document->id;
}

/// Pool documents with their embeddings, computed once.
class ExampleIndex {
public:
  ExampleIndex(const Corpus& pool, std::shared_ptr<EmbeddingProvider> provider)
      : pool_(&pool), provider_(std::move(provider)) {
    std::vector<std::string> texts;
    texts.reserve(pool.documents.size());
    for (const auto& d : pool.documents) texts.push_back(d.text);
    embeddings_ = provider_->embed(texts);
    if (embeddings_.size() != texts.size()) throw ValidationError("provider returned wrong number of embeddings");
  }

  std::vector<ScoredExample> select(std::string_view query_text, std::optional<std::string_view> query_id,
                                    std::size_t k, bool exclude_self = true) const {
    if (k == 0) return {};
    const auto q = provider_->embed({std::string(query_text)});
    return rank(q.front(), query_id, k, exclude_self);
  }

  std::vector<ScoredExample> rank(const EmbeddingVector& query, std::optional<std::string_view> query_id,
                                  std::size_t k, bool exclude_self) const {
    std::vector<ScoredExample> all;
    all.reserve(embeddings_.size());
    for (std::size_t i = 0; i < embeddings_.size(); ++i) {
      const Document& d = pool_->documents[i];
      if (exclude_self && query_id && d.id == *query_id) continue;
      all.push_back({&d, cosine(query, embeddings_[i])});
    }
    const std::size_t take = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), ranks_before);
    all.resize(take);
    return all;
  }

  const Corpus& pool() const { return *pool_; }
  const EmbeddingProvider& provider() const { return *provider_; }

private:
  const Corpus* pool_;
  std::shared_ptr<EmbeddingProvider> provider_;
  std::vector<EmbeddingVector> embeddings_;
};

inline std::vector<ScoredExample> select_examples(std::string_view query, std::optional<std::string_view> query_id,
                                                  const Corpus& pool, const FewShotConfig& cfg,
                                                  std::shared_ptr<EmbeddingProvider> provider) {
  if (cfg.k == 0) return {};
  return ExampleIndex(pool, std::move(provider)).select(query, query_id, cfg.k, cfg.exclude_self);
}

}  // namespace veille
