#pragma once

// Synthetic corpus generation: annotated variants of seed documents, offset
// repair and filtering.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdlib>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "veille/corpus.hpp"
#include "veille/error.hpp"
#include "veille/labels.hpp"
#include "veille/llmgate.hpp"
#include "veille/parallel.hpp"
#include "veille/pipelines.hpp"
#include "veille/promptkit.hpp"
#include "veille/text.hpp"
#include "veille/xmltag.hpp"

namespace veille {

struct AugmentConfig {
  std::size_t variants_per_seed = 40;
  std::vector<double> temperature_schedule{0.7, 1.0};
  std::size_t max_retries = 1;
  StageSettings stage{"augment"};
  std::size_t jobs = 1;
};

inline void check_augment_config(const AugmentConfig& cfg) {
  if (cfg.variants_per_seed < 1) throw ConfigError("variants_per_seed must be at least 1");
  if (cfg.temperature_schedule.empty()) throw ConfigError("temperature schedule is empty");
  for (double t : cfg.temperature_schedule) {
    if (t < 0.0) throw ConfigError("temperature schedule contains a negative value");
  }
}

inline double scheduled_temperature(const AugmentConfig& cfg, std::size_t variant) {
  return cfg.temperature_schedule[variant % cfg.temperature_schedule.size()];
}

struct Candidate {
  std::string seed_id;
  std::size_t variant = 0;
  std::size_t attempts = 0;
  double temperature = 0.0;
  Document document;
  bool malformed = false;
  std::string error;  // last failure, if any
};

/// Turns one annotated completion into a candidate document whose offsets
/// point into its own plain text. Throws on markup that is not well formed.
inline Document candidate_from_annotation(std::string id, std::string_view annotated) {
  auto parsed = parse_annotated(detail::strip_fence(annotated), ParseOptions{UnknownLabelPolicy::strict, false});
  Document d;
  d.id = std::move(id);
  d.text = parsed.plain;
  std::size_t n = 0;
  for (auto& p : group_discontinuous(parsed.mentions)) {
    d.entities.push_back({"T" + std::to_string(++n), p.label, std::move(p.spans), std::move(p.surfaces)});
  }
  return d;
}

inline std::string variant_id(std::string_view seed_id, std::size_t variant) {
  return std::string(seed_id) + "-v" + std::to_string(variant + 1);
}

/// One completion per variant. A failed variant is retried with a fresh
/// variant index in the prompt; the last failure stays on the candidate.
inline std::vector<Candidate> generate_variants(const Document& seed, const AugmentConfig& cfg,
                                                const TemplateSet& templates, Gateway& gateway) {
  check_augment_config(cfg);
  if (seed.entities.empty()) throw ValidationError("seed document " + seed.id + " has no entities");
  if (auto v = validate_document(seed); !v.empty()) {
    throw CorpusError(seed.id, "invalid seed: " + describe(v.front()));
  }
  const PromptTemplate& t = templates.get(cfg.stage.template_name);
  std::vector<Candidate> out(cfg.variants_per_seed);
  parallel_for(out.size(), std::max<std::size_t>(1, std::min(cfg.jobs, gateway.config().parallelism)),
               [&](std::size_t v) {
                 Candidate& c = out[v];
                 c.seed_id = seed.id;
                 c.variant = v;
                 c.temperature = scheduled_temperature(cfg, v);
                 for (std::size_t attempt = 0; attempt <= cfg.max_retries; ++attempt) {
                   ++c.attempts;
                   const std::size_t effective = v + attempt * cfg.variants_per_seed;
                   try {
                     CompletionRequest req{cfg.stage.model, build_augment_messages(t, seed, effective + 1),
                                           c.temperature, cfg.stage.max_output, "augment"};
                     auto resp = gateway.complete(req);
                     c.document = candidate_from_annotation(variant_id(seed.id, v), resp.content);
                     c.malformed = false;
                     c.error.clear();
                     break;
                   } catch (const ValidationError& err) {
                     c.malformed = true;
                     c.error = err.what();
                   } catch (const TransportError& err) {
                     c.malformed = true;
                     c.error = err.what();
                   }
                 }
               });
  return out;
}

struct OffsetRepair {
  std::optional<Document> document;
  std::string reason;  // set when rejected
  std::size_t moved = 0;
};

/// Keeps fragments whose slice already equals the surface, moves the others
/// to the nearest occurrence of their surface (ties go to the earlier one) and
/// rejects the document when a surface does not occur at all.
inline OffsetRepair repair_offsets(const Document& candidate) {
  OffsetRepair out;
  std::u32string text;
  try {
    text = text::decode_utf8(candidate.text);
  } catch (const EncodingError& err) {
    out.reason = err.what();
    return out;
  }
  Document d = candidate;
  for (auto& e : d.entities) {
    if (e.fragments.empty() || e.surface.size() != e.fragments.size()) {
      out.reason = "entity " + e.id + " has mismatched fragments and surfaces";
      return out;
    }
    std::vector<std::pair<Span, std::string>> frags;
    for (std::size_t i = 0; i < e.fragments.size(); ++i) {
      Span f = e.fragments[i];
      const std::u32string want = text::decode_utf8(e.surface[i]);
      if (want.empty()) {
        out.reason = "entity " + e.id + " has an empty surface";
        return out;
      }
      const bool in_bounds = f.start <= f.end && f.end <= text.size();
      if (!in_bounds || text.compare(f.start, f.length(), want) != 0) {
        std::optional<std::size_t> best;
        std::size_t best_dist = 0;
        for (auto at = text.find(want); at != std::u32string::npos; at = text.find(want, at + 1)) {
          const std::size_t dist = at > f.start ? at - f.start : f.start - at;
          if (!best || dist < best_dist) {
            best = at;
            best_dist = dist;
          }
        }
        if (!best) {
          out.reason = "surface '" + e.surface[i] + "' of entity " + e.id + " not found in text";
          return out;
        }
        f = {*best, *best + want.size()};
        ++out.moved;
      }
      frags.emplace_back(f, e.surface[i]);
    }
    std::sort(frags.begin(), frags.end());
    e.fragments.clear();
    e.surface.clear();
    for (auto& [f, s] : frags) {
      e.fragments.push_back(f);
      e.surface.push_back(std::move(s));
    }
  }
  if (auto v = validate_document(d); !v.empty()) {
    out.reason = describe(v.front());
    return out;
  }
  out.document = std::move(d);
  return out;
}

/// Labels of `seed` with no entity in `variant`.
inline std::vector<EntityLabel> missing_labels(const Document& seed, const Document& variant) {
  const auto have = labels_present(variant);
  std::vector<EntityLabel> out;
  for (auto l : labels_present(seed)) {
    if (!std::binary_search(have.begin(), have.end(), l)) out.push_back(l);
  }
  return out;
}

struct AugmentRejection {
  std::string seed_id;
  std::size_t variant = 0;
  std::string reason;
};

struct AugmentReport {
  Corpus accepted;
  std::vector<AugmentRejection> rejections;
  std::size_t attempts = 0;
};

/// Repair and filter stage applied to generated candidates.
inline void accept_candidates(const Document& seed, std::vector<Candidate> candidates, AugmentReport& rep) {
  for (auto& c : candidates) {
    rep.attempts += c.attempts;
    if (c.malformed) {
      rep.rejections.push_back({seed.id, c.variant, "malformed: " + c.error});
      continue;
    }
    auto fixed = repair_offsets(c.document);
    if (!fixed.document) {
      rep.rejections.push_back({seed.id, c.variant, "offset repair: " + fixed.reason});
      continue;
    }
    if (fixed.document->entities.empty()) {
      rep.rejections.push_back({seed.id, c.variant, "no entities"});
      continue;
    }
    if (auto lost = missing_labels(seed, *fixed.document); !lost.empty()) {
      std::string names;
      for (auto l : lost) names += (names.empty() ? "" : ", ") + std::string(to_string(l));
      rep.rejections.push_back({seed.id, c.variant, "labels lost: " + names});
      continue;
    }
    rep.accepted.documents.push_back(std::move(*fixed.document));
  }
}

inline AugmentReport augment_corpus(const Corpus& seeds, const AugmentConfig& cfg, const TemplateSet& templates,
                                    Gateway& gateway) {
  check_augment_config(cfg);
  AugmentReport rep;
  for (const auto& seed : seeds.documents) {
    if (seed.entities.empty()) {
      rep.rejections.push_back({seed.id, 0, "seed has no entities"});
      continue;
    }
    accept_candidates(seed, generate_variants(seed, cfg, templates, gateway), rep);
  }
  return rep;
}

inline ojson to_json(const AugmentRejection& r) {
  return {{"seed", r.seed_id}, {"variant", r.variant + 1}, {"reason", r.reason}};
}

// ---------------------------------------------------------------------------
// Statistics

struct CorpusStats {
  std::array<std::size_t, kLabelCount> per_label{};
  std::size_t documents = 0;
  std::size_t entities = 0;
  std::size_t fragments = 0;
  std::size_t discontinuous = 0;
  std::size_t events = 0;

  std::size_t count(EntityLabel l) const { return per_label[index_of(l)]; }
};

inline CorpusStats corpus_stats(const Corpus& c) {
  CorpusStats s;
  s.documents = c.documents.size();
  for (const auto& d : c.documents) {
    for (const auto& e : d.entities) {
      ++s.per_label[index_of(e.label)];
      ++s.entities;
      s.fragments += e.fragments.size();
      if (e.discontinuous()) ++s.discontinuous;
    }
    s.events += d.events.size();
  }
  return s;
}

inline ojson to_json(const CorpusStats& s) {
  ojson labels = ojson::object();
  for (auto l : all_labels()) labels[std::string(to_string(l))] = s.count(l);
  return {{"documents", s.documents},   {"entities", s.entities}, {"fragments", s.fragments},
          {"discontinuous", s.discontinuous}, {"events", s.events},     {"labels", std::move(labels)}};
}

inline std::string stats_table(const CorpusStats& s) {
  std::string out;
  auto row = [&](std::string_view name, std::size_t n) {
    std::string line(name);
    line.resize(std::max<std::size_t>(line.size() + 1, 20), ' ');
    out += line + std::to_string(n) + "\n";
  };
  for (auto l : all_labels()) row(to_string(l), s.count(l));
  out += std::string(28, '-') + "\n";
  row("entities", s.entities);
  row("discontinuous", s.discontinuous);
  row("events", s.events);
  row("documents", s.documents);
  return out;
}

}  // namespace veille
