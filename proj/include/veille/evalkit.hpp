#pragma once

// Precision / recall / F1 for entities (per label) and for events at the
// event and document levels (per document), with micro and macro averages.

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "veille/corpus.hpp"
#include "veille/error.hpp"
#include "veille/labels.hpp"
#include "veille/text.hpp"

namespace veille {

enum class MatchMode { strict, relaxed };

inline std::string_view to_string(MatchMode m) { return m == MatchMode::strict ? "strict" : "relaxed"; }

inline MatchMode parse_match_mode(std::string_view s) {
  if (s == "strict") return MatchMode::strict;
  if (s == "relaxed") return MatchMode::relaxed;
  throw ConfigError("unknown match mode '" + std::string(s) + "' (expected strict or relaxed)");
}

enum class Level { entity, event, document };

inline std::string_view to_string(Level l) {
  switch (l) {
    case Level::entity: return "entity";
    case Level::event: return "event";
    case Level::document: return "document";
  }
  return "?";
}

inline Level parse_level(std::string_view s) {
  if (s == "entity") return Level::entity;
  if (s == "event") return Level::event;
  if (s == "document") return Level::document;
  throw ConfigError("unknown level '" + std::string(s) + "' (expected entity, event or document)");
}

/// Which labels the entity-level macro average runs over.
enum class LabelInventory { present, fixed };

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const Counts&) const = default;
};

/// P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R); each 0 when undefined.
inline Scores scores_from(const Counts& c) {
  Scores s;
  if (c.tp + c.fp > 0) s.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) s.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (s.precision + s.recall > 0) s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

struct MetricsRow {
  std::string key;  // label name or document ID
  Counts counts;
  Scores scores;
};

struct MetricsReport {
  Level level = Level::entity;
  MatchMode mode = MatchMode::strict;
  std::vector<MetricsRow> rows;
  Counts pooled;
  Scores micro;
  Scores macro;
};

namespace detail {

inline void check_same_documents(const Corpus& gold, const Corpus& pred) {
  std::set<std::string> g;
  std::set<std::string> p;
  for (const auto& d : gold.documents) g.insert(d.id);
  for (const auto& d : pred.documents) p.insert(d.id);
  if (g != p || g.size() != gold.documents.size() || p.size() != pred.documents.size()) {
    std::string detail;
    for (const auto& id : g) {
      if (!p.count(id)) detail += " missing from prediction: " + id + ";";
    }
    for (const auto& id : p) {
      if (!g.count(id)) detail += " not in gold: " + id + ";";
    }
    throw ValidationError("gold and prediction document IDs differ;" + detail);
  }
}

inline void finish(MetricsReport& r) {
  for (auto& row : r.rows) {
    row.scores = scores_from(row.counts);
    r.pooled += row.counts;
  }
  r.micro = scores_from(r.pooled);
  if (!r.rows.empty()) {
    const double n = static_cast<double>(r.rows.size());
    for (const auto& row : r.rows) {
      r.macro.precision += row.scores.precision;
      r.macro.recall += row.scores.recall;
      r.macro.f1 += row.scores.f1;
    }
    r.macro.precision /= n;
    r.macro.recall /= n;
    r.macro.f1 /= n;
  }
}

/// Size of a maximum matching in the bipartite graph left×right with
/// edge(i, j) (augmenting paths).
inline std::size_t max_matching(std::size_t left, std::size_t right,
                                const std::function<bool(std::size_t, std::size_t)>& edge) {
  std::vector<std::vector<std::size_t>> adj(left);
  for (std::size_t i = 0; i < left; ++i) {
    for (std::size_t j = 0; j < right; ++j) {
      if (edge(i, j)) adj[i].push_back(j);
    }
  }
  constexpr std::size_t kFree = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(right, kFree);
  std::vector<char> visited;
  std::function<bool(std::size_t)> augment = [&](std::size_t i) {
    for (std::size_t j : adj[i]) {
      if (visited[j]) continue;
      visited[j] = 1;
      if (owner[j] == kFree || augment(owner[j])) {
        owner[j] = i;
        return true;
      }
    }
    return false;
  };
  std::size_t matched = 0;
  for (std::size_t i = 0; i < left; ++i) {
    visited.assign(right, 0);
    if (augment(i)) ++matched;
  }
  return matched;
}

inline bool covers(const Entity& gold, const Entity& pred) {
  return std::all_of(gold.fragments.begin(), gold.fragments.end(), [&](const Span& g) {
    return std::any_of(pred.fragments.begin(), pred.fragments.end(), [&](const Span& p) { return g.overlaps(p); });
  });
}

inline Counts entity_counts(const std::vector<const Entity*>& gold, const std::vector<const Entity*>& pred,
                            MatchMode mode) {
  std::size_t tp = 0;
  if (mode == MatchMode::strict) {
    // identical fragment sets: greedy pairing is already maximum
    std::vector<bool> used(pred.size(), false);
    for (const auto* g : gold) {
      for (std::size_t j = 0; j < pred.size(); ++j) {
        if (!used[j] && pred[j]->fragments == g->fragments) {
          used[j] = true;
          ++tp;
          break;
        }
      }
    }
  } else {
    tp = max_matching(gold.size(), pred.size(), [&](std::size_t i, std::size_t j) { return covers(*gold[i], *pred[j]); });
  }
  return {tp, pred.size() - tp, gold.size() - tp};
}

}  // namespace detail

inline MetricsReport score_entities(const Corpus& gold, const Corpus& pred, MatchMode mode = MatchMode::strict,
                                    LabelInventory inventory = LabelInventory::present) {
  detail::check_same_documents(gold, pred);
  std::array<Counts, kLabelCount> per_label{};
  std::array<bool, kLabelCount> seen{};
  for (const auto& g : gold.documents) {
    const Document& p = *pred.find(g.id);
    for (auto label : all_labels()) {
      std::vector<const Entity*> ge;
      std::vector<const Entity*> pe;
      for (const auto& e : g.entities) {
        if (e.label == label) ge.push_back(&e);
      }
      for (const auto& e : p.entities) {
        if (e.label == label) pe.push_back(&e);
      }
      if (ge.empty() && pe.empty()) continue;
      seen[index_of(label)] = true;
      per_label[index_of(label)] += detail::entity_counts(ge, pe, mode);
    }
  }
  MetricsReport r;
  r.level = Level::entity;
  r.mode = mode;
  for (auto label : all_labels()) {
    if (inventory == LabelInventory::present && !seen[index_of(label)]) continue;
    r.rows.push_back({std::string(to_string(label)), per_label[index_of(label)], {}});
  }
  detail::finish(r);
  return r;
}

// ---------------------------------------------------------------------------
// Events

/// (label, normalized surface); the label is empty in relaxed mode.
using MentionKey = std::pair<std::string, std::u32string>;

inline std::u32string normalized_surface(const Entity& e) {
  std::u32string joined;
  for (std::size_t i = 0; i < e.surface.size(); ++i) {
    if (i > 0) joined += U' ';
    joined += text::decode_utf8(e.surface[i]);
  }
  auto n = text::normalized(joined);
  while (!n.empty() && n.front() == U' ') n.erase(n.begin());
  while (!n.empty() && n.back() == U' ') n.pop_back();
  return n;
}

namespace detail {

inline MentionKey key_of(const Entity& e, MatchMode mode) {
  return {mode == MatchMode::strict ? std::string(to_string(e.label)) : std::string{}, normalized_surface(e)};
}

inline std::set<MentionKey> keys(const std::vector<std::string>& ids, const Document& doc, MatchMode mode,
                                 bool (*keep)(EntityLabel)) {
  std::set<MentionKey> out;
  for (const auto& id : ids) {
    const Entity* e = doc.find_entity(id);
    if (e && (!keep || keep(e->label))) out.insert(key_of(*e, mode));
  }
  return out;
}

inline bool intersects(const std::set<MentionKey>& a, const std::set<MentionKey>& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) ++i;
    else if (*j < *i) ++j;
    else return true;
  }
  return false;
}

inline bool location_kind(EntityLabel l) { return is_location_kind(l); }
inline bool date_kind(EntityLabel l) { return is_date_kind(l); }

}  // namespace detail

/// Central elements, a location and a date must each corefer (shared
/// (label, normalized surface); label ignored in relaxed mode).
inline bool match_event(const Event& g, const Event& p, const Document& gold_doc, const Document& pred_doc,
                        MatchMode mode = MatchMode::strict) {
  using detail::intersects;
  using detail::keys;
  return intersects(keys(g.central, gold_doc, mode, nullptr), keys(p.central, pred_doc, mode, nullptr)) &&
         intersects(keys(g.associated, gold_doc, mode, detail::location_kind),
                    keys(p.associated, pred_doc, mode, detail::location_kind)) &&
         intersects(keys(g.associated, gold_doc, mode, detail::date_kind),
                    keys(p.associated, pred_doc, mode, detail::date_kind));
}

/// Per-document rows; documents with nothing on either side are skipped.
inline MetricsReport score_events(const Corpus& gold, const Corpus& pred, MatchMode mode = MatchMode::strict) {
  detail::check_same_documents(gold, pred);
  MetricsReport r;
  r.level = Level::event;
  r.mode = mode;
  for (const auto& g : gold.documents) {
    const Document& p = *pred.find(g.id);
    if (g.events.empty() && p.events.empty()) continue;
    const std::size_t tp = detail::max_matching(g.events.size(), p.events.size(), [&](std::size_t i, std::size_t j) {
      return match_event(g.events[i], p.events[j], g, p, mode);
    });
    r.rows.push_back({g.id, {tp, p.events.size() - tp, g.events.size() - tp}, {}});
  }
  detail::finish(r);
  return r;
}

/// Distinct central elements of a document: events whose central mentions
/// corefer are merged, each cluster is one identity.
inline std::vector<std::set<MentionKey>> central_identities(const Document& doc, MatchMode mode) {
  std::vector<std::set<MentionKey>> sets;
  for (const auto& ev : doc.events) {
    auto k = detail::keys(ev.central, doc, mode, nullptr);
    if (!k.empty()) sets.push_back(std::move(k));
  }
  std::vector<std::size_t> parent(sets.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    return parent[x] == x ? x : parent[x] = find(parent[x]);
  };
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (std::size_t j = i + 1; j < sets.size(); ++j) {
      if (detail::intersects(sets[i], sets[j])) parent[find(j)] = find(i);
    }
  }
  std::map<std::size_t, std::set<MentionKey>> clusters;
  for (std::size_t i = 0; i < sets.size(); ++i) clusters[find(i)].insert(sets[i].begin(), sets[i].end());
  std::vector<std::set<MentionKey>> out;
  for (auto& [root, s] : clusters) out.push_back(std::move(s));
  return out;
}

inline MetricsReport score_documents(const Corpus& gold, const Corpus& pred, MatchMode mode = MatchMode::strict) {
  detail::check_same_documents(gold, pred);
  MetricsReport r;
  r.level = Level::document;
  r.mode = mode;
  for (const auto& g : gold.documents) {
    const Document& p = *pred.find(g.id);
    const auto gi = central_identities(g, mode);
    const auto pi = central_identities(p, mode);
    if (gi.empty() && pi.empty()) continue;
    const std::size_t tp = detail::max_matching(
        gi.size(), pi.size(), [&](std::size_t i, std::size_t j) { return detail::intersects(gi[i], pi[j]); });
    r.rows.push_back({g.id, {tp, pi.size() - tp, gi.size() - tp}, {}});
  }
  detail::finish(r);
  return r;
}

// ---------------------------------------------------------------------------
// Output

inline ojson to_json(const Scores& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

inline ojson to_json(const MetricsReport& r) {
  ojson rows = ojson::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"key", row.key},
                    {"tp", row.counts.tp},
                    {"fp", row.counts.fp},
                    {"fn", row.counts.fn},
                    {"precision", row.scores.precision},
                    {"recall", row.scores.recall},
                    {"f1", row.scores.f1}});
  }
  return {{"level", to_string(r.level)},
          {"match", to_string(r.mode)},
          {"rows", std::move(rows)},
          {"counts", {{"tp", r.pooled.tp}, {"fp", r.pooled.fp}, {"fn", r.pooled.fn}}},
          {"micro", to_json(r.micro)},
          {"macro", to_json(r.macro)}};
}

inline std::string metrics_table(const MetricsReport& r) {
  std::size_t width = r.level == Level::entity ? 5 : 8;
  for (const auto& row : r.rows) width = std::max(width, row.key.size());
  char buf[256];
  std::string out;
  auto line = [&](std::string_view key, const Scores& s, const Counts* c) {
    std::string k(key);
    k.resize(width, ' ');
    if (c) {
      std::snprintf(buf, sizeof buf, "  %7.2f %7.2f %7.2f %6zu %6zu %6zu\n", 100 * s.precision, 100 * s.recall,
                    100 * s.f1, c->tp, c->fp, c->fn);
    } else {
      std::snprintf(buf, sizeof buf, "  %7.2f %7.2f %7.2f\n", 100 * s.precision, 100 * s.recall, 100 * s.f1);
    }
    out += k + buf;
  };
  std::string head(r.level == Level::entity ? "label" : "document");
  head.resize(width, ' ');
  std::snprintf(buf, sizeof buf, "  %7s %7s %7s %6s %6s %6s\n", "P", "R", "F1", "TP", "FP", "FN");
  out += head + buf;
  for (const auto& row : r.rows) line(row.key, row.scores, &row.counts);
  out += std::string(width + 48, '-') + "\n";
  line("micro", r.micro, &r.pooled);
  line("macro", r.macro, nullptr);
  return out;
}

}  // namespace veille
