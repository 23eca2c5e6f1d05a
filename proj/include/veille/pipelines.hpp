#pragma once

// The three run shapes: few-shot NER, verification of a first pass with
// merge, and event extraction over anchored entities.

#include <algorithm>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "veille/align.hpp"
#include "veille/corpus.hpp"
#include "veille/error.hpp"
#include "veille/fewshot.hpp"
#include "veille/labels.hpp"
#include "veille/llmgate.hpp"
#include "veille/parallel.hpp"
#include "veille/promptkit.hpp"
#include "veille/xmltag.hpp"

namespace veille {

struct StageSettings {
  std::string template_name;
  std::string model = "gpt-4.1";
  double temperature = 0.0;
  int max_output = 4096;
};

enum class MergePolicy { union_merge, verifier_authoritative };

inline std::string_view to_string(MergePolicy p) {
  return p == MergePolicy::union_merge ? "union" : "verifier";
}

inline MergePolicy parse_merge_policy(std::string_view s) {
  if (s == "union") return MergePolicy::union_merge;
  if (s == "verifier" || s == "verifier_authoritative") return MergePolicy::verifier_authoritative;
  throw ConfigError("unknown merge policy '" + std::string(s) + "' (expected union or verifier)");
}

struct EventPolicy {
  std::size_t max_events = 10;
  bool warn_doc_date = true;
};

struct RunConfig {
  FewShotConfig fewshot;
  StageSettings ner{"ner"};
  StageSettings verify{"verify"};
  StageSettings events{"events"};
  AlignOptions align;
  MergePolicy merge = MergePolicy::union_merge;
  EventPolicy event_policy;
  ParseOptions parse{UnknownLabelPolicy::drop, true};
  std::size_t jobs = 1;
};

inline void check_run_config(const RunConfig& cfg, const TemplateSet& templates) {
  for (const auto* s : {&cfg.ner, &cfg.verify, &cfg.events}) {
    if (!templates.contains(s->template_name)) {
      throw ConfigError("run configuration references unknown template '" + s->template_name + "'");
    }
    if (s->temperature < 0.0) throw ConfigError("negative temperature for template '" + s->template_name + "'");
  }
  if (cfg.event_policy.max_events == 0) throw ConfigError("max_events must be positive");
}

namespace detail {

/// Drops a surrounding ``` fence (with optional language tag) if present.
inline std::string_view strip_fence(std::string_view s) {
  auto trim = [](std::string_view v) {
    while (!v.empty() && (v.front() == ' ' || v.front() == '\n' || v.front() == '\r' || v.front() == '\t')) {
      v.remove_prefix(1);
    }
    while (!v.empty() && (v.back() == ' ' || v.back() == '\n' || v.back() == '\r' || v.back() == '\t')) {
      v.remove_suffix(1);
    }
    return v;
  };
  std::string_view t = trim(s);
  if (t.size() < 6 || t.substr(0, 3) != "```" || t.substr(t.size() - 3) != "```") return s;
  const auto nl = t.find('\n');
  if (nl == std::string_view::npos || nl >= t.size() - 3) return s;
  return t.substr(nl + 1, t.size() - 3 - (nl + 1));
}

inline CompletionRequest make_request(const StageSettings& st, std::vector<ChatMessage> messages,
                                      std::string tag) {
  return {st.model, std::move(messages), st.temperature, st.max_output, std::move(tag)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// NER

struct NerResult {
  std::vector<Entity> entities;
  std::vector<Rejection> rejections;
  std::vector<std::string> warnings;
};

/// Parses and anchors one annotated completion against `source`.
inline NerResult anchor_completion(std::string_view source, std::string_view completion, const RunConfig& cfg) {
  NerResult out;
  ParseOutcome parsed;
  try {
    parsed = parse_annotated(detail::strip_fence(completion), cfg.parse);
  } catch (const ValidationError& err) {
    if (!cfg.parse.lenient) throw;
    out.warnings.push_back(std::string("unparseable annotation: ") + err.what());
    return out;
  }
  auto anchored = anchor_entities(source, parsed, cfg.align);
  out.entities = std::move(anchored.entities);
  out.rejections = std::move(anchored.rejections);
  out.warnings = std::move(parsed.warnings);
  out.warnings.insert(out.warnings.end(), anchored.warnings.begin(), anchored.warnings.end());
  return out;
}

inline std::vector<ChatMessage> ner_messages(const Document& doc, const ExampleIndex& pool, const RunConfig& cfg,
                                             const TemplateSet& templates) {
  std::vector<NerExample> examples;
  for (const auto& s : pool.select(doc.text, doc.id, cfg.fewshot.k, cfg.fewshot.exclude_self)) {
    examples.push_back({s.document->text, render_inline_xml(*s.document)});
  }
  return build_ner_messages(templates.get(cfg.ner.template_name), examples, doc.text);
}

inline NerResult run_ner(const Document& doc, const ExampleIndex& pool, const RunConfig& cfg,
                         const TemplateSet& templates, Gateway& gateway) {
  auto resp = gateway.complete(detail::make_request(cfg.ner, ner_messages(doc, pool, cfg, templates), "ner"));
  return anchor_completion(doc.text, resp.content, cfg);
}

// ---------------------------------------------------------------------------
// Verification and merge

struct Relabel {
  std::string id;
  EntityLabel from = EntityLabel::LOCATION;
  EntityLabel to = EntityLabel::LOCATION;
};

struct MergeDiff {
  std::vector<Entity> added;
  std::vector<Relabel> relabeled;
  std::vector<Entity> dropped;

  bool empty() const { return added.empty() && relabeled.empty() && dropped.empty(); }
};

struct VerifyResult {
  std::vector<Entity> entities;
  MergeDiff diff;
  std::vector<Rejection> rejections;
  std::vector<std::string> warnings;
};

/// Combines first-pass entities with anchored verifier output. First-pass IDs
/// survive; verifier-only entities get fresh "V<n>" IDs.
inline std::pair<std::vector<Entity>, MergeDiff> merge_entities(const std::vector<Entity>& first_pass,
                                                                const std::vector<Entity>& verifier,
                                                                MergePolicy policy) {
  std::set<std::string> taken;
  for (const auto& e : first_pass) taken.insert(e.id);
  std::size_t counter = 0;
  auto fresh_id = [&] {
    std::string id;
    do id = "V" + std::to_string(++counter);
    while (taken.count(id));
    taken.insert(id);
    return id;
  };
  auto same_spans = [](const Entity& a, const Entity& b) { return a.fragments == b.fragments; };

  MergeDiff diff;
  std::vector<Entity> out;
  if (policy == MergePolicy::union_merge) {
    out = first_pass;
    for (const auto& v : verifier) {
      const bool exact = std::any_of(out.begin(), out.end(), [&](const Entity& e) {
        return e.label == v.label && same_spans(e, v);
      });
      if (exact) continue;
      auto conflict = std::find_if(out.begin(), out.end(), [&](const Entity& e) { return same_spans(e, v); });
      if (conflict != out.end()) {
        diff.relabeled.push_back({conflict->id, conflict->label, v.label});
        conflict->label = v.label;
        continue;
      }
      Entity added = v;
      added.id = fresh_id();
      diff.added.push_back(added);
      out.push_back(std::move(added));
    }
    return {std::move(out), std::move(diff)};
  }

  std::vector<bool> used(first_pass.size(), false);
  for (const auto& v : verifier) {
    Entity e = v;
    std::optional<std::size_t> match;
    for (std::size_t i = 0; i < first_pass.size() && !match; ++i) {
      if (!used[i] && first_pass[i].label == v.label && same_spans(first_pass[i], v)) match = i;
    }
    for (std::size_t i = 0; i < first_pass.size() && !match; ++i) {
      if (!used[i] && same_spans(first_pass[i], v)) match = i;
    }
    if (match) {
      used[*match] = true;
      e.id = first_pass[*match].id;
      if (first_pass[*match].label != v.label) diff.relabeled.push_back({e.id, first_pass[*match].label, v.label});
    } else {
      e.id = fresh_id();
      diff.added.push_back(e);
    }
    out.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < first_pass.size(); ++i) {
    if (!used[i]) diff.dropped.push_back(first_pass[i]);
  }
  return {std::move(out), std::move(diff)};
}

inline VerifyResult run_verify_merge(const Document& doc, const std::vector<Entity>& first_pass,
                                     const RunConfig& cfg, const TemplateSet& templates, Gateway& gateway) {
  Document view{doc.id, doc.text, first_pass, {}};
  if (auto v = validate_document(view); !v.empty()) {
    throw CorpusError(doc.id, "first-pass entities invalid: " + describe(v.front()));
  }
  auto messages = build_verifier_messages(templates.get(cfg.verify.template_name), render_inline_xml(view));
  auto resp = gateway.complete(detail::make_request(cfg.verify, std::move(messages), "verify"));
  NerResult verified = anchor_completion(doc.text, resp.content, cfg);

  VerifyResult out;
  std::tie(out.entities, out.diff) = merge_entities(first_pass, verified.entities, cfg.merge);
  out.rejections = std::move(verified.rejections);
  out.warnings = std::move(verified.warnings);
  return out;
}

// ---------------------------------------------------------------------------
// Events

inline constexpr std::string_view kCentralAttribute = "evt:central_element";
inline constexpr std::string_view kAssociatedAttribute = "evt:associated_element";

/// Reads the events array from untrusted model output. Accepts a bare array
/// or an object wrapping it under "events". IDs not among `entities` are
/// dropped with a warning.
inline std::vector<Event> parse_event_output(std::string_view raw, const std::vector<Entity>& entities,
                                             std::vector<std::string>* warnings = nullptr) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::strip_fence(raw));
  } catch (const nlohmann::json::parse_error& err) {
    throw EventParseError(std::string("malformed events JSON: ") + err.what());
  }
  if (j.is_object() && j.contains("events")) j = j["events"];
  if (!j.is_array()) throw EventParseError("events output is not a JSON array");

  std::set<std::string, std::less<>> known;
  for (const auto& e : entities) known.insert(e.id);
  auto warn = [&](std::string w) {
    if (warnings) warnings->push_back(std::move(w));
  };

  std::vector<Event> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& ev = j[i];
    if (!ev.is_array()) throw EventParseError("event " + std::to_string(i) + " is not an array");
    Event e;
    for (const auto& part : ev) {
      if (!part.is_object() || !part.contains("attribute") || !part["attribute"].is_string()) {
        throw EventParseError("event " + std::to_string(i) + " has an element without an attribute");
      }
      const std::string attr = part["attribute"].get<std::string>();
      std::vector<std::string>* target = nullptr;
      if (attr == kCentralAttribute) target = &e.central;
      else if (attr == kAssociatedAttribute) target = &e.associated;
      else throw EventParseError("event " + std::to_string(i) + " has unknown attribute '" + attr + "'");
      const auto occ = part.value("occurrences", nlohmann::json::array());
      if (!occ.is_array()) throw EventParseError("event " + std::to_string(i) + " occurrences is not an array");
      for (const auto& id : occ) {
        if (!id.is_string()) throw EventParseError("event " + std::to_string(i) + " has a non-string occurrence");
        const auto s = id.get<std::string>();
        if (!known.count(s)) {
          warn("event " + std::to_string(i) + ": unknown entity ID '" + s + "' dropped");
          continue;
        }
        if (std::find(target->begin(), target->end(), s) == target->end()) target->push_back(s);
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

struct RepairResult {
  std::vector<Event> events;
  std::vector<Violation> violations;
  std::vector<std::string> warnings;
};

/// Enforces the event rules on parsed candidates. Earlier events win every
/// conflict; events left without a central element, a location or a date are
/// dropped. Violations describe each repair.
inline RepairResult validate_and_repair(const std::vector<Event>& candidates, const std::vector<Entity>& entities,
                                        const EventPolicy& policy, std::string_view document_id = {}) {
  std::map<std::string, EntityLabel, std::less<>> label_of;
  for (const auto& e : entities) label_of.emplace(e.id, e.label);

  RepairResult out;
  std::set<std::string> claimed;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Event& cand = candidates[i];
    const std::string subject = "event#" + std::to_string(i);
    auto add = [&](std::string_view r, std::string detail) {
      out.violations.push_back({std::string(document_id), subject, std::string(r), std::move(detail)});
    };

    std::optional<std::string_view> drop_rule;
    Event ev;
    std::set<std::string> seen;
    bool central_invalid = false;
    std::optional<EntityLabel> central_label;
    for (const auto& id : cand.central) {
      if (!seen.insert(id).second) continue;
      auto it = label_of.find(id);
      if (it == label_of.end()) {
        add(rule::kUnknownId, id);
        continue;
      }
      if (!is_central_kind(it->second)) {
        add(rule::kInvalidCentral, id + " is " + std::string(to_string(it->second)));
        central_invalid = true;
        continue;
      }
      if (central_label && *central_label != it->second) {
        add(rule::kMultipleCentral, id + " is " + std::string(to_string(it->second)) + ", expected " +
                                        std::string(to_string(*central_label)));
        continue;
      }
      if (claimed.count(id)) {
        add(rule::kIdReuse, id + " already used by an earlier event");
        continue;
      }
      central_label = it->second;
      ev.central.push_back(id);
    }
    if (ev.central.empty()) drop_rule = cand.central.empty() || !central_invalid ? rule::kMissingCentral
                                                                                 : rule::kInvalidCentral;

    bool has_location = false;
    bool has_date = false;
    for (const auto& id : cand.associated) {
      if (std::find(cand.central.begin(), cand.central.end(), id) != cand.central.end()) {
        add(rule::kIdReuse, id + " is both central and associated");
        continue;
      }
      if (!seen.insert(id).second) continue;
      auto it = label_of.find(id);
      if (it == label_of.end()) {
        add(rule::kUnknownId, id);
        continue;
      }
      const bool loc = is_location_kind(it->second);
      const bool date = is_date_kind(it->second);
      if (!loc && !date) {
        add(rule::kInvalidAssociated, id + " is " + std::string(to_string(it->second)));
        continue;
      }
      if (claimed.count(id)) {
        add(rule::kIdReuse, id + " already used by an earlier event");
        continue;
      }
      has_location = has_location || loc;
      has_date = has_date || date;
      ev.associated.push_back(id);
    }
    if (!drop_rule && !has_location) drop_rule = rule::kMissingLocation;
    if (!drop_rule && !has_date) drop_rule = rule::kMissingDate;

    if (drop_rule) {
      if (*drop_rule == rule::kInvalidCentral) {
        add(*drop_rule, "no valid central element left; event dropped");
      } else {
        add(*drop_rule, "event dropped");
      }
      continue;
    }
    for (const auto& id : ev.central) claimed.insert(id);
    for (const auto& id : ev.associated) claimed.insert(id);
    out.events.push_back(std::move(ev));
  }

  if (out.events.size() > policy.max_events) {
    out.violations.push_back({std::string(document_id), std::string(document_id), std::string(rule::kEventLimit),
                              std::to_string(out.events.size()) + " events, kept the first " +
                                  std::to_string(policy.max_events)});
    out.events.resize(policy.max_events);
  }

  if (policy.warn_doc_date) {
    const bool other_date = std::any_of(entities.begin(), entities.end(), [](const Entity& e) {
      return is_date_kind(e.label) && e.label != EntityLabel::DOC_DATE;
    });
    for (std::size_t i = 0; i < out.events.size() && other_date; ++i) {
      for (const auto& id : out.events[i].associated) {
        if (label_of.at(id) == EntityLabel::DOC_DATE) {
          out.warnings.push_back("event " + std::to_string(i) + " uses DOC_DATE " + id +
                                 " although the document has another date");
        }
      }
    }
  }
  return out;
}

struct EventsResult {
  std::vector<Event> events;
  std::vector<Violation> violations;
  std::vector<std::string> warnings;
};

inline std::vector<ChatMessage> event_messages(const Document& doc, const std::vector<Entity>& entities,
                                               const ExampleIndex& pool, const RunConfig& cfg,
                                               const TemplateSet& templates) {
  std::vector<EventExample> examples;
  for (const auto& s : pool.select(doc.text, doc.id, cfg.fewshot.k, cfg.fewshot.exclude_self)) {
    examples.push_back({s.document->text, s.document->entities, s.document->events});
  }
  return build_event_messages(templates.get(cfg.events.template_name), examples, doc.text, entities);
}

inline EventsResult run_events(const Document& doc, const std::vector<Entity>& entities, const ExampleIndex& pool,
                               const RunConfig& cfg, const TemplateSet& templates, Gateway& gateway) {
  EventsResult out;
  if (entities.empty()) return out;
  auto resp = gateway.complete(
      detail::make_request(cfg.events, event_messages(doc, entities, pool, cfg, templates), "events"));
  std::vector<Event> candidates;
  try {
    candidates = parse_event_output(resp.content, entities, &out.warnings);
  } catch (const EventParseError& err) {
    out.warnings.push_back(err.what());
    return out;
  }
  auto repaired = validate_and_repair(candidates, entities, cfg.event_policy, doc.id);
  out.events = std::move(repaired.events);
  out.violations = std::move(repaired.violations);
  out.warnings.insert(out.warnings.end(), repaired.warnings.begin(), repaired.warnings.end());
  return out;
}

// ---------------------------------------------------------------------------
// Corpus-level runs

struct DocumentReport {
  std::string document_id;
  std::vector<Rejection> rejections;
  std::vector<Violation> violations;
  std::vector<std::string> warnings;
  std::optional<MergeDiff> diff;
};

struct RunReport {
  std::string stage;
  Corpus output;
  std::vector<DocumentReport> documents;
  UsageReport usage;
};

namespace detail {

inline void assert_valid_output(const Document& d) {
  if (auto v = validate_document(d); !v.empty()) {
    throw CorpusError(d.id, "pipeline produced an invalid document: " + describe(v.front()));
  }
}

inline std::size_t effective_jobs(const RunConfig& cfg, const Gateway& gw) {
  return std::max<std::size_t>(1, std::min(cfg.jobs, gw.config().parallelism));
}

}  // namespace detail

inline RunReport run_ner_corpus(const Corpus& input, const ExampleIndex& pool, const RunConfig& cfg,
                                const TemplateSet& templates, Gateway& gateway) {
  check_run_config(cfg, templates);
  RunReport rep;
  rep.stage = "ner";
  rep.output.documents.resize(input.documents.size());
  rep.documents.resize(input.documents.size());
  parallel_for(input.documents.size(), detail::effective_jobs(cfg, gateway), [&](std::size_t i) {
    const Document& d = input.documents[i];
    auto r = run_ner(d, pool, cfg, templates, gateway);
    Document out{d.id, d.text, std::move(r.entities), {}};
    detail::assert_valid_output(out);
    rep.output.documents[i] = std::move(out);
    rep.documents[i] = {d.id, std::move(r.rejections), {}, std::move(r.warnings), std::nullopt};
  });
  rep.usage = gateway.usage();
  return rep;
}

inline RunReport run_verify_corpus(const Corpus& first_pass, const RunConfig& cfg, const TemplateSet& templates,
                                   Gateway& gateway) {
  check_run_config(cfg, templates);
  RunReport rep;
  rep.stage = "verify";
  rep.output.documents.resize(first_pass.documents.size());
  rep.documents.resize(first_pass.documents.size());
  parallel_for(first_pass.documents.size(), detail::effective_jobs(cfg, gateway), [&](std::size_t i) {
    const Document& d = first_pass.documents[i];
    auto r = run_verify_merge(d, d.entities, cfg, templates, gateway);
    Document out{d.id, d.text, std::move(r.entities), {}};
    detail::assert_valid_output(out);
    rep.output.documents[i] = std::move(out);
    rep.documents[i] = {d.id, std::move(r.rejections), {}, std::move(r.warnings), std::move(r.diff)};
  });
  rep.usage = gateway.usage();
  return rep;
}

inline RunReport run_events_corpus(const Corpus& with_entities, const ExampleIndex& pool, const RunConfig& cfg,
                                   const TemplateSet& templates, Gateway& gateway) {
  check_run_config(cfg, templates);
  RunReport rep;
  rep.stage = "events";
  rep.output.documents.resize(with_entities.documents.size());
  rep.documents.resize(with_entities.documents.size());
  parallel_for(with_entities.documents.size(), detail::effective_jobs(cfg, gateway), [&](std::size_t i) {
    const Document& d = with_entities.documents[i];
    auto r = run_events(d, d.entities, pool, cfg, templates, gateway);
    Document out{d.id, d.text, d.entities, std::move(r.events)};
    detail::assert_valid_output(out);
    rep.output.documents[i] = std::move(out);
    rep.documents[i] = {d.id, {}, std::move(r.violations), std::move(r.warnings), std::nullopt};
  });
  rep.usage = gateway.usage();
  return rep;
}

// ---------------------------------------------------------------------------
// Sidecar report

inline ojson to_json(const Rejection& r) {
  return {{"label", to_string(r.label)}, {"surfaces", r.surfaces}, {"reason", r.reason}};
}

inline ojson to_json(const Violation& v) {
  return {{"subject", v.subject}, {"rule", v.rule}, {"detail", v.detail}};
}

inline ojson to_json(const MergeDiff& d) {
  ojson added = ojson::array();
  for (const auto& e : d.added) added.push_back(to_json(e));
  ojson relabeled = ojson::array();
  for (const auto& r : d.relabeled) {
    relabeled.push_back({{"id", r.id}, {"from", to_string(r.from)}, {"to", to_string(r.to)}});
  }
  ojson dropped = ojson::array();
  for (const auto& e : d.dropped) dropped.push_back(to_json(e));
  return {{"added", std::move(added)}, {"relabeled", std::move(relabeled)}, {"dropped", std::move(dropped)}};
}

inline ojson report_json(const RunReport& rep) {
  ojson docs = ojson::array();
  for (const auto& d : rep.documents) {
    ojson j = {{"id", d.document_id}};
    ojson rej = ojson::array();
    for (const auto& r : d.rejections) rej.push_back(to_json(r));
    ojson vio = ojson::array();
    for (const auto& v : d.violations) vio.push_back(to_json(v));
    j["rejections"] = std::move(rej);
    j["violations"] = std::move(vio);
    j["warnings"] = d.warnings;
    if (d.diff) j["diff"] = to_json(*d.diff);
    docs.push_back(std::move(j));
  }
  return {{"stage", rep.stage}, {"documents", std::move(docs)}, {"usage", to_json(rep.usage)}};
}

struct RunTotals {
  std::size_t documents = 0;
  std::size_t entities = 0;
  std::size_t events = 0;
  std::size_t rejections = 0;
  std::size_t violations = 0;
  std::size_t warnings = 0;
};

inline RunTotals totals(const RunReport& rep) {
  RunTotals t;
  t.documents = rep.output.documents.size();
  for (const auto& d : rep.output.documents) {
    t.entities += d.entities.size();
    t.events += d.events.size();
  }
  for (const auto& d : rep.documents) {
    t.rejections += d.rejections.size();
    t.violations += d.violations.size();
    t.warnings += d.warnings.size();
  }
  return t;
}

}  // namespace veille
