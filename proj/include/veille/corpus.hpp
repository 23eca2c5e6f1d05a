#pragma once

// Documents, entities and events; the JSON corpus format; validation and
// inline-XML rendering of annotations.

#include <algorithm>
#include <compare>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "veille/error.hpp"
#include "veille/labels.hpp"
#include "veille/text.hpp"

namespace veille {

/// Half-open range of code points [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const noexcept { return end - start; }
  bool overlaps(const Span& o) const noexcept { return start < o.end && o.start < end; }
  auto operator<=>(const Span&) const = default;
};

struct Entity {
  std::string id;
  EntityLabel label = EntityLabel::LOCATION;
  std::vector<Span> fragments;
  std::vector<std::string> surface;  // one per fragment

  bool discontinuous() const noexcept { return fragments.size() > 1; }
  bool operator==(const Entity&) const = default;
};

struct Event {
  std::vector<std::string> central;
  std::vector<std::string> associated;

  bool operator==(const Event&) const = default;
};

struct Document {
  std::string id;
  std::string text;  // UTF-8
  std::vector<Entity> entities;
  std::vector<Event> events;

  const Entity* find_entity(std::string_view entity_id) const {
    for (const auto& e : entities) {
      if (e.id == entity_id) return &e;
    }
    return nullptr;
  }
  bool operator==(const Document&) const = default;
};

struct Corpus {
  std::vector<Document> documents;

  const Document* find(std::string_view doc_id) const {
    for (const auto& d : documents) {
      if (d.id == doc_id) return &d;
    }
    return nullptr;
  }
  bool operator==(const Corpus&) const = default;
};

/// Names of the rules checked by validate_document and the event repair step.
namespace rule {
inline constexpr std::string_view kEncoding = "invalid UTF-8";
inline constexpr std::string_view kEmptyId = "empty ID";
inline constexpr std::string_view kDuplicateId = "duplicate entity ID";
inline constexpr std::string_view kNoFragments = "no fragments";
inline constexpr std::string_view kSpanBounds = "span bounds";
inline constexpr std::string_view kFragmentOrder = "fragment order";
inline constexpr std::string_view kSurfaceCount = "surface count";
inline constexpr std::string_view kSurfaceMismatch = "surface mismatch";
inline constexpr std::string_view kUnknownId = "unknown ID";
inline constexpr std::string_view kMissingCentral = "missing central";
inline constexpr std::string_view kInvalidCentral = "invalid central label";
inline constexpr std::string_view kMultipleCentral = "multiple central elements";
inline constexpr std::string_view kInvalidAssociated = "invalid associated label";
inline constexpr std::string_view kMissingLocation = "missing location";
inline constexpr std::string_view kMissingDate = "missing date";
inline constexpr std::string_view kIdReuse = "ID reuse";
inline constexpr std::string_view kEventLimit = "event limit";
}  // namespace rule

struct Violation {
  std::string document_id;
  std::string subject;  // entity ID, event index ("event#2") or document ID
  std::string rule;
  std::string detail;

  bool operator==(const Violation&) const = default;
};

inline std::string describe(const Violation& v) {
  std::string out = v.document_id + ": " + v.subject + ": " + v.rule;
  if (!v.detail.empty()) out += " (" + v.detail + ")";
  return out;
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline void check_entity(const Document& doc, const std::u32string& text, const Entity& e,
                         std::vector<Violation>& out) {
  auto add = [&](std::string_view r, std::string detail) {
    out.push_back({doc.id, e.id, std::string(r), std::move(detail)});
  };
  if (e.fragments.empty()) {
    add(rule::kNoFragments, "");
    return;
  }
  if (e.surface.size() != e.fragments.size()) {
    add(rule::kSurfaceCount, std::to_string(e.surface.size()) + " surfaces for " +
                                 std::to_string(e.fragments.size()) + " fragments");
  }
  bool bounds_ok = true;
  for (const auto& f : e.fragments) {
    if (!(f.start < f.end) || f.end > text.size()) {
      add(rule::kSpanBounds, "[" + std::to_string(f.start) + "," + std::to_string(f.end) + ")");
      bounds_ok = false;
    }
  }
  for (std::size_t i = 1; i < e.fragments.size(); ++i) {
    if (e.fragments[i].start < e.fragments[i - 1].end) {
      add(rule::kFragmentOrder, "fragment " + std::to_string(i));
      break;
    }
  }
  if (!bounds_ok || e.surface.size() != e.fragments.size()) return;
  for (std::size_t i = 0; i < e.fragments.size(); ++i) {
    const auto& f = e.fragments[i];
    auto slice = text::slice(text, f.start, f.end);
    if (slice != e.surface[i]) {
      add(rule::kSurfaceMismatch, "'" + e.surface[i] + "' vs text '" + slice + "'");
    }
  }
}

}  // namespace detail

/// Every broken invariant of `doc`, in a stable order. Empty iff the document is valid.
inline std::vector<Violation> validate_document(const Document& doc) {
  std::vector<Violation> out;
  std::u32string text;
  try {
    text = text::decode_utf8(doc.text);
  } catch (const EncodingError& err) {
    out.push_back({doc.id, doc.id, std::string(rule::kEncoding), err.what()});
    return out;
  }

  std::unordered_map<std::string, const Entity*> by_id;
  for (const auto& e : doc.entities) {
    if (e.id.empty()) out.push_back({doc.id, e.id, std::string(rule::kEmptyId), ""});
    if (!by_id.emplace(e.id, &e).second) {
      out.push_back({doc.id, e.id, std::string(rule::kDuplicateId), ""});
    }
    detail::check_entity(doc, text, e, out);
  }

  std::map<std::string, std::size_t> event_uses;
  for (std::size_t i = 0; i < doc.events.size(); ++i) {
    const auto& ev = doc.events[i];
    const std::string subject = "event#" + std::to_string(i);
    auto add = [&](std::string_view r, std::string detail) {
      out.push_back({doc.id, subject, std::string(r), std::move(detail)});
    };
    if (ev.central.empty()) add(rule::kMissingCentral, "");

    std::optional<EntityLabel> central_label;
    bool mixed = false;
    for (const auto& id : ev.central) {
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        add(rule::kUnknownId, id);
        continue;
      }
      const EntityLabel l = it->second->label;
      if (!is_central_kind(l)) {
        add(rule::kInvalidCentral, id + " is " + std::string(to_string(l)));
        continue;
      }
      if (!central_label) central_label = l;
      else if (*central_label != l) mixed = true;
    }
    if (mixed) add(rule::kMultipleCentral, "");

    bool has_location = false;
    bool has_date = false;
    for (const auto& id : ev.associated) {
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        add(rule::kUnknownId, id);
        continue;
      }
      const EntityLabel l = it->second->label;
      if (is_location_kind(l)) has_location = true;
      else if (is_date_kind(l)) has_date = true;
      else add(rule::kInvalidAssociated, id + " is " + std::string(to_string(l)));
    }
    if (!has_location) add(rule::kMissingLocation, "");
    if (!has_date) add(rule::kMissingDate, "");

    std::set<std::string> ids(ev.central.begin(), ev.central.end());
    for (const auto& id : ev.associated) {
      if (!ids.insert(id).second) add(rule::kIdReuse, id + " is both central and associated");
    }
    for (const auto& id : ids) ++event_uses[id];
  }
  for (const auto& [id, uses] : event_uses) {
    if (uses > 1) {
      out.push_back({doc.id, id, std::string(rule::kIdReuse),
                     "referenced by " + std::to_string(uses) + " events"});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON corpus format

using ojson = nlohmann::ordered_json;

inline ojson to_json(const Entity& e) {
  ojson frags = ojson::array();
  for (const auto& f : e.fragments) frags.push_back({{"start", f.start}, {"end", f.end}});
  return {{"id", e.id},
          {"label", std::string(to_string(e.label))},
          {"fragments", std::move(frags)},
          {"surface", e.surface}};
}

inline ojson to_json(const Event& ev) {
  return {{"central", ev.central}, {"associated", ev.associated}};
}

inline ojson to_json(const Document& d) {
  ojson ents = ojson::array();
  for (const auto& e : d.entities) ents.push_back(to_json(e));
  ojson evs = ojson::array();
  for (const auto& ev : d.events) evs.push_back(to_json(ev));
  return {{"id", d.id}, {"text", d.text}, {"entities", std::move(ents)}, {"events", std::move(evs)}};
}

inline ojson to_json(const Corpus& c) {
  ojson docs = ojson::array();
  for (const auto& d : c.documents) docs.push_back(to_json(d));
  return {{"documents", std::move(docs)}};
}

inline std::string dump_corpus(const Corpus& c) { return to_json(c).dump(2) + "\n"; }

inline void save_corpus(std::ostream& out, const Corpus& c) { out << dump_corpus(c); }

struct LoadOptions {
  /// Run validate_document on every document and fail on the first violation.
  bool validate = true;
};

namespace detail {

template <typename Json>
const Json& require(const Json& obj, const char* key, const std::string& doc_id,
                    const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw CorpusError(doc_id, doc_id + ": " + where + " is missing field '" + key + "'");
  }
  return obj.at(key);
}

template <typename Json>
std::vector<std::string> string_list(const Json& arr, const std::string& doc_id,
                                     const std::string& where) {
  if (!arr.is_array()) throw CorpusError(doc_id, doc_id + ": " + where + " must be an array");
  std::vector<std::string> out;
  for (const auto& v : arr) {
    if (!v.is_string()) throw CorpusError(doc_id, doc_id + ": " + where + " must hold strings");
    out.push_back(v.template get<std::string>());
  }
  return out;
}

template <typename Json>
Entity entity_from_json(const Json& j, const std::string& doc_id, const std::u32string* text) {
  const std::string eid = require(j, "id", doc_id, "entity").template get<std::string>();
  const std::string where = "entity " + eid;
  Entity e;
  e.id = eid;
  const auto& label = require(j, "label", doc_id, where);
  if (!label.is_string()) throw CorpusError(doc_id, doc_id + ": " + where + " label must be a string");
  auto parsed = parse_label(label.template get<std::string>());
  if (!parsed) {
    throw CorpusError(doc_id, doc_id + ": " + where + " has unknown label '" +
                                  label.template get<std::string>() + "'");
  }
  e.label = *parsed;
  const auto& frags = require(j, "fragments", doc_id, where);
  if (!frags.is_array()) throw CorpusError(doc_id, doc_id + ": " + where + " fragments must be an array");
  for (const auto& f : frags) {
    const auto& s = require(f, "start", doc_id, where + " fragment");
    const auto& en = require(f, "end", doc_id, where + " fragment");
    if (!s.is_number_unsigned() || !en.is_number_unsigned()) {
      throw CorpusError(doc_id, doc_id + ": " + where + " offsets must be non-negative integers");
    }
    e.fragments.push_back({s.template get<std::size_t>(), en.template get<std::size_t>()});
  }
  if (j.contains("surface")) {
    e.surface = string_list(j.at("surface"), doc_id, where + " surface");
  } else if (text != nullptr) {
    for (const auto& f : e.fragments) {
      if (f.start < f.end && f.end <= text->size()) e.surface.push_back(text::slice(*text, f.start, f.end));
      else e.surface.emplace_back();
    }
  }
  return e;
}

}  // namespace detail

inline Document document_from_json(const ojson& j) {
  if (!j.is_object()) throw CorpusError("", "document entry must be an object");
  const auto& idv = detail::require(j, "id", "?", "document");
  if (!idv.is_string()) throw CorpusError("", "document id must be a string");
  Document d;
  d.id = idv.get<std::string>();
  const auto& tv = detail::require(j, "text", d.id, "document");
  if (!tv.is_string()) throw CorpusError(d.id, d.id + ": text must be a string");
  d.text = tv.get<std::string>();
  std::u32string text;
  bool decoded = false;
  try {
    text = text::decode_utf8(d.text);
    decoded = true;
  } catch (const EncodingError&) {
  }
  if (j.contains("entities")) {
    if (!j.at("entities").is_array()) throw CorpusError(d.id, d.id + ": entities must be an array");
    for (const auto& e : j.at("entities")) {
      d.entities.push_back(detail::entity_from_json(e, d.id, decoded ? &text : nullptr));
    }
  }
  if (j.contains("events")) {
    if (!j.at("events").is_array()) throw CorpusError(d.id, d.id + ": events must be an array");
    for (const auto& ev : j.at("events")) {
      Event out;
      out.central = detail::string_list(detail::require(ev, "central", d.id, "event"), d.id, "event central");
      if (ev.contains("associated")) {
        out.associated = detail::string_list(ev.at("associated"), d.id, "event associated");
      }
      d.events.push_back(std::move(out));
    }
  }
  return d;
}

inline Corpus corpus_from_json(const ojson& root, const LoadOptions& opts = {}) {
  const auto& docs = detail::require(root, "documents", "", "corpus");
  if (!docs.is_array()) throw CorpusError("", "'documents' must be an array");
  Corpus c;
  std::unordered_set<std::string> seen;
  for (const auto& dj : docs) {
    Document d = document_from_json(dj);
    if (!seen.insert(d.id).second) throw CorpusError(d.id, "duplicate document ID '" + d.id + "'");
    if (opts.validate) {
      auto violations = validate_document(d);
      if (!violations.empty()) throw CorpusError(d.id, describe(violations.front()));
    }
    c.documents.push_back(std::move(d));
  }
  return c;
}

inline Corpus load_corpus(std::istream& in, const LoadOptions& opts = {}) {
  ojson root;
  try {
    root = ojson::parse(in);
  } catch (const nlohmann::json::parse_error& err) {
    throw ValidationError("corpus JSON syntax error at byte " + std::to_string(err.byte) + ": " +
                          err.what());
  }
  return corpus_from_json(root, opts);
}

inline Corpus load_corpus(std::string_view json, const LoadOptions& opts = {}) {
  std::istringstream in{std::string(json)};
  return load_corpus(in, opts);
}

// ---------------------------------------------------------------------------
// Inline XML rendering

namespace detail {

inline bool safe_attribute(std::string_view v) {
  if (v.empty()) return false;
  return std::all_of(v.begin(), v.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' ||
           c == '-' || c == '.' || c == ':';
  });
}

}  // namespace detail

/// Wraps every fragment in `<LABEL>` tags. Fragments shared by several
/// entities become nested tags, discontinuous entities carry `ent_id`.
/// Partially overlapping fragments of distinct entities cannot be expressed
/// and raise RenderError.
inline std::string render_inline_xml(const Document& doc) {
  const std::u32string text = text::decode_utf8(doc.text);

  std::set<std::string> used;
  for (const auto& e : doc.entities) used.insert(e.id);
  std::vector<std::string> attr(doc.entities.size());
  std::size_t fallback = 1;
  for (std::size_t i = 0; i < doc.entities.size(); ++i) {
    const auto& e = doc.entities[i];
    if (!e.discontinuous()) continue;
    if (detail::safe_attribute(e.id)) {
      attr[i] = e.id;
      continue;
    }
    std::string candidate;
    do {
      candidate = "E" + std::to_string(fallback++);
    } while (used.count(candidate) != 0);
    used.insert(candidate);
    attr[i] = candidate;
  }

  struct Slot {
    Span span;
    std::vector<std::size_t> entities;
  };
  std::map<std::pair<std::size_t, std::size_t>, Slot> slots;
  for (std::size_t i = 0; i < doc.entities.size(); ++i) {
    for (const auto& f : doc.entities[i].fragments) {
      if (!(f.start < f.end) || f.end > text.size()) {
        throw RenderError("entity " + doc.entities[i].id + " has an out-of-range fragment");
      }
      auto& slot = slots[{f.start, f.end}];
      slot.span = f;
      slot.entities.push_back(i);
    }
  }

  std::u32string out;
  out.reserve(text.size() + slots.size() * 32);
  std::size_t cursor = 0;
  const Slot* previous = nullptr;
  auto append = [&out](std::string_view ascii) { out.append(ascii.begin(), ascii.end()); };
  for (const auto& [key, slot] : slots) {
    if (previous != nullptr && slot.span.start < previous->span.end) {
      throw RenderError("fragments of entities " + doc.entities[previous->entities.front()].id + " and " +
                        doc.entities[slot.entities.front()].id +
                        " overlap without sharing a span; not expressible as inline tags");
    }
    out.append(text, cursor, slot.span.start - cursor);
    for (std::size_t idx : slot.entities) {
      append("<");
      append(to_string(doc.entities[idx].label));
      if (!attr[idx].empty()) {
        append(" ent_id=\"");
        append(attr[idx]);
        append("\"");
      }
      append(">");
    }
    out.append(text, slot.span.start, slot.span.length());
    for (auto it = slot.entities.rbegin(); it != slot.entities.rend(); ++it) {
      append("</");
      append(to_string(doc.entities[*it].label));
      append(">");
    }
    cursor = slot.span.end;
    previous = &slot;
  }
  out.append(text, cursor, std::u32string::npos);
  return text::encode_utf8(out);
}

}  // namespace veille
