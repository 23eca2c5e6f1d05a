#pragma once

// Chat message assembly for annotation, event extraction, verification and
// augmentation prompts. Templates are TOML files with a `system` body and
// `user` / `assistant` patterns holding `{placeholder}` fields.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "veille/corpus.hpp"
#include "veille/default_templates.hpp"
#include "veille/error.hpp"
#include "veille/labels.hpp"

namespace veille {

enum class Role { system, user, assistant };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "?";
}

struct ChatMessage {
  Role role = Role::user;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

struct PromptTemplate {
  std::string name;
  std::string system_body;
  std::string example_user_pattern;
  std::string example_assistant_pattern;
};

/// Replaces `{key}` for every key in `vars` in a single left-to-right pass;
/// substituted text is never rescanned and unknown braces are kept.
inline std::string fill(std::string_view pattern, const std::map<std::string, std::string, std::less<>>& vars) {
  std::string out;
  out.reserve(pattern.size());
  std::size_t i = 0;
  while (i < pattern.size()) {
    if (pattern[i] == '{') {
      const auto close = pattern.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = vars.find(pattern.substr(i + 1, close - i - 1));
        if (it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(pattern[i++]);
  }
  return out;
}

inline void require_placeholders(const PromptTemplate& t, std::string_view which, std::string_view pattern,
                                 std::initializer_list<std::string_view> names) {
  for (auto n : names) {
    const std::string token = "{" + std::string(n) + "}";
    if (pattern.find(token) == std::string_view::npos) {
      throw TemplateError("template '" + t.name + "' " + std::string(which) + " pattern lacks placeholder " +
                          token);
    }
  }
}

inline PromptTemplate parse_template(std::string_view toml_text, std::string_view fallback_name) {
  toml::table tbl;
  try {
    tbl = toml::parse(toml_text);
  } catch (const toml::parse_error& err) {
    throw TemplateError("template '" + std::string(fallback_name) + "': " + std::string(err.description()));
  }
  PromptTemplate t;
  t.name = tbl["name"].value_or(std::string(fallback_name));
  auto system = tbl["system"].value<std::string>();
  auto user = tbl["user"].value<std::string>();
  if (!system || !user) {
    throw TemplateError("template '" + t.name + "' needs string fields 'system' and 'user'");
  }
  t.system_body = *system;
  t.example_user_pattern = *user;
  t.example_assistant_pattern = tbl["assistant"].value_or(std::string{});
  return t;
}

/// Named templates: compiled-in defaults, optionally overridden from a directory.
class TemplateSet {
public:
  static TemplateSet defaults() {
    TemplateSet set;
    for (const auto& [name, body] : generated::kDefaultTemplates) {
      set.templates_[std::string(name)] = parse_template(body, name);
    }
    return set;
  }

  /// Defaults overlaid with every `*.toml` in `dir`, keyed by file stem.
  static TemplateSet load(const std::filesystem::path& dir) {
    TemplateSet set = defaults();
    if (!std::filesystem::is_directory(dir)) {
      throw ConfigError("template directory not found: " + dir.string());
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() != ".toml") continue;
      std::ifstream in(entry.path(), std::ios::binary);
      std::stringstream buf;
      buf << in.rdbuf();
      const std::string stem = entry.path().stem().string();
      set.templates_[stem] = parse_template(buf.str(), stem);
    }
    return set;
  }

  const PromptTemplate& get(std::string_view name) const {
    auto it = templates_.find(std::string(name));
    if (it == templates_.end()) throw TemplateError("unknown template '" + std::string(name) + "'");
    return it->second;
  }

  bool contains(std::string_view name) const { return templates_.count(std::string(name)) != 0; }

  void put(PromptTemplate t) { templates_[t.name] = std::move(t); }

private:
  std::map<std::string, PromptTemplate> templates_;
};

// ---------------------------------------------------------------------------

struct NerExample {
  std::string source;
  std::string annotated;
};

/// [system] + (user, assistant) per example + final user: 2k+2 messages.
inline std::vector<ChatMessage> build_ner_messages(const PromptTemplate& t, const std::vector<NerExample>& examples,
                                                   std::string_view input) {
  require_placeholders(t, "user", t.example_user_pattern, {"input"});
  require_placeholders(t, "assistant", t.example_assistant_pattern, {"annotated"});
  std::vector<ChatMessage> out;
  out.push_back({Role::system, t.system_body});
  for (const auto& ex : examples) {
    out.push_back({Role::user, fill(t.example_user_pattern, {{"input", ex.source}})});
    out.push_back({Role::assistant, fill(t.example_assistant_pattern, {{"annotated", ex.annotated}})});
  }
  out.push_back({Role::user, fill(t.example_user_pattern, {{"input", std::string(input)}})});
  return out;
}

/// Events array: one [central, associated] pair of objects per event.
inline nlohmann::ordered_json events_to_json(const std::vector<Event>& events) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& ev : events) {
    arr.push_back(nlohmann::ordered_json::array({
        {{"attribute", "evt:central_element"}, {"occurrences", ev.central}},
        {{"attribute", "evt:associated_element"}, {"occurrences", ev.associated}},
    }));
  }
  return arr;
}

inline std::string render_entity_list(const std::vector<Entity>& entities) {
  if (entities.empty()) return "(none)";
  std::string out;
  for (const auto& e : entities) {
    std::string surface;
    for (std::size_t i = 0; i < e.surface.size(); ++i) {
      if (i > 0) surface += " … ";
      surface += e.surface[i];
    }
    if (surface.empty()) throw ValidationError("entity " + e.id + " has an empty surface");
    if (!out.empty()) out += '\n';
    out += e.id + " | " + surface + " | " + std::string(to_string(e.label));
  }
  return out;
}

struct EventExample {
  std::string text;
  std::vector<Entity> entities;
  std::vector<Event> events;
};

inline std::vector<ChatMessage> build_event_messages(const PromptTemplate& t,
                                                     const std::vector<EventExample>& examples,
                                                     std::string_view input, const std::vector<Entity>& entities) {
  require_placeholders(t, "user", t.example_user_pattern, {"input", "entities"});
  require_placeholders(t, "assistant", t.example_assistant_pattern, {"events"});
  std::vector<ChatMessage> out;
  out.push_back({Role::system, t.system_body});
  for (const auto& ex : examples) {
    out.push_back({Role::user, fill(t.example_user_pattern,
                                    {{"input", ex.text}, {"entities", render_entity_list(ex.entities)}})});
    out.push_back({Role::assistant,
                   fill(t.example_assistant_pattern, {{"events", events_to_json(ex.events).dump(2)}})});
  }
  out.push_back({Role::user, fill(t.example_user_pattern,
                                  {{"input", std::string(input)}, {"entities", render_entity_list(entities)}})});
  return out;
}

inline std::vector<ChatMessage> build_verifier_messages(const PromptTemplate& t,
                                                        std::string_view annotated_first_pass) {
  require_placeholders(t, "user", t.example_user_pattern, {"annotated"});
  return {{Role::system, t.system_body},
          {Role::user, fill(t.example_user_pattern, {{"annotated", std::string(annotated_first_pass)}})}};
}

/// Distinct labels of `doc`, in label order.
inline std::vector<EntityLabel> labels_present(const Document& doc) {
  std::set<EntityLabel> s;
  for (const auto& e : doc.entities) s.insert(e.label);
  return {s.begin(), s.end()};
}

inline std::vector<ChatMessage> build_augment_messages(const PromptTemplate& t, const Document& seed,
                                                       std::size_t variant_index) {
  require_placeholders(t, "user", t.example_user_pattern, {"annotated", "labels", "variant"});
  if (seed.entities.empty()) {
    throw ValidationError("seed document " + seed.id + " has no entities to preserve");
  }
  std::string labels;
  for (auto l : labels_present(seed)) {
    if (!labels.empty()) labels += '\n';
    labels += "- " + std::string(to_string(l));
  }
  return {{Role::system, t.system_body},
          {Role::user, fill(t.example_user_pattern, {{"annotated", render_inline_xml(seed)},
                                                     {"labels", labels},
                                                     {"variant", std::to_string(variant_index)}})}};
}

}  // namespace veille
