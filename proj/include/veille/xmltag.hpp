#pragma once

// Parser for model output annotated with inline `<LABEL>…</LABEL>` tags.
//
// Only tag-shaped tokens with an upper-case name are markup; every other
// angle bracket is text. Nesting is accepted only when the inner and outer
// tags cover the same text (the shared-fragment idiom of discontinuous
// entities, distinguished by `ent_id`).

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "veille/corpus.hpp"
#include "veille/error.hpp"
#include "veille/labels.hpp"
#include "veille/text.hpp"

namespace veille {

enum class UnknownLabelPolicy { drop, strict };

struct ParseOptions {
  UnknownLabelPolicy unknown_labels = UnknownLabelPolicy::drop;
  /// Recover from unbalanced or crossing tags instead of throwing MarkupError.
  bool lenient = false;
};

struct RawMention {
  EntityLabel label = EntityLabel::LOCATION;
  std::vector<std::string> ent_ids;
  Span span_in_plain;
  std::string surface;

  bool operator==(const RawMention&) const = default;
};

struct ParseOutcome {
  std::string plain;
  std::vector<RawMention> mentions;
  std::vector<std::string> warnings;
};

namespace detail {

struct TagToken {
  bool closing = false;
  bool self_closing = false;
  std::string name;
  std::vector<std::pair<std::string, std::string>> attributes;
  std::size_t length = 0;  // code points consumed, including the brackets
};

inline bool is_upper_name_start(char32_t c) { return c >= U'A' && c <= U'Z'; }
inline bool is_upper_name_char(char32_t c) {
  return (c >= U'A' && c <= U'Z') || (c >= U'0' && c <= U'9') || c == U'_';
}
inline bool is_attr_start(char32_t c) {
  return (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z') || c == U'_';
}
inline bool is_attr_char(char32_t c) { return is_attr_start(c) || (c >= U'0' && c <= U'9') || c == U'-'; }
inline bool is_ascii_space(char32_t c) { return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r'; }

/// Recognises `<NAME attr="v" …>`, `</NAME>` and `<NAME/>` at `pos`.
inline std::optional<TagToken> scan_tag(std::u32string_view s, std::size_t pos) {
  std::size_t i = pos + 1;
  TagToken tok;
  if (i < s.size() && s[i] == U'/') {
    tok.closing = true;
    ++i;
  }
  if (i >= s.size() || !is_upper_name_start(s[i])) return std::nullopt;
  const std::size_t name_start = i;
  while (i < s.size() && is_upper_name_char(s[i])) ++i;
  tok.name = text::encode_utf8(s.substr(name_start, i - name_start));

  if (tok.closing) {
    while (i < s.size() && is_ascii_space(s[i])) ++i;
    if (i >= s.size() || s[i] != U'>') return std::nullopt;
    tok.length = i + 1 - pos;
    return tok;
  }

  while (true) {
    const std::size_t before_ws = i;
    while (i < s.size() && is_ascii_space(s[i])) ++i;
    if (i >= s.size()) return std::nullopt;
    if (s[i] == U'>') {
      tok.length = i + 1 - pos;
      return tok;
    }
    if (s[i] == U'/' && i + 1 < s.size() && s[i + 1] == U'>') {
      tok.self_closing = true;
      tok.length = i + 2 - pos;
      return tok;
    }
    if (i == before_ws || !is_attr_start(s[i])) return std::nullopt;
    const std::size_t an = i;
    while (i < s.size() && is_attr_char(s[i])) ++i;
    std::string attr = text::encode_utf8(s.substr(an, i - an));
    while (i < s.size() && is_ascii_space(s[i])) ++i;
    if (i >= s.size() || s[i] != U'=') return std::nullopt;
    ++i;
    while (i < s.size() && is_ascii_space(s[i])) ++i;
    if (i >= s.size()) return std::nullopt;
    std::size_t vs = 0;
    std::size_t ve = 0;
    if (s[i] == U'"' || s[i] == U'\'') {
      const char32_t q = s[i];
      vs = ++i;
      while (i < s.size() && s[i] != q && s[i] != U'<' && s[i] != U'>') ++i;
      if (i >= s.size() || s[i] != q) return std::nullopt;
      ve = i++;
    } else {
      vs = i;
      while (i < s.size() && !is_ascii_space(s[i]) && s[i] != U'>' && s[i] != U'<' && s[i] != U'"') ++i;
      ve = i;
      if (vs == ve) return std::nullopt;
    }
    tok.attributes.emplace_back(std::move(attr), text::encode_utf8(s.substr(vs, ve - vs)));
  }
}

inline std::vector<std::string> split_ids(std::string_view v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

struct Frame {
  std::optional<EntityLabel> label;
  std::string name;
  std::vector<std::string> ent_ids;
  std::size_t plain_start = 0;
  std::size_t tag_pos = 0;
  std::vector<Span> children;
};

}  // namespace detail

/// Strips inline tags from `annotated` and returns the plain text with one
/// RawMention per well-formed tag pair.
inline ParseOutcome parse_annotated(std::string_view annotated, const ParseOptions& opts = {}) {
  const std::u32string in = text::decode_utf8(annotated);
  std::u32string plain;
  plain.reserve(in.size());
  ParseOutcome out;
  std::vector<detail::Frame> stack;

  auto warn = [&out](std::string w) { out.warnings.push_back(std::move(w)); };

  auto close_top = [&](bool auto_closed) {
    detail::Frame f = std::move(stack.back());
    stack.pop_back();
    const Span span{f.plain_start, plain.size()};
    if (auto_closed) {
      warn("auto-closed <" + f.name + "> opened at offset " + std::to_string(f.tag_pos));
    }
    for (const auto& child : f.children) {
      if (child != span) {
        if (!opts.lenient) {
          throw MarkupError(f.tag_pos, "<" + f.name +
                                           "> encloses a tag over different text; nesting is only "
                                           "allowed for shared discontinuous fragments");
        }
        warn("improperly nested tag inside <" + f.name + "> at offset " + std::to_string(f.tag_pos));
        break;
      }
    }
    if (!stack.empty()) stack.back().children.push_back(span);
    if (!f.label) return;
    if (span.start == span.end) {
      warn("empty <" + f.name + "> at offset " + std::to_string(f.tag_pos) + " dropped");
      return;
    }
    out.mentions.push_back(RawMention{*f.label, std::move(f.ent_ids), span,
                                      text::encode_utf8(std::u32string_view(plain).substr(
                                          span.start, span.length()))});
  };

  std::size_t i = 0;
  while (i < in.size()) {
    if (in[i] != U'<') {
      plain.push_back(in[i++]);
      continue;
    }
    auto tok = detail::scan_tag(in, i);
    if (!tok) {
      plain.push_back(in[i++]);
      continue;
    }
    const std::size_t pos = i;
    i += tok->length;

    std::optional<EntityLabel> label = parse_label(tok->name);
    if (!label) {
      if (opts.unknown_labels == UnknownLabelPolicy::strict) {
        throw MarkupError(pos, "unknown label <" + tok->name + ">");
      }
      if (!tok->closing) warn("unknown label <" + tok->name + "> dropped");
    }

    if (tok->self_closing) {
      warn("self-closing <" + tok->name + "/> ignored at offset " + std::to_string(pos));
      continue;
    }

    if (!tok->closing) {
      detail::Frame f;
      f.label = label;
      f.name = tok->name;
      f.plain_start = plain.size();
      f.tag_pos = pos;
      for (auto& [k, v] : tok->attributes) {
        if (k == "ent_id") {
          for (auto& id : detail::split_ids(v)) f.ent_ids.push_back(std::move(id));
        } else {
          warn("attribute '" + k + "' on <" + tok->name + "> ignored");
        }
      }
      // `<X>word<X>` typed instead of `<X>word</X>`.
      if (opts.lenient && !stack.empty() && stack.back().name == f.name && f.ent_ids.empty() &&
          stack.back().ent_ids.empty() && stack.back().plain_start < plain.size()) {
        warn("repeated <" + f.name + "> at offset " + std::to_string(pos) + " read as a closing tag");
        close_top(false);
        continue;
      }
      stack.push_back(std::move(f));
      continue;
    }

    if (!stack.empty() && stack.back().name == tok->name) {
      close_top(false);
      continue;
    }
    auto match = std::find_if(stack.rbegin(), stack.rend(),
                              [&](const detail::Frame& f) { return f.name == tok->name; });
    if (!opts.lenient) {
      if (stack.empty() || match == stack.rend()) {
        throw MarkupError(pos, "closing </" + tok->name + "> has no matching opening tag");
      }
      throw MarkupError(pos, "closing </" + tok->name + "> crosses open <" + stack.back().name + ">");
    }
    if (match == stack.rend()) {
      warn("stray </" + tok->name + "> at offset " + std::to_string(pos) + " ignored");
      continue;
    }
    const auto depth = static_cast<std::size_t>(std::distance(stack.rbegin(), match));
    for (std::size_t k = 0; k < depth; ++k) close_top(true);
    close_top(false);
  }

  if (!stack.empty()) {
    if (!opts.lenient) {
      throw MarkupError(stack.back().tag_pos, "unclosed <" + stack.back().name + ">");
    }
    while (!stack.empty()) close_top(true);
  }

  std::stable_sort(out.mentions.begin(), out.mentions.end(), [](const RawMention& a, const RawMention& b) {
    return a.span_in_plain < b.span_in_plain;
  });
  out.plain = text::encode_utf8(plain);
  return out;
}

/// One entity candidate assembled from mentions, still in plain-text coordinates.
struct ProtoEntity {
  EntityLabel label = EntityLabel::LOCATION;
  std::vector<Span> spans;
  std::vector<std::string> surfaces;
  std::string ent_id;  // empty for untagged singletons

  bool operator==(const ProtoEntity&) const = default;
};

/// Merges mentions sharing an `ent_id`. Mixed labels inside one group throw
/// GroupingError, or are dropped with a warning when `warnings` is given.
inline std::vector<ProtoEntity> group_discontinuous(const std::vector<RawMention>& mentions,
                                                    std::vector<std::string>* warnings = nullptr) {
  std::vector<ProtoEntity> out;
  std::map<std::string, std::size_t> group_index;
  std::vector<bool> conflicted;

  for (const auto& m : mentions) {
    if (m.ent_ids.empty()) {
      out.push_back(ProtoEntity{m.label, {m.span_in_plain}, {m.surface}, {}});
      conflicted.push_back(false);
      continue;
    }
    for (const auto& id : m.ent_ids) {
      auto [it, inserted] = group_index.emplace(id, out.size());
      if (inserted) {
        out.push_back(ProtoEntity{m.label, {}, {}, id});
        conflicted.push_back(false);
      }
      auto& g = out[it->second];
      if (g.label != m.label) {
        if (warnings == nullptr) {
          throw GroupingError(id, "ent_id '" + id + "' mixes labels " + std::string(to_string(g.label)) +
                                      " and " + std::string(to_string(m.label)));
        }
        if (!conflicted[it->second]) {
          warnings->push_back("ent_id '" + id + "' mixes labels; group dropped");
        }
        conflicted[it->second] = true;
        continue;
      }
      if (std::find(g.spans.begin(), g.spans.end(), m.span_in_plain) != g.spans.end()) continue;
      g.spans.push_back(m.span_in_plain);
      g.surfaces.push_back(m.surface);
    }
  }

  std::vector<ProtoEntity> kept;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (conflicted[i]) continue;
    auto& p = out[i];
    std::vector<std::size_t> order(p.spans.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p.spans[a] < p.spans[b]; });
    ProtoEntity sorted{p.label, {}, {}, p.ent_id};
    for (std::size_t k : order) {
      sorted.spans.push_back(p.spans[k]);
      sorted.surfaces.push_back(p.surfaces[k]);
    }
    kept.push_back(std::move(sorted));
  }
  std::stable_sort(kept.begin(), kept.end(), [](const ProtoEntity& a, const ProtoEntity& b) {
    if (a.spans.front() != b.spans.front()) return a.spans.front() < b.spans.front();
    return a.label < b.label;
  });
  return kept;
}

}  // namespace veille
