#pragma once

// Re-anchoring of spans found in model-emitted text onto the untouched
// source text.
//
// Both texts are normalized (NFC, quote folding, whitespace collapse) and
// tokenized into words, single punctuation marks and single spaces. A
// longest common subsequence over the token streams (Myers' linear-space
// O(ND) diff) yields matched tokens whose characters become boundary
// anchors. Spans whose projection does not reproduce the expected surface
// are searched for in a window around the projection, and rejected when
// that search is empty or ambiguous.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <unicode/uchar.h>

#include "veille/corpus.hpp"
#include "veille/labels.hpp"
#include "veille/text.hpp"
#include "veille/xmltag.hpp"

namespace veille {

/// A boundary in the source text paired with the equivalent boundary in the emitted text.
struct Anchor {
  std::size_t source = 0;
  std::size_t emitted = 0;
  bool operator==(const Anchor&) const = default;
};

struct CharAlignment {
  std::vector<Anchor> pairs;  // strictly increasing on both coordinates
  double score = 0.0;         // 1 iff both texts are equal after normalization
  std::size_t source_length = 0;
  std::size_t emitted_length = 0;
};

enum class ProjectionStatus { exact, adjusted, rejected };

inline std::string_view to_string(ProjectionStatus s) {
  switch (s) {
    case ProjectionStatus::exact: return "exact";
    case ProjectionStatus::adjusted: return "adjusted";
    case ProjectionStatus::rejected: return "rejected";
  }
  return "?";
}

struct ProjectionResult {
  ProjectionStatus status = ProjectionStatus::rejected;
  std::optional<Span> span;
  std::string note;
};

struct AlignOptions {
  /// Half-width, in code points, of the search window around a failed projection.
  std::size_t window = 32;
};

namespace detail {

struct TokenStream {
  std::vector<int> ids;
  std::vector<std::size_t> begin;  // offsets into the normalized text
  std::vector<std::size_t> end;
};

inline bool is_word_char(char32_t c) {
  const auto cp = static_cast<UChar32>(c);
  return u_isalnum(cp) || (U_GET_GC_MASK(cp) & U_GC_M_MASK) != 0;
}

inline TokenStream tokenize(const std::u32string& chars,
                            std::unordered_map<std::u32string, int>& interned) {
  TokenStream ts;
  std::size_t i = 0;
  while (i < chars.size()) {
    std::size_t j = i + 1;
    if (is_word_char(chars[i])) {
      while (j < chars.size() && is_word_char(chars[j])) ++j;
    }
    auto [it, _] = interned.emplace(chars.substr(i, j - i), static_cast<int>(interned.size()));
    ts.ids.push_back(it->second);
    ts.begin.push_back(i);
    ts.end.push_back(j);
    i = j;
  }
  return ts;
}

/// Myers' linear-space diff; appends matched index pairs in increasing order.
class MyersLcs {
public:
  MyersLcs(const std::vector<int>& a, const std::vector<int>& b) : a_(a), b_(b) {}

  std::vector<std::pair<std::size_t, std::size_t>> run() {
    matches_.clear();
    solve(0, 0, static_cast<long>(a_.size()), static_cast<long>(b_.size()));
    return std::move(matches_);
  }

private:
  struct Point {
    long x;
    long y;
  };

  void solve(long left, long top, long right, long bottom) {
    while (left < right && top < bottom && a_[left] == b_[top]) {
      matches_.emplace_back(left++, top++);
    }
    long r = right;
    long b = bottom;
    while (left < r && top < b && a_[r - 1] == b_[b - 1]) {
      --r;
      --b;
    }
    if (left < r && top < b) {
      auto [start, finish] = midpoint(left, top, r, b);
      solve(left, top, start.x, start.y);
      walk(start, finish);
      solve(finish.x, finish.y, r, b);
    }
    for (long k = 0; r + k < right; ++k) matches_.emplace_back(r + k, b + k);
  }

  // Records the diagonal moves on a snake between two path points.
  void walk(Point from, Point to) {
    long x = from.x;
    long y = from.y;
    while (x < to.x || y < to.y) {
      if (x < to.x && y < to.y && a_[x] == b_[y]) {
        matches_.emplace_back(x++, y++);
      } else if (to.x - x < to.y - y) {
        ++y;
      } else {
        ++x;
      }
    }
  }

  std::pair<Point, Point> midpoint(long left, long top, long right, long bottom) {
    const long width = right - left;
    const long height = bottom - top;
    const long size = width + height;
    const long delta = width - height;
    const long max = (size + 1) / 2;
    const long off = max + 1;
    std::vector<long> vf(static_cast<std::size_t>(2 * max + 3), 0);
    std::vector<long> vb(static_cast<std::size_t>(2 * max + 3), 0);
    vf[off + 1] = left;
    vb[off + 1] = bottom;
    for (long d = 0; d <= max; ++d) {
      for (long k = d; k >= -d; k -= 2) {
        const long c = k - delta;
        long x = 0;
        long px = 0;
        if (k == -d || (k != d && vf[off + k - 1] < vf[off + k + 1])) {
          px = x = vf[off + k + 1];
        } else {
          px = vf[off + k - 1];
          x = px + 1;
        }
        long y = top + (x - left) - k;
        const long py = (d == 0 || x != px) ? y : y - 1;
        while (x < right && y < bottom && a_[x] == b_[y]) {
          ++x;
          ++y;
        }
        vf[off + k] = x;
        if ((size & 1) != 0 && c >= -(d - 1) && c <= d - 1 && y >= vb[off + c]) {
          return {{px, py}, {x, y}};
        }
      }
      for (long c = d; c >= -d; c -= 2) {
        const long k = c + delta;
        long y = 0;
        long py = 0;
        if (c == -d || (c != d && vb[off + c - 1] > vb[off + c + 1])) {
          py = y = vb[off + c + 1];
        } else {
          py = vb[off + c - 1];
          y = py - 1;
        }
        long x = left + (y - top) + k;
        const long px = (d == 0 || y != py) ? x : x + 1;
        while (x > left && y > top && a_[x - 1] == b_[y - 1]) {
          --x;
          --y;
        }
        vb[off + c] = y;
        if ((size & 1) == 0 && k >= -d && k <= d && x <= vf[off + k]) {
          return {{x, y}, {px, py}};
        }
      }
    }
    return {{left, top}, {right, bottom}};  // unreachable for non-empty boxes
  }

  const std::vector<int>& a_;
  const std::vector<int>& b_;
  std::vector<std::pair<std::size_t, std::size_t>> matches_;
};

}  // namespace detail

/// Longest common subsequence of two integer sequences as matched index pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> lcs_pairs(const std::vector<int>& a,
                                                                  const std::vector<int>& b) {
  return detail::MyersLcs(a, b).run();
}

inline CharAlignment align_chars(const text::NormalizedText& source, std::size_t source_length,
                                 const text::NormalizedText& emitted, std::size_t emitted_length) {
  std::unordered_map<std::u32string, int> interned;
  const auto ts = detail::tokenize(source.chars, interned);
  const auto te = detail::tokenize(emitted.chars, interned);

  CharAlignment al;
  al.source_length = source_length;
  al.emitted_length = emitted_length;
  std::size_t matched_chars = 0;
  auto push = [&al](std::size_t s, std::size_t e) {
    if (al.pairs.empty() || (s > al.pairs.back().source && e > al.pairs.back().emitted)) {
      al.pairs.push_back({s, e});
    }
  };
  for (auto [i, j] : lcs_pairs(ts.ids, te.ids)) {
    const std::size_t len = ts.end[i] - ts.begin[i];
    matched_chars += len;
    for (std::size_t c = 0; c < len; ++c) {
      const std::size_t ns = ts.begin[i] + c;
      const std::size_t ne = te.begin[j] + c;
      push(source.begin[ns], emitted.begin[ne]);
      push(source.end[ns], emitted.end[ne]);
    }
  }
  const std::size_t total = source.size() + emitted.size();
  al.score = total == 0 ? 1.0 : 2.0 * static_cast<double>(matched_chars) / static_cast<double>(total);
  return al;
}

inline CharAlignment align_chars(std::u32string_view source, std::u32string_view emitted) {
  return align_chars(text::normalize(source), source.size(), text::normalize(emitted), emitted.size());
}

inline CharAlignment align_chars(std::string_view source_utf8, std::string_view emitted_utf8) {
  return align_chars(std::u32string_view(text::decode_utf8(source_utf8)),
                     std::u32string_view(text::decode_utf8(emitted_utf8)));
}

/// Source boundary equivalent to an emitted boundary; interpolates between anchors.
inline std::size_t map_boundary(const CharAlignment& al, std::size_t emitted_pos) {
  const auto& a = al.pairs;
  auto it = std::lower_bound(a.begin(), a.end(), emitted_pos,
                             [](const Anchor& x, std::size_t p) { return x.emitted < p; });
  if (it != a.end() && it->emitted == emitted_pos) return it->source;
  std::size_t s = 0;
  if (it != a.begin()) {
    const auto& prev = *(it - 1);
    s = prev.source + (emitted_pos - prev.emitted);
    if (it != a.end()) s = std::min(s, it->source);
  } else if (it != a.end()) {
    const std::size_t back = it->emitted - emitted_pos;
    s = it->source > back ? it->source - back : 0;
  } else {
    s = emitted_pos;
  }
  return std::min(s, al.source_length);
}

inline ProjectionResult project_span(const CharAlignment& al, Span span_in_emitted,
                                     std::u32string_view expected_surface, std::u32string_view source,
                                     const text::NormalizedText& normalized_source,
                                     const AlignOptions& opts = {}) {
  ProjectionResult r;
  const std::u32string want = text::normalized(expected_surface);
  if (want.empty() || want == U" ") {
    r.note = "empty surface";
    return r;
  }
  const std::size_t ps = map_boundary(al, span_in_emitted.start);
  const std::size_t pe = map_boundary(al, span_in_emitted.end);
  if (ps < pe && pe <= source.size() && text::normalized(source.substr(ps, pe - ps)) == want) {
    r.status = ProjectionStatus::exact;
    r.span = Span{ps, pe};
    return r;
  }

  // Window search in normalized coordinates, nearest to the projected start.
  const std::u32string_view hay(normalized_source.chars);
  const std::size_t lo = ps > opts.window ? ps - opts.window : 0;
  const std::size_t hi = std::max(ps, pe) + opts.window;
  std::optional<Span> best;
  std::size_t best_dist = 0;
  bool tied = false;
  for (std::size_t at = hay.find(want); at != std::u32string_view::npos; at = hay.find(want, at + 1)) {
    const Span cand{normalized_source.begin[at], normalized_source.end[at + want.size() - 1]};
    if (cand.start < lo || cand.end > hi) continue;
    const std::size_t dist = cand.start > ps ? cand.start - ps : ps - cand.start;
    if (!best || dist < best_dist) {
      best = cand;
      best_dist = dist;
      tied = false;
    } else if (dist == best_dist && cand != *best) {
      tied = true;
    }
  }
  if (!best) {
    r.note = "surface not found within ±" + std::to_string(opts.window) + " of projection";
    return r;
  }
  if (tied) {
    r.note = "equidistant candidate matches";
    return r;
  }
  if (text::normalized(source.substr(best->start, best->length())) != want) {
    r.note = "window match failed the slice check";
    return r;
  }
  r.status = ProjectionStatus::adjusted;
  r.span = best;
  r.note = "shifted from " + std::to_string(ps);
  return r;
}

inline ProjectionResult project_span(const CharAlignment& al, Span span_in_emitted,
                                     std::u32string_view expected_surface, std::u32string_view source,
                                     const AlignOptions& opts = {}) {
  return project_span(al, span_in_emitted, expected_surface, source, text::normalize(source), opts);
}

struct Rejection {
  EntityLabel label = EntityLabel::LOCATION;
  std::vector<std::string> surfaces;
  std::string reason;
};

struct AnchorResult {
  std::vector<Entity> entities;
  std::vector<Rejection> rejections;
  std::vector<std::string> warnings;
  std::size_t exact = 0;
  std::size_t adjusted = 0;
};

/// Projects every parsed mention onto `source`. An entity with any rejected
/// fragment is dropped whole. IDs are "T1", "T2", … in document order.
inline AnchorResult anchor_entities(std::string_view source_utf8, const ParseOutcome& outcome,
                                    const AlignOptions& opts = {}) {
  AnchorResult res;
  const auto protos = group_discontinuous(outcome.mentions, &res.warnings);
  const std::u32string source = text::decode_utf8(source_utf8);
  const std::u32string emitted = text::decode_utf8(outcome.plain);
  const auto ns = text::normalize(source);
  const auto al = align_chars(ns, source.size(), text::normalize(emitted), emitted.size());

  for (const auto& p : protos) {
    Entity e;
    e.label = p.label;
    std::string reason;
    std::size_t exact = 0;
    for (std::size_t i = 0; i < p.spans.size(); ++i) {
      const auto surface = text::decode_utf8(p.surfaces[i]);
      auto pr = project_span(al, p.spans[i], surface, source, ns, opts);
      if (pr.status == ProjectionStatus::rejected) {
        reason = "fragment '" + p.surfaces[i] + "': " + pr.note;
        break;
      }
      if (pr.status == ProjectionStatus::exact) ++exact;
      e.fragments.push_back(*pr.span);
    }
    if (reason.empty()) {
      std::sort(e.fragments.begin(), e.fragments.end());
      for (std::size_t i = 1; i < e.fragments.size(); ++i) {
        if (e.fragments[i].start < e.fragments[i - 1].end) {
          reason = "fragments overlap after projection";
          break;
        }
      }
    }
    if (!reason.empty()) {
      res.rejections.push_back({p.label, p.surfaces, std::move(reason)});
      continue;
    }
    for (const auto& f : e.fragments) e.surface.push_back(text::slice(source, f.start, f.end));
    const bool duplicate = std::any_of(res.entities.begin(), res.entities.end(), [&](const Entity& o) {
      return o.label == e.label && o.fragments == e.fragments;
    });
    if (duplicate) {
      res.warnings.push_back("duplicate " + std::string(to_string(e.label)) + " '" + e.surface.front() +
                             "' merged");
      continue;
    }
    res.exact += exact;
    res.adjusted += e.fragments.size() - exact;
    res.entities.push_back(std::move(e));
  }

  std::stable_sort(res.entities.begin(), res.entities.end(), [](const Entity& a, const Entity& b) {
    if (a.fragments.front() != b.fragments.front()) return a.fragments.front() < b.fragments.front();
    return a.label < b.label;
  });
  for (std::size_t i = 0; i < res.entities.size(); ++i) res.entities[i].id = "T" + std::to_string(i + 1);
  return res;
}

}  // namespace veille
