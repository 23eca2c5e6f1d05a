#pragma once

// Random documents and corpora for property tests.

#include <algorithm>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "veille/corpus.hpp"
#include "veille/labels.hpp"
#include "veille/text.hpp"

namespace testgen {

using veille::Document;
using veille::Entity;
using veille::EntityLabel;
using veille::Span;

inline const std::vector<std::u32string>& words() {
  static const std::vector<std::u32string> w = {
      U"grippe",     U"aviaire",   U"H5N1",      U"Côte",       U"d'Ivoire",  U"l'OMS",      U"épidémie",
      U"fièvre",     U"jaune",     U"cas",       U"confirmés",  U"janvier",   U"2023",       U"Paris",
      U"ministère",  U"santé",     U"choléra",   U"virus",      U"Ebola",     U"foyer",      U"élevage",
      U"volailles",  U"abattues",  U"semaine",   U"dernière",   U"province",  U"Kivu",       U"décès",
      U"dengue",     U"moustique", U"rapport",   U"selon",      U"autorités", U"région",     U"sanitaires",
      U"variole",    U"singe",     U"mpox",      U"vaccin",     U"hôpital",   U"Lyon",       U"été",
      U"naïve",      U"Saint-Denis", U"août",    U"U-238",      U"2,5",       U"mars",       U"Québec"};
  return w;
}

inline const std::vector<std::u32string>& separators() {
  static const std::vector<std::u32string> s = {U" ", U" ", U" ", U" ", U", ", U". ", U" (", U") ",
                                                U" « ", U" » ", U" : ", U" - ", U"\n", U"  "};
  return s;
}

struct DocOptions {
  std::size_t min_words = 8;
  std::size_t max_words = 40;
  double entity_rate = 0.25;
  double discontinuous_rate = 0.15;
  double stacked_rate = 0.05;
};

/// Sorts entities as anchor_entities does and renames them T1, T2, …
inline void canonicalize(Document& d) {
  std::stable_sort(d.entities.begin(), d.entities.end(), [](const Entity& a, const Entity& b) {
    if (a.fragments.front() != b.fragments.front()) return a.fragments.front() < b.fragments.front();
    return a.label < b.label;
  });
  for (std::size_t i = 0; i < d.entities.size(); ++i) d.entities[i].id = "T" + std::to_string(i + 1);
}

inline EntityLabel random_label(std::mt19937& rng) {
  return static_cast<EntityLabel>(std::uniform_int_distribution<int>(0, veille::kLabelCount - 1)(rng));
}

/// Valid document whose entities cover whole words, never partially overlap,
/// and may be discontinuous or stacked (two labels on one span).
inline Document random_document(std::mt19937& rng, const std::string& id, const DocOptions& o = {}) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const std::size_t n = std::uniform_int_distribution<std::size_t>(o.min_words, o.max_words)(rng);
  std::u32string text;
  std::vector<Span> word_spans;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) text += separators()[rng() % separators().size()];
    const auto& w = words()[rng() % words().size()];
    word_spans.push_back({text.size(), text.size() + w.size()});
    text += w;
  }

  // candidate spans: runs of 1-3 words, disjoint, left to right
  std::vector<Span> spans;
  for (std::size_t i = 0; i < word_spans.size();) {
    if (coin(rng) < o.entity_rate) {
      const std::size_t len = std::min<std::size_t>(1 + rng() % 3, word_spans.size() - i);
      spans.push_back({word_spans[i].start, word_spans[i + len - 1].end});
      i += len + 1;
    } else {
      ++i;
    }
  }

  Document d;
  d.id = id;
  d.text = veille::text::encode_utf8(text);
  std::vector<bool> used(spans.size(), false);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (used[i]) continue;
    used[i] = true;
    Entity e;
    e.label = random_label(rng);
    e.fragments.push_back(spans[i]);
    if (coin(rng) < o.discontinuous_rate) {
      const std::size_t extra = 1 + rng() % 2;
      for (std::size_t j = i + 1; j < spans.size() && e.fragments.size() <= extra; ++j) {
        if (!used[j] && coin(rng) < 0.6) {
          used[j] = true;
          e.fragments.push_back(spans[j]);
        }
      }
    }
    for (const auto& f : e.fragments) e.surface.push_back(veille::text::slice(text, f.start, f.end));
    d.entities.push_back(e);
    if (e.fragments.size() == 1 && coin(rng) < o.stacked_rate) {
      Entity s = e;
      do s.label = random_label(rng);
      while (s.label == e.label);
      d.entities.push_back(s);
    }
  }
  canonicalize(d);
  return d;
}

inline bool has_discontinuous(const Document& d) {
  return std::any_of(d.entities.begin(), d.entities.end(), [](const Entity& e) { return e.discontinuous(); });
}

/// Small document built for scoring tests: few distinct surfaces so that
/// mentions corefer often, random events over its entities.
inline Document scoring_document(std::mt19937& rng, const std::string& id, std::size_t max_entities = 10) {
  static const std::vector<std::pair<EntityLabel, std::u32string>> vocab = {
      {EntityLabel::INF_DISEASE, U"grippe"},        {EntityLabel::INF_DISEASE, U"dengue"},
      {EntityLabel::PATHOGEN, U"H5N1"},         {EntityLabel::PATHOGEN, U"virus Ebola"},
      {EntityLabel::LOCATION, U"Paris"},        {EntityLabel::LOCATION, U"Kivu"},
      {EntityLabel::ABS_DATE, U"3 mars"},       {EntityLabel::REL_DATE, U"hier"},
      {EntityLabel::DOC_DATE, U"12/03/2023"},   {EntityLabel::ORGANIZATION, U"OMS"},
      {EntityLabel::LOC_REF_TO_ORG, U"Paris"},  {EntityLabel::TOXIC_C_AGENT, U"sarin"}};
  Document d;
  d.id = id;
  std::u32string text = U"Début. ";
  const std::size_t n = rng() % (max_entities + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [label, surface] = vocab[rng() % vocab.size()];
    Entity e;
    e.id = "T" + std::to_string(i + 1);
    e.label = label;
    e.fragments.push_back({text.size(), text.size() + surface.size()});
    e.surface.push_back(veille::text::encode_utf8(surface));
    text += surface + U" ; ";
    d.entities.push_back(std::move(e));
  }
  text += U"Fin.";
  d.text = veille::text::encode_utf8(text);
  const std::size_t events = d.entities.empty() ? 0 : rng() % 4;
  for (std::size_t k = 0; k < events; ++k) {
    veille::Event ev;
    for (const auto& e : d.entities) {
      const auto r = rng() % 4;
      if (veille::is_central_kind(e.label) && r == 0) ev.central.push_back(e.id);
      else if ((veille::is_location_kind(e.label) || veille::is_date_kind(e.label)) && r == 1) {
        ev.associated.push_back(e.id);
      }
    }
    d.events.push_back(std::move(ev));
  }
  return d;
}

/// Drops events lacking a central element, a location or a date.
inline void keep_complete_events(Document& d) {
  auto has = [&](const std::vector<std::string>& ids, bool (*kind)(EntityLabel)) {
    return std::any_of(ids.begin(), ids.end(), [&](const std::string& id) {
      const Entity* e = d.find_entity(id);
      return e && kind(e->label);
    });
  };
  std::erase_if(d.events, [&](const veille::Event& ev) {
    return !has(ev.central, veille::is_central_kind) || !has(ev.associated, veille::is_location_kind) ||
           !has(ev.associated, veille::is_date_kind);
  });
}

/// Copy of `gold` with entities dropped, shifted, relabeled or added and
/// events dropped or resampled.
inline Document perturb_prediction(std::mt19937& rng, const Document& gold) {
  Document p = gold;
  std::mt19937 local(rng());
  Document extra = scoring_document(local, gold.id, 4);
  std::vector<Entity> kept;
  for (auto e : p.entities) {
    switch (rng() % 6) {
      case 0: continue;
      case 1: e.label = random_label(rng); break;
      case 2:
        if (e.fragments.front().end > e.fragments.front().start + 1) --e.fragments.front().end;
        break;
      default: break;
    }
    kept.push_back(std::move(e));
  }
  p.entities = std::move(kept);
  std::size_t next = 100;
  for (auto e : extra.entities) {
    if (rng() % 2) continue;
    e.id = "T" + std::to_string(next++);
    p.entities.push_back(std::move(e));
  }
  std::vector<veille::Event> events;
  for (auto ev : p.events) {
    if (rng() % 4 == 0) continue;
    if (rng() % 3 == 0 && !p.entities.empty()) ev.associated.push_back(p.entities[rng() % p.entities.size()].id);
    events.push_back(std::move(ev));
  }
  if (rng() % 3 == 0 && !p.entities.empty()) {
    veille::Event ev;
    for (const auto& e : p.entities) {
      if (rng() % 2) (veille::is_central_kind(e.label) ? ev.central : ev.associated).push_back(e.id);
    }
    events.push_back(std::move(ev));
  }
  p.events = std::move(events);
  return p;
}

}  // namespace testgen
