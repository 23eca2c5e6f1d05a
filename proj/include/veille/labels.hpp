#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "veille/error.hpp"

namespace veille {

enum class EntityLabel : uint8_t {
  DOC_AUTHOR,
  DOC_SOURCE,
  INF_DISEASE,
  NON_INF_DISEASE,
  PATHOGEN,
  DIS_REF_TO_PATH,
  PATH_REF_TO_DIS,
  RADIOISOTOPE,
  TOXIC_C_AGENT,
  EXPLOSIVE,
  BIO_TOXIN,
  LOCATION,
  ORGANIZATION,
  LOC_REF_TO_ORG,
  ORG_REF_TO_LOC,
  ABS_DATE,
  REL_DATE,
  DOC_DATE,
  ABS_PERIOD,
  REL_PERIOD,
  FUZZY_PERIOD,
};

inline constexpr std::size_t kLabelCount = 21;

inline constexpr std::array<std::string_view, kLabelCount> kLabelNames = {
    "DOC_AUTHOR",     "DOC_SOURCE",     "INF_DISEASE",  "NON_INF_DISEASE", "PATHOGEN",
    "DIS_REF_TO_PATH", "PATH_REF_TO_DIS", "RADIOISOTOPE", "TOXIC_C_AGENT",  "EXPLOSIVE",
    "BIO_TOXIN",      "LOCATION",       "ORGANIZATION", "LOC_REF_TO_ORG",  "ORG_REF_TO_LOC",
    "ABS_DATE",       "REL_DATE",       "DOC_DATE",     "ABS_PERIOD",      "REL_PERIOD",
    "FUZZY_PERIOD",
};

inline constexpr std::array<EntityLabel, kLabelCount> all_labels() {
  std::array<EntityLabel, kLabelCount> out{};
  for (std::size_t i = 0; i < kLabelCount; ++i) out[i] = static_cast<EntityLabel>(i);
  return out;
}

inline constexpr std::size_t index_of(EntityLabel l) { return static_cast<std::size_t>(l); }

inline constexpr std::string_view to_string(EntityLabel l) { return kLabelNames[index_of(l)]; }

inline std::optional<EntityLabel> parse_label(std::string_view name) {
  for (std::size_t i = 0; i < kLabelCount; ++i) {
    if (kLabelNames[i] == name) return static_cast<EntityLabel>(i);
  }
  return std::nullopt;
}

inline EntityLabel label_or_throw(std::string_view name) {
  if (auto l = parse_label(name)) return *l;
  throw ValidationError("unknown entity label '" + std::string(name) + "'");
}

/// Labels allowed as the central element of a health event.
inline constexpr bool is_central_kind(EntityLabel l) {
  switch (l) {
    case EntityLabel::INF_DISEASE:
    case EntityLabel::NON_INF_DISEASE:
    case EntityLabel::PATHOGEN:
    case EntityLabel::DIS_REF_TO_PATH:
    case EntityLabel::PATH_REF_TO_DIS:
    case EntityLabel::RADIOISOTOPE:
    case EntityLabel::TOXIC_C_AGENT:
    case EntityLabel::EXPLOSIVE:
    case EntityLabel::BIO_TOXIN:
      return true;
    default:
      return false;
  }
}

inline constexpr bool is_location_kind(EntityLabel l) {
  return l == EntityLabel::LOCATION || l == EntityLabel::LOC_REF_TO_ORG ||
         l == EntityLabel::ORG_REF_TO_LOC;
}

inline constexpr bool is_date_kind(EntityLabel l) {
  switch (l) {
    case EntityLabel::ABS_DATE:
    case EntityLabel::REL_DATE:
    case EntityLabel::ABS_PERIOD:
    case EntityLabel::REL_PERIOD:
    case EntityLabel::FUZZY_PERIOD:
    case EntityLabel::DOC_DATE:
      return true;
    default:
      return false;
  }
}

}  // namespace veille
