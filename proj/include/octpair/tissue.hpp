#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "octpair/common.hpp"

namespace octpair {

// Class index order is fixed and persisted in every report.
enum class TissueClass : int { gelatin = 0, pork = 1, beef = 2, turkey = 3 };

constexpr int kNumClasses = 4;

constexpr std::array<TissueClass, kNumClasses> all_classes() {
  return {TissueClass::gelatin, TissueClass::pork, TissueClass::beef,
          TissueClass::turkey};
}

// Meat classes are the per-insertion stratification key (gelatin is the
// embedding medium and occurs in every insertion).
constexpr std::array<TissueClass, 3> meat_classes() {
  return {TissueClass::pork, TissueClass::beef, TissueClass::turkey};
}

inline std::string_view to_string(TissueClass c) {
  switch (c) {
    case TissueClass::gelatin: return "gelatin";
    case TissueClass::pork: return "pork";
    case TissueClass::beef: return "beef";
    case TissueClass::turkey: return "turkey";
  }
  return "?";
}

inline std::optional<TissueClass> tissue_from_string(std::string_view s) {
  for (TissueClass c : all_classes())
    if (to_string(c) == s) return c;
  return std::nullopt;
}

inline TissueClass tissue_from_string_or_throw(std::string_view s) {
  auto c = tissue_from_string(s);
  if (!c) throw ConfigError("unknown tissue class: " + std::string(s));
  return *c;
}

}  // namespace octpair
