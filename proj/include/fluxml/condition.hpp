#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>

#include <json.hpp>

#include "fluxml/lp.hpp"

namespace fluxml {

/// Logical nutrient name ("glucose", "oxygen", "ammonium") -> exchange
/// reaction id.
using ExchangeMap = std::map<std::string, std::string>;

inline constexpr const char* kGlucose = "glucose";
inline constexpr const char* kOxygen = "oxygen";
inline constexpr const char* kAmmonium = "ammonium";

/// Environmental condition for one FBA solve. Unset uptakes keep the
/// model's own bound. Uptake bounds are lower bounds on exchange flux and
/// must be <= 0.
struct ConditionSpec {
  std::optional<double> glucose_uptake_lb;
  std::optional<double> oxygen_uptake_lb;
  std::optional<double> ammonium_uptake_lb;
  std::map<std::string, std::pair<double, double>> extra_bounds;

  bool operator==(const ConditionSpec&) const = default;
};

struct ConditionRecord {
  std::string condition_id;
  ConditionSpec condition;
  LpStatus status = LpStatus::Optimal;
};

nlohmann::ordered_json condition_to_json(const ConditionSpec& c);
ConditionSpec condition_from_json(const nlohmann::json& j);

}  // namespace fluxml
