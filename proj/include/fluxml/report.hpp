#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace fluxml {

inline constexpr const char* kToolVersion = "0.1.0";

class ReportError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class PlotKind { Scatter, Line, Bar };

struct PlotData {
  std::vector<double> x;
  std::vector<double> y;
  /// Bar labels; bars use y as heights and ignore x.
  std::vector<std::string> labels;
};

struct PlotStyle {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool identity_line = false;
  int width = 640;
  int height = 480;
};

/// Standalone SVG 1.1. Scatter draws one <circle class="point"> per row,
/// line one <polyline class="series"> in input order, bar one
/// <rect class="bar"> per label sorted by height descending (stable).
/// Output depends only on the inputs.
std::string render_plot(PlotKind kind, const PlotData& data, const PlotStyle& style = {});

struct RunMetadata {
  std::string command;
  std::string tool_version = kToolVersion;
  std::string config_hash;
  std::string model_checksum;
  /// Defaults, then config file, then flags.
  nlohmann::ordered_json config;
  /// Checksums of input artifacts, keyed by role.
  nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
  double elapsed_seconds = 0.0;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

nlohmann::ordered_json metadata_to_json(const RunMetadata& meta);
RunMetadata metadata_from_json(const nlohmann::json& j);

/// 16 hex digits of FNV-1a over the compact JSON dump.
std::string json_hash(const nlohmann::ordered_json& value);

}  // namespace fluxml
