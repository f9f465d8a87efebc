#include "fluxml/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "fluxml/model.hpp"

namespace fluxml {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  if (s == "-0.00") s = "0.00";
  return s;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo, hi;
  double span() const { return hi - lo; }
};

Range range_of(const std::vector<double>& a, const std::vector<double>* b = nullptr) {
  double lo = *std::min_element(a.begin(), a.end()), hi = *std::max_element(a.begin(), a.end());
  if (b) {
    lo = std::min(lo, *std::min_element(b->begin(), b->end()));
    hi = std::max(hi, *std::max_element(b->begin(), b->end()));
  }
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

void check_finite(const std::vector<double>& v, const char* what) {
  for (double a : v)
    if (!std::isfinite(a)) throw ReportError(std::string("plot ") + what + " values must be finite");
}

}  // namespace

std::string render_plot(PlotKind kind, const PlotData& data, const PlotStyle& style) {
  if (data.y.empty()) throw ReportError("plot data is empty");
  check_finite(data.y, "y");
  if (kind == PlotKind::Bar) {
    if (data.labels.size() != data.y.size()) throw ReportError("bar plot needs one label per value");
  } else {
    if (data.x.size() != data.y.size()) throw ReportError("plot x and y differ in length");
    check_finite(data.x, "x");
  }
  if (style.width < 100 || style.height < 100) throw ReportError("plot is too small");

  const double left = 80, right = 20, top = 40, bottom = kind == PlotKind::Bar ? 120 : 60;
  const double pw = style.width - left - right, ph = style.height - top - bottom;

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << style.width << "\" height=\""
    << style.height << "\" viewBox=\"0 0 " << style.width << ' ' << style.height << "\">\n"
    << "<rect class=\"background\" x=\"0\" y=\"0\" width=\"" << style.width << "\" height=\"" << style.height
    << "\" fill=\"white\"/>\n";
  if (!style.title.empty())
    s << "<text class=\"title\" x=\"" << num(style.width / 2.0) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
      << escape(style.title) << "</text>\n";
  s << "<path class=\"axes\" d=\"M" << num(left) << ',' << num(top) << " V" << num(top + ph) << " H" << num(left + pw)
    << "\" stroke=\"black\" fill=\"none\"/>\n";

  Range ry{0, 1};
  if (kind == PlotKind::Bar) {
    std::vector<double> with_zero = data.y;
    with_zero.push_back(0.0);
    ry = range_of(with_zero);
  } else {
    ry = range_of(data.y, style.identity_line && kind == PlotKind::Scatter ? &data.x : nullptr);
  }
  auto py = [&](double v) { return top + ph - (v - ry.lo) / ry.span() * ph; };

  for (int t = 0; t <= 4; ++t) {
    const double v = ry.lo + ry.span() * t / 4.0;
    s << "<text class=\"tick\" x=\"" << num(left - 6) << "\" y=\"" << num(py(v) + 4)
      << "\" text-anchor=\"end\" font-size=\"11\">" << tick(v) << "</text>\n";
  }

  if (kind == PlotKind::Bar) {
    std::vector<std::size_t> order(data.y.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return data.y[a] > data.y[b]; });
    const double slot = pw / double(order.size());
    const double base = py(0.0);
    for (std::size_t r = 0; r < order.size(); ++r) {
      const double v = data.y[order[r]];
      const double x0 = left + slot * double(r) + 0.1 * slot;
      const double y0 = std::min(py(v), base);
      s << "<rect class=\"bar\" x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(0.8 * slot)
        << "\" height=\"" << num(std::abs(py(v) - base)) << "\" fill=\"steelblue\"><title>"
        << escape(data.labels[order[r]]) << ' ' << tick(v) << "</title></rect>\n";
      const double cx = x0 + 0.4 * slot, cy = top + ph + 12;
      s << "<text class=\"label\" x=\"" << num(cx) << "\" y=\"" << num(cy) << "\" font-size=\"10\" transform=\"rotate(45 "
        << num(cx) << ' ' << num(cy) << ")\">" << escape(data.labels[order[r]]) << "</text>\n";
    }
  } else {
    const Range rx = style.identity_line && kind == PlotKind::Scatter ? ry : range_of(data.x);
    auto px = [&](double v) { return left + (v - rx.lo) / rx.span() * pw; };
    for (int t = 0; t <= 4; ++t) {
      const double v = rx.lo + rx.span() * t / 4.0;
      s << "<text class=\"tick\" x=\"" << num(px(v)) << "\" y=\"" << num(top + ph + 16)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << tick(v) << "</text>\n";
    }
    if (kind == PlotKind::Scatter) {
      if (style.identity_line)
        s << "<line class=\"identity\" x1=\"" << num(px(rx.lo)) << "\" y1=\"" << num(py(rx.lo)) << "\" x2=\""
          << num(px(rx.hi)) << "\" y2=\"" << num(py(rx.hi)) << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
      for (std::size_t i = 0; i < data.y.size(); ++i)
        s << "<circle class=\"point\" cx=\"" << num(px(data.x[i])) << "\" cy=\"" << num(py(data.y[i]))
          << "\" r=\"2.5\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n";
    } else {
      s << "<polyline class=\"series\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
      for (std::size_t i = 0; i < data.y.size(); ++i)
        s << (i ? " " : "") << num(px(data.x[i])) << ',' << num(py(data.y[i]));
      s << "\"/>\n";
    }
  }

  if (!style.x_label.empty())
    s << "<text class=\"xlabel\" x=\"" << num(left + pw / 2) << "\" y=\"" << num(style.height - 10.0)
      << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(style.x_label) << "</text>\n";
  if (!style.y_label.empty())
    s << "<text class=\"ylabel\" x=\"16\" y=\"" << num(top + ph / 2) << "\" text-anchor=\"middle\" font-size=\"13\" "
      << "transform=\"rotate(-90 16 " << num(top + ph / 2) << ")\">" << escape(style.y_label) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

nlohmann::ordered_json metadata_to_json(const RunMetadata& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["tool_version"] = m.tool_version;
  j["config_hash"] = m.config_hash;
  j["model_checksum"] = m.model_checksum;
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["elapsed_seconds"] = m.elapsed_seconds;
  j["extra"] = m.extra;
  return j;
}

RunMetadata metadata_from_json(const nlohmann::json& j) {
  RunMetadata m;
  m.command = j.at("command").get<std::string>();
  m.tool_version = j.value("tool_version", std::string{});
  m.config_hash = j.value("config_hash", std::string{});
  m.model_checksum = j.value("model_checksum", std::string{});
  m.config = j.at("config");
  if (j.contains("inputs")) m.inputs = j.at("inputs");
  m.elapsed_seconds = j.value("elapsed_seconds", 0.0);
  if (j.contains("extra")) m.extra = j.at("extra");
  return m;
}

std::string json_hash(const nlohmann::ordered_json& value) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(value.dump())));
  return buf;
}

}  // namespace fluxml
