#include "fluxml/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "fluxml/io.hpp"
#include "fluxml/rng.hpp"

namespace fluxml {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json real_or_null(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::optional<double> optional_real(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

LpStatus status_from_string(const std::string& s) {
  if (s == "optimal") return LpStatus::Optimal;
  if (s == "infeasible") return LpStatus::Infeasible;
  if (s == "unbounded") return LpStatus::Unbounded;
  throw std::invalid_argument("unknown LP status '" + s + "'");
}

}  // namespace

ordered_json condition_to_json(const ConditionSpec& c) {
  ordered_json j;
  j["glucose_uptake_lb"] = real_or_null(c.glucose_uptake_lb);
  j["oxygen_uptake_lb"] = real_or_null(c.oxygen_uptake_lb);
  j["ammonium_uptake_lb"] = real_or_null(c.ammonium_uptake_lb);
  ordered_json extra = ordered_json::object();
  for (const auto& [id, b] : c.extra_bounds) extra[id] = {b.first, b.second};
  j["extra_bounds"] = extra;
  return j;
}

ConditionSpec condition_from_json(const json& j) {
  ConditionSpec c;
  c.glucose_uptake_lb = optional_real(j, "glucose_uptake_lb");
  c.oxygen_uptake_lb = optional_real(j, "oxygen_uptake_lb");
  c.ammonium_uptake_lb = optional_real(j, "ammonium_uptake_lb");
  if (auto it = j.find("extra_bounds"); it != j.end() && it->is_object())
    for (const auto& [id, b] : it->items()) c.extra_bounds[id] = {b.at(0).get<double>(), b.at(1).get<double>()};
  return c;
}

SplitIndices split(std::size_t n, std::uint64_t seed, SplitFractions fractions) {
  const double total = fractions.train + fractions.validation + fractions.test;
  if (std::abs(total - 1.0) > 1e-9 || fractions.train < 0 || fractions.validation < 0 || fractions.test < 0)
    throw std::invalid_argument("split fractions must be non-negative and sum to 1");
  if (n < 3) throw std::invalid_argument("split needs at least 3 rows, got " + std::to_string(n));
  const auto part = [n](double f) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)));
  };
  const std::size_t n_val = part(fractions.validation);
  const std::size_t n_test = part(fractions.test);
  if (n_val + n_test >= n) throw std::invalid_argument("too few rows for non-empty split parts");

  Rng rng(seed);
  const auto order = permutation(n, rng);
  SplitIndices out;
  const std::size_t n_train = n - n_val - n_test;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                        order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return out;
}

Standardizer fit_standardizer(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw std::invalid_argument("standardizer needs at least one training row");
  const auto cols = static_cast<std::size_t>(X.cols());
  Standardizer s;
  s.mean.assign(cols, 0.0);
  s.scale.assign(cols, 1.0);
  s.constant.assign(cols, false);
  const double n = static_cast<double>(rows.size());
  for (std::size_t j = 0; j < cols; ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    double sum = 0.0;
    for (auto r : rows) sum += X(static_cast<Eigen::Index>(r), c);
    const double mu = sum / n;
    double ss = 0.0;
    for (auto r : rows) {
      const double d = X(static_cast<Eigen::Index>(r), c) - mu;
      ss += d * d;
    }
    const double sigma = std::sqrt(ss / n);
    s.mean[j] = mu;
    if (sigma <= 1e-12 * std::max(1.0, std::abs(mu))) {
      s.constant[j] = true;
      s.scale[j] = 0.0;
    } else {
      s.scale[j] = sigma;
    }
  }
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& X) const {
  if (static_cast<std::size_t>(X.cols()) != mean.size())
    throw std::invalid_argument("standardizer feature count mismatch");
  Eigen::MatrixXd Z(X.rows(), X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    if (constant[k])
      Z.col(j).setZero();
    else
      Z.col(j) = (X.col(j).array() - mean[k]) / scale[k];
  }
  return Z;
}

Eigen::MatrixXd Standardizer::inverse(const Eigen::MatrixXd& Z) const {
  if (static_cast<std::size_t>(Z.cols()) != mean.size())
    throw std::invalid_argument("standardizer feature count mismatch");
  Eigen::MatrixXd X(Z.rows(), Z.cols());
  for (Eigen::Index j = 0; j < Z.cols(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    X.col(j) = Z.col(j).array() * scale[k] + mean[k];
  }
  return X;
}

std::pair<Standardizer, Eigen::MatrixXd> standardize_fit_apply(const Eigen::MatrixXd& X,
                                                               const std::vector<std::size_t>& train_rows) {
  auto s = fit_standardizer(X, train_rows);
  auto Z = s.apply(X);
  return {std::move(s), std::move(Z)};
}

std::vector<Fold> kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("k-fold needs k >= 2");
  if (k > n) throw std::invalid_argument("k-fold needs k <= n");
  Rng rng(seed);
  const auto order = permutation(n, rng);
  std::vector<Fold> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].holdout.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                            order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  for (std::size_t f = 0; f < k; ++f)
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) folds[f].train.insert(folds[f].train.end(), folds[g].holdout.begin(), folds[g].holdout.end());
  return folds;
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

Eigen::VectorXd select_rows(const Eigen::VectorXd& y, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = y[static_cast<Eigen::Index>(rows[i])];
  return out;
}

Eigen::MatrixXd drop_columns(const Eigen::MatrixXd& X, const std::vector<std::size_t>& columns) {
  std::vector<bool> drop(static_cast<std::size_t>(X.cols()), false);
  for (auto c : columns) {
    if (c >= drop.size()) throw std::out_of_range("column index " + std::to_string(c) + " out of range");
    drop[c] = true;
  }
  const auto kept = static_cast<Eigen::Index>(std::count(drop.begin(), drop.end(), false));
  Eigen::MatrixXd out(X.rows(), kept);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    if (!drop[static_cast<std::size_t>(j)]) out.col(k++) = X.col(j);
  return out;
}

std::string dataset_to_csv(const FluxDataset& data) {
  std::string out = "condition_id";
  for (const auto& id : data.reaction_ids) out += "," + csv_field(id);
  out += ",biomass\n";
  for (Eigen::Index i = 0; i < data.X.rows(); ++i) {
    out += csv_field(data.condition_ids.at(static_cast<std::size_t>(i)));
    for (Eigen::Index j = 0; j < data.X.cols(); ++j) {
      out += ',';
      out += format_real(data.X(i, j));
    }
    out += ',';
    out += format_real(data.y[i]);
    out += '\n';
  }
  return out;
}

FluxDataset dataset_from_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("dataset CSV is empty");
  auto header = split_csv_line(line);
  if (header.size() < 3 || header.front() != "condition_id" || header.back() != "biomass")
    throw std::invalid_argument("dataset CSV header must be condition_id,<reactions...>,biomass");
  FluxDataset data;
  data.reaction_ids.assign(header.begin() + 1, header.end() - 1);
  const std::size_t R = data.reaction_ids.size();
  std::vector<double> values;
  std::vector<double> targets;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != R + 2)
      throw std::invalid_argument("dataset CSV line " + std::to_string(line_no) + " has " +
                                  std::to_string(fields.size()) + " fields, expected " + std::to_string(R + 2));
    data.condition_ids.push_back(fields[0]);
    for (std::size_t j = 0; j < R; ++j) values.push_back(parse_real(fields[j + 1]));
    targets.push_back(parse_real(fields[R + 1]));
  }
  const auto n = static_cast<Eigen::Index>(targets.size());
  data.X.resize(n, static_cast<Eigen::Index>(R));
  data.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < R; ++j)
      data.X(i, static_cast<Eigen::Index>(j)) = values[static_cast<std::size_t>(i) * R + j];
    data.y[i] = targets[static_cast<std::size_t>(i)];
  }
  return data;
}

std::string condition_log_to_json(const std::vector<ConditionRecord>& log) {
  ordered_json doc = ordered_json::object();
  for (const auto& rec : log) {
    auto entry = condition_to_json(rec.condition);
    entry["status"] = to_string(rec.status);
    doc[rec.condition_id] = std::move(entry);
  }
  return doc.dump(2) + "\n";
}

std::vector<ConditionRecord> condition_log_from_json(std::string_view text) {
  const auto doc = ordered_json::parse(text.begin(), text.end());
  std::vector<ConditionRecord> log;
  for (const auto& [id, entry] : doc.items()) {
    ConditionRecord rec;
    rec.condition_id = id;
    rec.condition = condition_from_json(json(entry));
    rec.status = status_from_string(entry.at("status").get<std::string>());
    log.push_back(std::move(rec));
  }
  return log;
}

void save_dataset(const FluxDataset& data, const std::string& csv_path, const std::string& log_path) {
  write_text_file(csv_path, dataset_to_csv(data));
  if (!log_path.empty()) write_text_file(log_path, condition_log_to_json(data.condition_log));
}

FluxDataset load_dataset(const std::string& csv_path, const std::string& log_path) {
  auto data = dataset_from_csv(read_text_file(csv_path));
  if (!log_path.empty()) data.condition_log = condition_log_from_json(read_text_file(log_path));
  return data;
}

}  // namespace fluxml
