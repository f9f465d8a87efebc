#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fluxml/condition.hpp"

namespace fluxml {

/// n x R flux matrix with the biomass target per row.
struct FluxDataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<std::string> reaction_ids;
  /// One id per row.
  std::vector<std::string> condition_ids;
  /// Every sampled condition, including ones dropped as infeasible.
  std::vector<ConditionRecord> condition_log;

  std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(X.cols()); }
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

struct SplitFractions {
  double train = 0.70;
  double validation = 0.15;
  double test = 0.15;
};

/// Random permutation partition. Validation and test sizes are
/// floor(fraction * n) with a minimum of one each; train takes the rest.
SplitIndices split(std::size_t n, std::uint64_t seed, SplitFractions fractions = {});

/// Per-feature affine scaling fitted on training rows. Population (1/n)
/// standard deviation; features with zero spread map to 0.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;
  std::vector<bool> constant;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& Z) const;
  std::size_t size() const { return mean.size(); }
};

Standardizer fit_standardizer(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows);

/// Fits on `train_rows` and returns the transform of every row of X.
std::pair<Standardizer, Eigen::MatrixXd> standardize_fit_apply(const Eigen::MatrixXd& X,
                                                               const std::vector<std::size_t>& train_rows);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};

/// Shuffled k-fold partition; holdout sizes differ by at most one, larger
/// folds first.
std::vector<Fold> kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed);

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows);
Eigen::VectorXd select_rows(const Eigen::VectorXd& y, const std::vector<std::size_t>& rows);
/// Copy of X without the given columns (given in any order).
Eigen::MatrixXd drop_columns(const Eigen::MatrixXd& X, const std::vector<std::size_t>& columns);

/// CSV with header `condition_id,<reaction ids...>,biomass`.
std::string dataset_to_csv(const FluxDataset& data);
FluxDataset dataset_from_csv(std::string_view text);

/// {condition_id: {glucose_uptake_lb, ..., status}} in sample order.
std::string condition_log_to_json(const std::vector<ConditionRecord>& log);
std::vector<ConditionRecord> condition_log_from_json(std::string_view text);

void save_dataset(const FluxDataset& data, const std::string& csv_path, const std::string& log_path);
FluxDataset load_dataset(const std::string& csv_path, const std::string& log_path = {});

}  // namespace fluxml
