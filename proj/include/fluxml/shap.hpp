#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fluxml/tree.hpp"

namespace fluxml {

class ShapError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Per-row attributions: base_value + values.row(i).sum() reproduces the
/// ensemble prediction for row i.
struct ShapMatrix {
  Eigen::MatrixXd values;
  double base_value = 0.0;
  /// Always "tree-cover": absent features are marginalized along the
  /// training-sample cover of each branch.
  std::string background = "tree-cover";
};

struct ImportanceEntry {
  std::size_t feature = 0;
  double mean_abs = 0.0;
  bool operator==(const ImportanceEntry&) const = default;
};

using ImportanceRanking = std::vector<ImportanceEntry>;

/// Cover-weighted expected output of one tree.
double tree_expected_value(const RegressionTree& tree);

/// Path-dependent TreeSHAP for a single tree and row. Output length is feature_count.
Eigen::VectorXd tree_shap_row(const RegressionTree& tree, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                              std::size_t feature_count);

ShapMatrix tree_shap(const TreeEnsemble& ensemble, const Eigen::MatrixXd& X, std::size_t workers = 1);

/// Definitional Shapley values of the cover-conditional game, by full
/// enumeration of the 2^R coalitions. R must be at most 20.
Eigen::VectorXd brute_force_shapley(const RegressionTree& tree, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                                    std::size_t feature_count);

/// Ranking by mean |phi| over rows, descending, ties by feature index.
/// top_k = 0 or top_k >= R keeps every feature.
ImportanceRanking global_importance(const ShapMatrix& shap, std::size_t top_k = 0);

/// rank,feature,reaction_id,mean_abs_shap
std::string importance_csv(const ImportanceRanking& ranking, const std::vector<std::string>& feature_names);

/// sample,feature,reaction_id,shap,value for every row and every feature in `features`.
std::string beeswarm_csv(const ShapMatrix& shap, const Eigen::MatrixXd& X, const std::vector<std::size_t>& features,
                         const std::vector<std::string>& feature_names);

}  // namespace fluxml
