#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace fluxml {

/// Node of a regression tree stored in a flat arena. Internal nodes send
/// x[feature] <= threshold to `left`. `cover` is the number of training
/// samples (with bootstrap multiplicity) that reached the node.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  double cover = 0.0;
  /// Criterion improvement of the split; 0 for leaves.
  double gain = 0.0;

  bool is_leaf() const noexcept { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  template <typename Row>
  double predict(const Row& x) const {
    int k = 0;
    while (!nodes[static_cast<std::size_t>(k)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(k)];
      k = x[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(k)].value;
  }

  std::size_t depth() const;
  bool operator==(const RegressionTree&) const = default;
};

enum class EnsembleKind { Forest, Boosted };

struct ForestParams {
  std::size_t n_trees = 200;
  /// 0 means unlimited.
  std::size_t max_depth = 0;
  std::size_t min_samples_leaf = 1;
  /// Features tried per split; 0 means max(1, R / 3).
  std::size_t max_features = 0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct BoostParams {
  std::size_t n_rounds = 200;
  double learning_rate = 0.1;
  /// 0 means unlimited.
  std::size_t max_depth = 6;
  double lambda_l2 = 1.0;
  std::size_t min_samples_leaf = 1;
  /// Row fraction drawn without replacement per round.
  double subsample = 1.0;
  std::uint64_t seed = 0;
};

using TreeParams = std::variant<ForestParams, BoostParams>;

class TreeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Forest output is the mean over trees. Boosted output is
/// base_score + learning_rate * sum over trees.
struct TreeEnsemble {
  EnsembleKind kind = EnsembleKind::Forest;
  std::vector<RegressionTree> trees;
  double learning_rate = 1.0;
  double base_score = 0.0;
  std::size_t feature_count = 0;
  nlohmann::json params;
  /// Boosted only: training MSE before the first round and after each round.
  std::vector<double> training_loss;

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  /// Normalized split-gain importance per feature (sums to 1 unless no splits).
  std::vector<double> feature_importance() const;

  bool operator==(const TreeEnsemble& o) const {
    return kind == o.kind && trees == o.trees && learning_rate == o.learning_rate && base_score == o.base_score &&
           feature_count == o.feature_count;
  }
};

struct RegressionMetrics {
  double r2 = 0.0;
  double mse = 0.0;
  /// Populated by cross-validation; r2/mse are then the fold means.
  std::vector<double> fold_r2;
  std::vector<double> fold_mse;
  double r2_std = 0.0;
  double mse_std = 0.0;
};

TreeEnsemble fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestParams& params = {});
TreeEnsemble fit_boosted(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const BoostParams& params = {});
TreeEnsemble fit_ensemble(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TreeParams& params);

Eigen::VectorXd predict(const TreeEnsemble& ensemble, const Eigen::MatrixXd& X);

/// R^2 and MSE. When the target has zero variance R^2 is 1 for a perfect
/// fit and 0 otherwise.
RegressionMetrics metrics(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat);

/// k-fold CV: per-fold holdout metrics plus their mean and population std.
RegressionMetrics cross_validate(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TreeParams& params,
                                 std::size_t k = 5, std::uint64_t seed = 0);

struct AblationResult {
  RegressionMetrics full;
  RegressionMetrics ablated;
  std::vector<std::size_t> excluded;
};

/// Trains on the train part of split(n, split_seed) with and without the
/// excluded columns and scores both on the same test part.
AblationResult ablate(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const std::vector<std::size_t>& excluded_features, const TreeParams& params,
                      std::uint64_t split_seed);

struct GridSearchResult {
  TreeParams best;
  double best_validation_r2 = 0.0;
  std::vector<std::pair<nlohmann::json, double>> evaluated;
};

/// Small fixed grids scored on the validation rows only.
/// Forest: n_trees {100, 200} x max_depth {unlimited, 8} x min_samples_leaf {1, 3}.
/// Boosted: learning_rate {0.05, 0.1, 0.3} x max_depth {3, 6} x lambda {0.1, 1, 10}.
GridSearchResult grid_search(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const std::vector<std::size_t>& train, const std::vector<std::size_t>& validation,
                             EnsembleKind kind, std::uint64_t seed);

nlohmann::json params_to_json(const TreeParams& params);
nlohmann::ordered_json ensemble_to_json(const TreeEnsemble& ensemble);
TreeEnsemble ensemble_from_json(const nlohmann::json& doc);

}  // namespace fluxml
