#include "fluxml/shap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <thread>

#include "fluxml/io.hpp"

namespace fluxml {

namespace {

void check_covers(const RegressionTree& tree) {
  if (tree.nodes.empty()) throw ShapError("empty tree");
  for (const auto& n : tree.nodes)
    if (!(n.cover > 0.0) || !std::isfinite(n.cover)) throw ShapError("tree node cover metadata missing or non-positive");
}

struct PathElement {
  int feature;
  double zero_fraction;
  double one_fraction;
  double weight;
};

using Path = std::vector<PathElement>;

void extend_path(Path& path, double zero_fraction, double one_fraction, int feature) {
  const std::size_t d = path.size();
  path.push_back({feature, zero_fraction, one_fraction, d == 0 ? 1.0 : 0.0});
  const double denom = static_cast<double>(d + 1);
  for (std::size_t i = d; i-- > 0;) {
    path[i + 1].weight += one_fraction * path[i].weight * static_cast<double>(i + 1) / denom;
    path[i].weight = zero_fraction * path[i].weight * static_cast<double>(d - i) / denom;
  }
}

void unwind_path(Path& path, std::size_t index) {
  const std::size_t d = path.size() - 1;
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  const double denom = static_cast<double>(d + 1);
  double next = path[d].weight;
  for (std::size_t i = d; i-- > 0;) {
    if (one != 0.0) {
      const double tmp = path[i].weight;
      path[i].weight = next * denom / (static_cast<double>(i + 1) * one);
      next = tmp - path[i].weight * zero * static_cast<double>(d - i) / denom;
    } else {
      path[i].weight = path[i].weight * denom / (zero * static_cast<double>(d - i));
    }
  }
  for (std::size_t i = index; i < d; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
  path.pop_back();
}

double unwound_path_sum(const Path& path, std::size_t index) {
  const std::size_t d = path.size() - 1;
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  const double denom = static_cast<double>(d + 1);
  double next = path[d].weight;
  double total = 0.0;
  for (std::size_t i = d; i-- > 0;) {
    if (one != 0.0) {
      const double tmp = next * denom / (static_cast<double>(i + 1) * one);
      total += tmp;
      next = path[i].weight - tmp * zero * static_cast<double>(d - i) / denom;
    } else {
      total += path[i].weight / zero * denom / static_cast<double>(d - i);
    }
  }
  return total;
}

template <typename Row>
void shap_recurse(const RegressionTree& tree, int k, const Row& x, Eigen::VectorXd& phi, Path path,
                  double zero_fraction, double one_fraction, int feature) {
  extend_path(path, zero_fraction, one_fraction, feature);
  const auto& node = tree.nodes[static_cast<std::size_t>(k)];
  if (node.is_leaf()) {
    for (std::size_t i = 1; i < path.size(); ++i) {
      const double w = unwound_path_sum(path, i);
      phi[path[i].feature] += w * (path[i].one_fraction - path[i].zero_fraction) * node.value;
    }
    return;
  }
  const int hot = x[node.feature] <= node.threshold ? node.left : node.right;
  const int cold = hot == node.left ? node.right : node.left;
  double incoming_zero = 1.0;
  double incoming_one = 1.0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (path[i].feature == node.feature) {
      incoming_zero = path[i].zero_fraction;
      incoming_one = path[i].one_fraction;
      unwind_path(path, i);
      break;
    }
  }
  const double hot_cover = tree.nodes[static_cast<std::size_t>(hot)].cover;
  const double cold_cover = tree.nodes[static_cast<std::size_t>(cold)].cover;
  shap_recurse(tree, hot, x, phi, path, incoming_zero * hot_cover / node.cover, incoming_one, node.feature);
  shap_recurse(tree, cold, x, phi, std::move(path), incoming_zero * cold_cover / node.cover, 0.0, node.feature);
}

void check_features(const RegressionTree& tree, std::size_t feature_count) {
  for (const auto& n : tree.nodes)
    if (!n.is_leaf() && static_cast<std::size_t>(n.feature) >= feature_count)
      throw ShapError("tree uses feature " + std::to_string(n.feature) + " beyond feature count");
}

// E[f(x) | x_S] with absent features averaged over children by cover
double coalition_value(const RegressionTree& tree, int k, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                       std::uint32_t mask) {
  const auto& n = tree.nodes[static_cast<std::size_t>(k)];
  if (n.is_leaf()) return n.value;
  if (mask >> n.feature & 1u) return coalition_value(tree, x[n.feature] <= n.threshold ? n.left : n.right, x, mask);
  const auto& l = tree.nodes[static_cast<std::size_t>(n.left)];
  const auto& r = tree.nodes[static_cast<std::size_t>(n.right)];
  return (l.cover * coalition_value(tree, n.left, x, mask) + r.cover * coalition_value(tree, n.right, x, mask)) /
         n.cover;
}

}  // namespace

double tree_expected_value(const RegressionTree& tree) {
  check_covers(tree);
  const double root = tree.nodes[0].cover;
  double acc = 0.0;
  for (const auto& n : tree.nodes)
    if (n.is_leaf()) acc += n.value * n.cover;
  return acc / root;
}

Eigen::VectorXd tree_shap_row(const RegressionTree& tree, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                              std::size_t feature_count) {
  check_covers(tree);
  check_features(tree, feature_count);
  if (static_cast<std::size_t>(x.size()) != feature_count) throw ShapError("row length does not match feature count");
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(feature_count));
  Path path;
  path.reserve(32);
  shap_recurse(tree, 0, x, phi, std::move(path), 1.0, 1.0, -1);
  return phi;
}

ShapMatrix tree_shap(const TreeEnsemble& ensemble, const Eigen::MatrixXd& X, std::size_t workers) {
  if (static_cast<std::size_t>(X.cols()) != ensemble.feature_count)
    throw ShapError("feature count mismatch: ensemble expects " + std::to_string(ensemble.feature_count) + ", got " +
                    std::to_string(X.cols()));
  if (ensemble.trees.empty()) throw ShapError("ensemble has no trees");
  for (const auto& t : ensemble.trees) {
    check_covers(t);
    check_features(t, ensemble.feature_count);
  }
  const bool forest = ensemble.kind == EnsembleKind::Forest;
  const double scale = forest ? 1.0 / static_cast<double>(ensemble.trees.size()) : ensemble.learning_rate;

  ShapMatrix out;
  double expected = 0.0;
  for (const auto& t : ensemble.trees) expected += tree_expected_value(t);
  out.base_value = forest ? expected * scale : ensemble.base_score + scale * expected;
  out.values = Eigen::MatrixXd::Zero(X.rows(), X.cols());

  auto row = [&](Eigen::Index i) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(X.cols());
    for (const auto& t : ensemble.trees) acc += tree_shap_row(t, X.row(i), ensemble.feature_count);
    out.values.row(i) = (scale * acc).transpose();
  };
  const auto n = X.rows();
  const auto w = static_cast<Eigen::Index>(std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, std::size_t(n))));
  if (w == 1) {
    for (Eigen::Index i = 0; i < n; ++i) row(i);
  } else {
    std::vector<std::thread> pool;
    for (Eigen::Index k = 0; k < w; ++k)
      pool.emplace_back([&, k] {
        for (Eigen::Index i = k; i < n; i += w) row(i);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

Eigen::VectorXd brute_force_shapley(const RegressionTree& tree, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                                    std::size_t feature_count) {
  if (feature_count > 20) throw ShapError("brute-force Shapley needs R <= 20");
  check_covers(tree);
  check_features(tree, feature_count);
  if (static_cast<std::size_t>(x.size()) != feature_count) throw ShapError("row length does not match feature count");
  const std::size_t R = feature_count;
  const std::uint32_t masks = 1u << R;
  std::vector<double> v(masks);
  for (std::uint32_t m = 0; m < masks; ++m) v[m] = coalition_value(tree, 0, x, m);

  // |S|! (R - |S| - 1)! / R!
  std::vector<double> weight(R == 0 ? 1 : R);
  for (std::size_t s = 0; s < R; ++s) {
    double w = 1.0 / static_cast<double>(R);
    for (std::size_t k = 1; k <= s; ++k) w *= static_cast<double>(k) / static_cast<double>(R - k);
    weight[s] = w;
  }
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(R));
  for (std::size_t j = 0; j < R; ++j) {
    const std::uint32_t bit = 1u << j;
    double acc = 0.0;
    for (std::uint32_t m = 0; m < masks; ++m) {
      if (m & bit) continue;
      acc += weight[static_cast<std::size_t>(std::popcount(m))] * (v[m | bit] - v[m]);
    }
    phi[static_cast<Eigen::Index>(j)] = acc;
  }
  return phi;
}

ImportanceRanking global_importance(const ShapMatrix& shap, std::size_t top_k) {
  const auto R = static_cast<std::size_t>(shap.values.cols());
  ImportanceRanking out(R);
  const double n = static_cast<double>(std::max<Eigen::Index>(1, shap.values.rows()));
  for (std::size_t j = 0; j < R; ++j)
    out[j] = {j, shap.values.rows() ? shap.values.col(static_cast<Eigen::Index>(j)).cwiseAbs().sum() / n : 0.0};
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.mean_abs > b.mean_abs; });
  if (top_k > 0 && top_k < R) out.resize(top_k);
  return out;
}

namespace {

std::string name_of(const std::vector<std::string>& names, std::size_t j) {
  return j < names.size() ? names[j] : "f" + std::to_string(j);
}

}  // namespace

std::string importance_csv(const ImportanceRanking& ranking, const std::vector<std::string>& feature_names) {
  std::string out = "rank,feature,reaction_id,mean_abs_shap\n";
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    const auto& e = ranking[r];
    out += std::to_string(r + 1) + "," + std::to_string(e.feature) + "," + csv_field(name_of(feature_names, e.feature)) +
           "," + format_real(e.mean_abs) + "\n";
  }
  return out;
}

std::string beeswarm_csv(const ShapMatrix& shap, const Eigen::MatrixXd& X, const std::vector<std::size_t>& features,
                         const std::vector<std::string>& feature_names) {
  if (X.rows() != shap.values.rows() || X.cols() != shap.values.cols())
    throw ShapError("beeswarm: feature matrix does not match SHAP matrix");
  std::string out = "sample,feature,reaction_id,shap,value\n";
  for (auto j : features) {
    if (j >= static_cast<std::size_t>(X.cols())) throw ShapError("beeswarm: feature index out of range");
    const auto c = static_cast<Eigen::Index>(j);
    const auto name = csv_field(name_of(feature_names, j));
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      out += std::to_string(i) + "," + std::to_string(j) + "," + name + "," + format_real(shap.values(i, c)) + "," +
             format_real(X(i, c)) + "\n";
  }
  return out;
}

}  // namespace fluxml
