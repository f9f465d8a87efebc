#include "fluxml/tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "fluxml/dataset.hpp"
#include "fluxml/rng.hpp"

namespace fluxml {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct GrowSettings {
  std::size_t max_depth = 0;
  std::size_t min_samples_leaf = 1;
  std::size_t max_features = 0;  // 0: all
  double lambda = 0.0;
};

/// Exact greedy CART on a fixed target vector. The split score of a node
/// with target sum G over n samples is G^2 / (n + lambda); with lambda = 0
/// the gain is exactly the reduction in squared error.
class TreeGrower {
 public:
  TreeGrower(const Eigen::MatrixXd& X, const Eigen::VectorXd& target, GrowSettings settings, Rng& rng)
      : X_(X), t_(target), s_(settings), rng_(rng), features_(static_cast<std::size_t>(X.cols())) {
    std::iota(features_.begin(), features_.end(), std::size_t{0});
  }

  RegressionTree grow(std::vector<std::size_t> rows) {
    tree_.nodes.clear();
    grow_node(rows, 0);
    return std::move(tree_);
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };

  int grow_node(std::vector<std::size_t>& rows, std::size_t depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    double sum = 0.0;
    double sumsq = 0.0;
    for (auto r : rows) {
      const double v = t_[static_cast<Eigen::Index>(r)];
      sum += v;
      sumsq += v * v;
    }
    const double n = static_cast<double>(rows.size());
    {
      auto& node = tree_.nodes.back();
      node.cover = n;
      node.value = sum / (n + s_.lambda);
    }

    const double sse = std::max(0.0, sumsq - sum * sum / n);
    const bool depth_ok = s_.max_depth == 0 || depth < s_.max_depth;
    if (!depth_ok || rows.size() < 2 * s_.min_samples_leaf || sse <= 1e-14 * std::max(1.0, sumsq)) return id;

    const Split best = find_split(rows, sum, n, sse);
    if (best.feature < 0) return id;

    std::vector<std::size_t> left_rows, right_rows;
    for (auto r : rows)
      (X_(static_cast<Eigen::Index>(r), best.feature) <= best.threshold ? left_rows : right_rows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    const int left = grow_node(left_rows, depth + 1);
    const int right = grow_node(right_rows, depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.gain = best.gain;
    node.left = left;
    node.right = right;
    return id;
  }

  Split find_split(const std::vector<std::size_t>& rows, double sum, double n, double sse) {
    std::vector<std::size_t> candidates = features_;
    if (s_.max_features > 0 && s_.max_features < candidates.size()) {
      // partial Fisher-Yates, then ascending so ties favour the lowest index
      for (std::size_t i = 0; i < s_.max_features; ++i) {
        const std::size_t j = i + rng_.below(candidates.size() - i);
        std::swap(candidates[i], candidates[j]);
      }
      candidates.resize(s_.max_features);
      std::sort(candidates.begin(), candidates.end());
    }

    const double parent = sum * sum / (n + s_.lambda);
    const double min_gain = 1e-12 * std::max(sse, 1e-300);
    Split best;
    std::vector<std::pair<double, double>> pts(rows.size());
    for (auto f : candidates) {
      const auto col = static_cast<Eigen::Index>(f);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(rows[i]);
        pts[i] = {X_(r, col), t_[r]};
      }
      std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      double left_sum = 0.0;
      const std::size_t total = pts.size();
      for (std::size_t i = 0; i + 1 < total; ++i) {
        left_sum += pts[i].second;
        if (pts[i].first == pts[i + 1].first) continue;
        const std::size_t nl = i + 1;
        const std::size_t nr = total - nl;
        if (nl < s_.min_samples_leaf || nr < s_.min_samples_leaf) continue;
        const double right_sum = sum - left_sum;
        const double gain = left_sum * left_sum / (static_cast<double>(nl) + s_.lambda) +
                            right_sum * right_sum / (static_cast<double>(nr) + s_.lambda) - parent;
        if (gain > min_gain && gain > best.gain) {
          best.feature = static_cast<int>(f);
          best.threshold = pts[i].first;
          best.gain = gain;
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& X_;
  const Eigen::VectorXd& t_;
  GrowSettings s_;
  Rng& rng_;
  std::vector<std::size_t> features_;
  RegressionTree tree_;
};

void check_training_input(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::size_t min_samples_leaf) {
  if (X.rows() != y.size()) throw TreeError("X and y row counts differ");
  if (X.rows() < 2) throw TreeError("need at least 2 training rows");
  if (X.cols() < 1) throw TreeError("need at least one feature");
  if (min_samples_leaf < 1) throw TreeError("min_samples_leaf must be >= 1");
  if (static_cast<std::size_t>(X.rows()) < min_samples_leaf)
    throw TreeError("fewer rows than min_samples_leaf");
  if (!X.allFinite() || !y.allFinite()) throw TreeError("training data contains non-finite values");
}

double mean_squared(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

}  // namespace

std::size_t RegressionTree::depth() const {
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    deepest = std::max(deepest, d[k]);
    if (!nodes[k].is_leaf()) {
      d[static_cast<std::size_t>(nodes[k].left)] = d[k] + 1;
      d[static_cast<std::size_t>(nodes[k].right)] = d[k] + 1;
    }
  }
  return deepest;
}

double TreeEnsemble::predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  double acc = 0.0;
  for (const auto& t : trees) acc += t.predict(x);
  if (kind == EnsembleKind::Forest) return trees.empty() ? 0.0 : acc / static_cast<double>(trees.size());
  return base_score + learning_rate * acc;
}

std::vector<double> TreeEnsemble::feature_importance() const {
  std::vector<double> imp(feature_count, 0.0);
  for (const auto& t : trees)
    for (const auto& n : t.nodes)
      if (!n.is_leaf()) imp[static_cast<std::size_t>(n.feature)] += n.gain;
  const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
  if (total > 0)
    for (auto& v : imp) v /= total;
  return imp;
}

TreeEnsemble fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestParams& params) {
  check_training_input(X, y, params.min_samples_leaf);
  if (params.n_trees < 1) throw TreeError("n_trees must be >= 1");
  const auto n = static_cast<std::size_t>(X.rows());
  const auto R = static_cast<std::size_t>(X.cols());

  GrowSettings settings;
  settings.max_depth = params.max_depth;
  settings.min_samples_leaf = params.min_samples_leaf;
  settings.max_features = params.max_features ? std::min(params.max_features, R) : std::max<std::size_t>(1, R / 3);

  TreeEnsemble out;
  out.kind = EnsembleKind::Forest;
  out.feature_count = R;
  out.params = params_to_json(params);
  out.trees.resize(params.n_trees);

  auto build = [&](std::size_t t) {
    Rng rng(derive_seed(params.seed, t));
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = rng.below(n);
    TreeGrower grower(X, y, settings, rng);
    out.trees[t] = grower.grow(std::move(rows));
  };
  const std::size_t workers = std::clamp<std::size_t>(params.workers, 1, params.n_trees);
  if (workers == 1) {
    for (std::size_t t = 0; t < params.n_trees; ++t) build(t);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < params.n_trees; t += workers) build(t);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

TreeEnsemble fit_boosted(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const BoostParams& params) {
  check_training_input(X, y, params.min_samples_leaf);
  if (!(params.learning_rate > 0.0)) throw TreeError("learning_rate must be > 0");
  if (!(params.lambda_l2 >= 0.0)) throw TreeError("lambda_l2 must be >= 0");
  if (!(params.subsample > 0.0 && params.subsample <= 1.0)) throw TreeError("subsample must be in (0, 1]");
  const auto n = static_cast<std::size_t>(X.rows());

  TreeEnsemble out;
  out.kind = EnsembleKind::Boosted;
  out.feature_count = static_cast<std::size_t>(X.cols());
  out.learning_rate = params.learning_rate;
  out.base_score = y.mean();
  out.params = params_to_json(params);

  GrowSettings settings;
  settings.max_depth = params.max_depth;
  settings.min_samples_leaf = params.min_samples_leaf;
  settings.lambda = params.lambda_l2;

  Eigen::VectorXd pred = Eigen::VectorXd::Constant(y.size(), out.base_score);
  out.training_loss.push_back(mean_squared(y, pred));
  const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(params.subsample * double(n))));
  for (std::size_t round = 0; round < params.n_rounds; ++round) {
    const Eigen::VectorXd residual = y - pred;
    Rng rng(derive_seed(params.seed, round));
    std::vector<std::size_t> rows;
    if (take < n) {
      rows = permutation(n, rng);
      rows.resize(take);
      std::sort(rows.begin(), rows.end());
    } else {
      rows.resize(n);
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    TreeGrower grower(X, residual, settings, rng);
    out.trees.push_back(grower.grow(std::move(rows)));
    const auto& tree = out.trees.back();
    for (Eigen::Index i = 0; i < X.rows(); ++i) pred[i] += params.learning_rate * tree.predict(X.row(i));
    out.training_loss.push_back(mean_squared(y, pred));
  }
  return out;
}

TreeEnsemble fit_ensemble(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TreeParams& params) {
  if (const auto* f = std::get_if<ForestParams>(&params)) return fit_forest(X, y, *f);
  return fit_boosted(X, y, std::get<BoostParams>(params));
}

Eigen::VectorXd predict(const TreeEnsemble& ensemble, const Eigen::MatrixXd& X) {
  if (static_cast<std::size_t>(X.cols()) != ensemble.feature_count)
    throw TreeError("feature count mismatch: ensemble expects " + std::to_string(ensemble.feature_count) + ", got " +
                    std::to_string(X.cols()));
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = ensemble.predict_row(X.row(i));
  return out;
}

RegressionMetrics metrics(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat) {
  if (y.size() != y_hat.size()) throw TreeError("metrics: length mismatch");
  if (y.size() < 1) throw TreeError("metrics: empty input");
  RegressionMetrics m;
  const double ss_res = (y - y_hat).squaredNorm();
  const double ss_tot = (y.array() - y.mean()).square().sum();
  m.mse = ss_res / static_cast<double>(y.size());
  if (ss_tot > 0.0)
    m.r2 = 1.0 - ss_res / ss_tot;
  else
    m.r2 = ss_res == 0.0 ? 1.0 : 0.0;
  return m;
}

RegressionMetrics cross_validate(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TreeParams& params,
                                 std::size_t k, std::uint64_t seed) {
  const auto folds = kfold_indices(static_cast<std::size_t>(X.rows()), k, seed);
  RegressionMetrics out;
  for (const auto& fold : folds) {
    const auto model = fit_ensemble(select_rows(X, fold.train), select_rows(y, fold.train), params);
    const auto yh = select_rows(y, fold.holdout);
    const auto m = metrics(yh, predict(model, select_rows(X, fold.holdout)));
    out.fold_r2.push_back(m.r2);
    out.fold_mse.push_back(m.mse);
  }
  auto mean_std = [](const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, std::sqrt(ss / static_cast<double>(v.size()))};
  };
  std::tie(out.r2, out.r2_std) = mean_std(out.fold_r2);
  std::tie(out.mse, out.mse_std) = mean_std(out.fold_mse);
  return out;
}

AblationResult ablate(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const std::vector<std::size_t>& excluded_features, const TreeParams& params,
                      std::uint64_t split_seed) {
  if (excluded_features.empty()) throw TreeError("ablation needs at least one excluded feature");
  std::vector<std::size_t> excluded = excluded_features;
  std::sort(excluded.begin(), excluded.end());
  excluded.erase(std::unique(excluded.begin(), excluded.end()), excluded.end());
  for (auto f : excluded)
    if (f >= static_cast<std::size_t>(X.cols())) throw TreeError("excluded feature " + std::to_string(f) + " out of range");
  if (excluded.size() == static_cast<std::size_t>(X.cols())) throw TreeError("ablation cannot exclude every feature");

  const auto parts = split(static_cast<std::size_t>(X.rows()), split_seed);
  const auto Xtr = select_rows(X, parts.train);
  const auto ytr = select_rows(y, parts.train);
  const auto Xte = select_rows(X, parts.test);
  const auto yte = select_rows(y, parts.test);

  AblationResult out;
  out.excluded = excluded;
  out.full = metrics(yte, predict(fit_ensemble(Xtr, ytr, params), Xte));
  const auto Xtr_a = drop_columns(Xtr, excluded);
  const auto Xte_a = drop_columns(Xte, excluded);
  out.ablated = metrics(yte, predict(fit_ensemble(Xtr_a, ytr, params), Xte_a));
  return out;
}

GridSearchResult grid_search(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const std::vector<std::size_t>& train, const std::vector<std::size_t>& validation,
                             EnsembleKind kind, std::uint64_t seed) {
  std::vector<TreeParams> grid;
  if (kind == EnsembleKind::Forest) {
    for (std::size_t trees : {100, 200})
      for (std::size_t depth : {0, 8})
        for (std::size_t leaf : {1, 3}) {
          ForestParams p;
          p.n_trees = trees;
          p.max_depth = depth;
          p.min_samples_leaf = leaf;
          p.seed = seed;
          grid.emplace_back(p);
        }
  } else {
    for (double lr : {0.05, 0.1, 0.3})
      for (std::size_t depth : {3, 6})
        for (double lambda : {0.1, 1.0, 10.0}) {
          BoostParams p;
          p.learning_rate = lr;
          p.max_depth = depth;
          p.lambda_l2 = lambda;
          p.seed = seed;
          grid.emplace_back(p);
        }
  }
  const auto Xtr = select_rows(X, train);
  const auto ytr = select_rows(y, train);
  const auto Xva = select_rows(X, validation);
  const auto yva = select_rows(y, validation);
  GridSearchResult out;
  bool first = true;
  for (const auto& p : grid) {
    const double r2 = metrics(yva, predict(fit_ensemble(Xtr, ytr, p), Xva)).r2;
    out.evaluated.emplace_back(params_to_json(p), r2);
    if (first || r2 > out.best_validation_r2) {
      out.best = p;
      out.best_validation_r2 = r2;
      first = false;
    }
  }
  return out;
}

json params_to_json(const TreeParams& params) {
  if (const auto* f = std::get_if<ForestParams>(&params))
    return {{"kind", "forest"},
            {"n_trees", f->n_trees},
            {"max_depth", f->max_depth},
            {"min_samples_leaf", f->min_samples_leaf},
            {"max_features", f->max_features},
            {"seed", f->seed}};
  const auto& b = std::get<BoostParams>(params);
  return {{"kind", "boosted"},       {"n_rounds", b.n_rounds},   {"learning_rate", b.learning_rate},
          {"max_depth", b.max_depth}, {"lambda_l2", b.lambda_l2}, {"min_samples_leaf", b.min_samples_leaf},
          {"subsample", b.subsample}, {"seed", b.seed}};
}

namespace {

ordered_json node_to_json(const RegressionTree& tree, int k) {
  const auto& n = tree.nodes[static_cast<std::size_t>(k)];
  ordered_json j;
  if (n.is_leaf()) {
    j["value"] = n.value;
    j["cover"] = n.cover;
    return j;
  }
  j["feature"] = n.feature;
  j["threshold"] = n.threshold;
  j["cover"] = n.cover;
  j["gain"] = n.gain;
  j["value"] = n.value;
  j["left"] = node_to_json(tree, n.left);
  j["right"] = node_to_json(tree, n.right);
  return j;
}

int node_from_json(RegressionTree& tree, const json& j) {
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  TreeNode n;
  if (!j.contains("cover")) throw TreeError("tree node is missing cover");
  n.cover = j.at("cover").get<double>();
  n.value = j.value("value", 0.0);
  if (j.contains("feature")) {
    n.feature = j.at("feature").get<int>();
    n.threshold = j.at("threshold").get<double>();
    n.gain = j.value("gain", 0.0);
    n.left = node_from_json(tree, j.at("left"));
    n.right = node_from_json(tree, j.at("right"));
  }
  tree.nodes[static_cast<std::size_t>(id)] = n;
  return id;
}

}  // namespace

ordered_json ensemble_to_json(const TreeEnsemble& e) {
  ordered_json j;
  j["kind"] = e.kind == EnsembleKind::Forest ? "forest" : "boosted";
  j["params"] = e.params;
  j["feature_count"] = e.feature_count;
  j["learning_rate"] = e.learning_rate;
  j["base_score"] = e.base_score;
  j["trees"] = ordered_json::array();
  for (const auto& t : e.trees) j["trees"].push_back(node_to_json(t, 0));
  return j;
}

TreeEnsemble ensemble_from_json(const json& doc) {
  TreeEnsemble e;
  const auto kind = doc.at("kind").get<std::string>();
  if (kind == "forest")
    e.kind = EnsembleKind::Forest;
  else if (kind == "boosted")
    e.kind = EnsembleKind::Boosted;
  else
    throw TreeError("unknown ensemble kind '" + kind + "'");
  e.params = doc.value("params", json::object());
  e.feature_count = doc.at("feature_count").get<std::size_t>();
  e.learning_rate = doc.value("learning_rate", 1.0);
  e.base_score = doc.value("base_score", 0.0);
  for (const auto& t : doc.at("trees")) {
    RegressionTree tree;
    node_from_json(tree, t);
    e.trees.push_back(std::move(tree));
  }
  return e;
}

}  // namespace fluxml
