#include "fluxml/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <thread>

#include "fluxml/io.hpp"
#include "fluxml/rng.hpp"

namespace fluxml {

PcaResult pca(const Eigen::MatrixXd& X, std::size_t d) {
  const auto n = static_cast<std::size_t>(X.rows());
  const auto p = static_cast<std::size_t>(X.cols());
  if (n < 2) throw ClusterError("PCA needs at least two rows");
  if (d < 1 || d > std::min(n, p)) throw ClusterError("PCA dimension " + std::to_string(d) + " exceeds min(n, cols)");
  PcaResult out;
  out.mean = X.colwise().mean();
  const Eigen::MatrixXd Xc = X.rowwise() - out.mean;
  const Eigen::MatrixXd C = (Xc.transpose() * Xc) / double(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
  if (eig.info() != Eigen::Success) throw ClusterError("covariance eigendecomposition failed");
  const Eigen::VectorXd values = eig.eigenvalues().cwiseMax(0.0);
  const double total = values.sum();
  out.components.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(d));
  for (std::size_t c = 0; c < d; ++c) {
    const auto src = static_cast<Eigen::Index>(p - 1 - c);
    Eigen::VectorXd v = eig.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    out.components.col(static_cast<Eigen::Index>(c)) = v;
    out.explained_variance_ratio.push_back(total > 0 ? values[src] / total : 0.0);
  }
  out.points = Xc * out.components;
  return out;
}

double inertia(const Eigen::MatrixXd& X, const Eigen::MatrixXd& centroids, const std::vector<std::size_t>& assignments) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    acc += (X.row(i) - centroids.row(static_cast<Eigen::Index>(assignments[std::size_t(i)]))).squaredNorm();
  return acc;
}

namespace {

std::size_t nearest(const Eigen::MatrixXd& C, const Eigen::Ref<const Eigen::RowVectorXd>& x, double* dist) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < C.rows(); ++c) {
    const double d = (x - C.row(c)).squaredNorm();
    if (d < bd) {
      bd = d;
      best = static_cast<std::size_t>(c);
    }
  }
  if (dist) *dist = bd;
  return best;
}

Eigen::MatrixXd plus_plus_seeds(const Eigen::MatrixXd& X, std::size_t k, Rng& rng) {
  const auto n = static_cast<std::size_t>(X.rows());
  Eigen::MatrixXd C(static_cast<Eigen::Index>(k), X.cols());
  C.row(0) = X.row(static_cast<Eigen::Index>(rng.below(n)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (X.row(long(i)) - C.row(0)).squaredNorm();
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = n - 1;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0 && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      while (d2[pick] == 0.0 && pick > 0) --pick;
    } else {
      pick = rng.below(n);
    }
    C.row(long(c)) = X.row(long(pick));
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], (X.row(long(i)) - C.row(long(c))).squaredNorm());
  }
  return C;
}

ClusterModel lloyd(const Eigen::MatrixXd& X, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  const auto n = static_cast<std::size_t>(X.rows());
  Rng rng(seed);
  ClusterModel m;
  m.k = k;
  m.centroids = plus_plus_seeds(X, k, rng);
  m.assignments.assign(n, 0);
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) m.assignments[i] = nearest(m.centroids, X.row(long(i)), &dist[i]);
  m.inertia_trace.push_back(inertia(X, m.centroids, m.assignments));

  for (std::size_t it = 0; it < max_iter; ++it) {
    // repair empty clusters with the farthest point of a cluster that can spare one
    std::vector<std::size_t> counts(k, 0);
    for (auto a : m.assignments) ++counts[a];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = n;
      double fd = -1.0;
      for (std::size_t i = 0; i < n; ++i)
        if (counts[m.assignments[i]] > 1 && dist[i] > fd) {
          fd = dist[i];
          far = i;
        }
      if (far == n) break;
      --counts[m.assignments[far]];
      m.assignments[far] = c;
      counts[c] = 1;
      dist[far] = 0.0;
    }
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), X.cols());
    for (std::size_t i = 0; i < n; ++i) next.row(long(m.assignments[i])) += X.row(long(i));
    for (std::size_t c = 0; c < k; ++c)
      next.row(long(c)) = counts[c] ? Eigen::RowVectorXd(next.row(long(c)) / double(counts[c]))
                                    : Eigen::RowVectorXd(m.centroids.row(long(c)));
    m.centroids = std::move(next);

    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      double d = 0.0;
      const auto a = nearest(m.centroids, X.row(long(i)), &d);
      // keep the current label on exact ties so convergence is not delayed
      const double current = (X.row(long(i)) - m.centroids.row(long(m.assignments[i]))).squaredNorm();
      if (a != m.assignments[i] && d < current) {
        m.assignments[i] = a;
        changed = true;
        dist[i] = d;
      } else {
        dist[i] = current;
      }
    }
    m.inertia_trace.push_back(inertia(X, m.centroids, m.assignments));
    if (!changed) break;
  }
  m.inertia = m.inertia_trace.back();
  return m;
}

}  // namespace

ClusterModel kmeans(const Eigen::MatrixXd& X, std::size_t k, std::uint64_t seed, std::size_t n_restarts,
                    std::size_t max_iter, std::size_t workers) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (k < 1) throw ClusterError("k must be >= 1");
  if (k > n) throw ClusterError("k = " + std::to_string(k) + " exceeds the number of points " + std::to_string(n));
  if (n_restarts < 1) throw ClusterError("n_restarts must be >= 1");
  if (!X.allFinite()) throw ClusterError("k-means input contains non-finite values");

  std::vector<ClusterModel> runs(n_restarts);
  const std::size_t w = std::clamp<std::size_t>(workers, 1, n_restarts);
  if (w == 1) {
    for (std::size_t r = 0; r < n_restarts; ++r) runs[r] = lloyd(X, k, derive_seed(seed, r), max_iter);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < w; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t r = t; r < n_restarts; r += w) runs[r] = lloyd(X, k, derive_seed(seed, r), max_iter);
      });
    for (auto& th : pool) th.join();
  }
  std::size_t best = 0;
  for (std::size_t r = 1; r < n_restarts; ++r)
    if (runs[r].inertia < runs[best].inertia) best = r;
  runs[best].restart = best;
  return std::move(runs[best]);
}

std::vector<double> silhouette_samples(const Eigen::MatrixXd& X, const std::vector<std::size_t>& assignments) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (assignments.size() != n) throw ClusterError("assignments length does not match the data");
  std::size_t k = 0;
  for (auto a : assignments) k = std::max(k, a + 1);
  std::vector<std::size_t> counts(k, 0);
  for (auto a : assignments) ++counts[a];
  std::vector<double> s(n, 0.0);
  std::vector<double> sums(k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto own = assignments[i];
    if (counts[own] <= 1) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sums[assignments[j]] += (X.row(long(i)) - X.row(long(j))).norm();
    const double a = sums[own] / double(counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (c != own && counts[c] > 0) b = std::min(b, sums[c] / double(counts[c]));
    if (!std::isfinite(b)) continue;
    const double denom = std::max(a, b);
    s[i] = denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return s;
}

double silhouette_score(const Eigen::MatrixXd& X, const std::vector<std::size_t>& assignments) {
  const auto s = silhouette_samples(X, assignments);
  if (s.empty()) return 0.0;
  double acc = 0.0;
  for (double v : s) acc += v;
  return acc / double(s.size());
}

ClusterReport diagnostics_scan(const Eigen::MatrixXd& X, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                               std::size_t chosen_k, std::size_t n_restarts) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (k_min < 2 || k_max < k_min || k_max + 1 > n)
    throw ClusterError("k range must lie within [2, n-1]");
  ClusterReport r;
  r.chosen_k = chosen_k;
  double best = -2.0;
  for (std::size_t k = k_min; k <= k_max; ++k) {
    const auto m = kmeans(X, k, seed, n_restarts);
    r.ks.push_back(k);
    r.inertia.push_back(m.inertia);
    r.silhouette.push_back(silhouette_score(X, m.assignments));
    if (r.silhouette.back() > best) {
      best = r.silhouette.back();
      r.silhouette_best_k = k;
    }
  }
  return r;
}

std::vector<std::optional<double>> cluster_biomass_stats(const std::vector<std::size_t>& assignments,
                                                         const Eigen::VectorXd& y, std::size_t k) {
  if (assignments.size() != static_cast<std::size_t>(y.size())) throw ClusterError("assignments and y lengths differ");
  std::vector<double> sum(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] >= k) throw ClusterError("cluster label out of range");
    sum[assignments[i]] += y[long(i)];
    ++count[assignments[i]];
  }
  std::vector<std::optional<double>> out(k);
  for (std::size_t c = 0; c < k; ++c)
    if (count[c]) out[c] = sum[c] / double(count[c]);
  return out;
}

namespace {

std::vector<Eigen::Index> column_indices(const FluxDataset& data, const std::vector<std::string>& ids) {
  std::vector<Eigen::Index> cols;
  for (const auto& id : ids) {
    const auto it = std::find(data.reaction_ids.begin(), data.reaction_ids.end(), id);
    if (it == data.reaction_ids.end()) throw ClusterError("unknown reaction id '" + id + "'");
    cols.push_back(static_cast<Eigen::Index>(it - data.reaction_ids.begin()));
  }
  return cols;
}

}  // namespace

Eigen::MatrixXd cluster_mean_flux(const FluxDataset& data, const std::vector<std::size_t>& assignments, std::size_t k,
                                  const std::vector<std::string>& reaction_ids) {
  if (assignments.size() != static_cast<std::size_t>(data.X.rows()))
    throw ClusterError("assignments length does not match the dataset");
  const auto cols = column_indices(data, reaction_ids);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(cols.size()));
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    const auto c = assignments[i];
    if (c >= k) throw ClusterError("cluster label out of range");
    ++count[c];
    for (std::size_t j = 0; j < cols.size(); ++j) out(long(c), long(j)) += data.X(long(i), cols[j]);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c])
      out.row(long(c)) /= double(count[c]);
    else
      out.row(long(c)).setConstant(std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

std::vector<std::string> top_upregulated(const FluxDataset& data, const std::vector<std::size_t>& assignments,
                                         std::size_t cluster, std::size_t top) {
  if (assignments.size() != static_cast<std::size_t>(data.X.rows()))
    throw ClusterError("assignments length does not match the dataset");
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(data.X.cols());
  std::size_t count = 0;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] == cluster) {
      sum += data.X.row(long(i));
      ++count;
    }
  if (count == 0) throw ClusterError("cluster " + std::to_string(cluster) + " is empty");
  const Eigen::RowVectorXd diff = sum / double(count) - data.X.colwise().mean();
  std::vector<std::size_t> order;
  for (Eigen::Index j = 0; j < diff.size(); ++j)
    if (diff[j] > 0.0) order.push_back(std::size_t(j));
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return diff[long(a)] > diff[long(b)]; });
  if (order.size() > top) order.resize(top);
  std::vector<std::string> ids;
  for (auto j : order) ids.push_back(data.reaction_ids[j]);
  return ids;
}

std::vector<std::pair<std::string, std::size_t>> pathway_enrichment(const std::vector<std::string>& reaction_ids,
                                                                    const MetabolicModel& model) {
  std::map<std::string, std::size_t> counts;
  for (const auto& id : reaction_ids) {
    const auto j = model.find_reaction(id);
    if (!j) throw ClusterError("unknown reaction id '" + id + "'");
    const auto& sub = model.reaction(*j).subsystem;
    ++counts[sub && !sub->empty() ? *sub : "unannotated"];
  }
  std::vector<std::pair<std::string, std::size_t>> out(counts.begin(), counts.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

std::string diagnostics_csv(const ClusterReport& report) {
  std::string out = "k,inertia,silhouette\n";
  for (std::size_t i = 0; i < report.ks.size(); ++i)
    out += std::to_string(report.ks[i]) + "," + format_real(report.inertia[i]) + "," + format_real(report.silhouette[i]) +
           "\n";
  return out;
}

std::string assignments_csv(const std::vector<std::string>& condition_ids, const std::vector<std::size_t>& assignments,
                            const Eigen::MatrixXd& embedding) {
  if (condition_ids.size() != assignments.size() || static_cast<std::size_t>(embedding.rows()) != assignments.size())
    throw ClusterError("assignments export: length mismatch");
  std::string out = "condition_id,cluster";
  for (Eigen::Index j = 0; j < embedding.cols(); ++j) out += ",z" + std::to_string(j + 1);
  out += "\n";
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    out += csv_field(condition_ids[i]) + "," + std::to_string(assignments[i]);
    for (Eigen::Index j = 0; j < embedding.cols(); ++j) out += "," + format_real(embedding(long(i), j));
    out += "\n";
  }
  return out;
}

std::string heatmap_csv(const Eigen::MatrixXd& means, const std::vector<std::string>& reaction_ids) {
  if (static_cast<std::size_t>(means.cols()) != reaction_ids.size()) throw ClusterError("heatmap export: width mismatch");
  std::string out = "cluster";
  for (const auto& id : reaction_ids) out += "," + csv_field(id);
  out += "\n";
  for (Eigen::Index c = 0; c < means.rows(); ++c) {
    out += std::to_string(c);
    for (Eigen::Index j = 0; j < means.cols(); ++j) out += "," + format_real(means(c, j));
    out += "\n";
  }
  return out;
}

std::string enrichment_csv(const std::vector<std::pair<std::string, std::size_t>>& table) {
  std::string out = "subsystem,count\n";
  for (const auto& [label, count] : table) out += csv_field(label) + "," + std::to_string(count) + "\n";
  return out;
}

}  // namespace fluxml
