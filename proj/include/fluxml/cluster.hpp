#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fluxml/dataset.hpp"
#include "fluxml/model.hpp"

namespace fluxml {

class ClusterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PcaResult {
  Eigen::MatrixXd points;            // n x d
  std::vector<double> explained_variance_ratio;
  Eigen::MatrixXd components;        // cols x d, unit columns
  Eigen::RowVectorXd mean;
};

/// Projection of centered X onto the top-d covariance eigenvectors. Each
/// component is signed so its largest-magnitude entry is positive.
PcaResult pca(const Eigen::MatrixXd& X, std::size_t d);

struct ClusterModel {
  std::size_t k = 0;
  Eigen::MatrixXd centroids;  // k x d
  std::vector<std::size_t> assignments;
  double inertia = 0.0;
  /// Inertia after k-means++ seeding and after every Lloyd iteration of the winning restart.
  std::vector<double> inertia_trace;
  std::size_t restart = 0;
};

/// Lloyd's algorithm from k-means++ seeds, best of n_restarts by
/// (inertia, restart index). Restart r uses derive_seed(seed, r). An empty
/// cluster takes over the point farthest from its current centroid.
ClusterModel kmeans(const Eigen::MatrixXd& X, std::size_t k, std::uint64_t seed, std::size_t n_restarts = 10,
                    std::size_t max_iter = 300, std::size_t workers = 1);

double inertia(const Eigen::MatrixXd& X, const Eigen::MatrixXd& centroids, const std::vector<std::size_t>& assignments);

/// Per-sample silhouette; members of singleton clusters score 0.
std::vector<double> silhouette_samples(const Eigen::MatrixXd& X, const std::vector<std::size_t>& assignments);
double silhouette_score(const Eigen::MatrixXd& X, const std::vector<std::size_t>& assignments);

struct ClusterReport {
  std::vector<std::size_t> ks;
  std::vector<double> inertia;
  std::vector<double> silhouette;
  std::size_t chosen_k = 4;
  std::size_t silhouette_best_k = 0;
};

ClusterReport diagnostics_scan(const Eigen::MatrixXd& X, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                               std::size_t chosen_k = 4, std::size_t n_restarts = 10);

/// Mean of y per label 0..k-1; nullopt for a label nobody carries.
std::vector<std::optional<double>> cluster_biomass_stats(const std::vector<std::size_t>& assignments,
                                                         const Eigen::VectorXd& y, std::size_t k);

/// clusters x reactions matrix of mean flux; empty clusters give NaN rows.
Eigen::MatrixXd cluster_mean_flux(const FluxDataset& data, const std::vector<std::size_t>& assignments, std::size_t k,
                                  const std::vector<std::string>& reaction_ids);

/// Reactions with the largest positive (cluster mean - global mean) flux.
std::vector<std::string> top_upregulated(const FluxDataset& data, const std::vector<std::size_t>& assignments,
                                         std::size_t cluster, std::size_t top = 10);

/// Subsystem label -> count, descending by count then label. Reactions
/// without a label count as "unannotated".
std::vector<std::pair<std::string, std::size_t>> pathway_enrichment(const std::vector<std::string>& reaction_ids,
                                                                    const MetabolicModel& model);

std::string diagnostics_csv(const ClusterReport& report);
std::string assignments_csv(const std::vector<std::string>& condition_ids, const std::vector<std::size_t>& assignments,
                            const Eigen::MatrixXd& embedding);
std::string heatmap_csv(const Eigen::MatrixXd& means, const std::vector<std::string>& reaction_ids);
std::string enrichment_csv(const std::vector<std::pair<std::string, std::size_t>>& table);

}  // namespace fluxml
