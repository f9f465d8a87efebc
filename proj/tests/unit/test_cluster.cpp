#include <doctest.h>

#include <cmath>

#include "fluxml/cluster.hpp"
#include "fluxml/rng.hpp"

using namespace fluxml;

namespace {

Eigen::MatrixXd gaussian(std::size_t n, Eigen::Index d, Rng& rng, double sd = 1.0) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = sd * rng.normal();
  return X;
}

// two tight clouds 20 apart; truth is row < n/2
Eigen::MatrixXd two_clouds(std::size_t n, Rng& rng) {
  Eigen::MatrixXd X = gaussian(n, 2, rng, 0.5);
  for (std::size_t i = n / 2; i < n; ++i) X(long(i), 0) += 20.0;
  return X;
}

bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j)
      if ((a[i] == a[j]) != (b[i] == b[j])) return false;
  return true;
}

FluxDataset tiny_dataset() {
  FluxDataset d;
  d.reaction_ids = {"R1", "R2", "R3"};
  d.X = Eigen::MatrixXd{{0, 1, 5}, {0, 3, 5}, {10, 2, 5}, {10, 6, 5}};
  d.y = Eigen::VectorXd{{1, 2, 3, 4}};
  d.condition_ids = {"c0", "c1", "c2", "c3"};
  return d;
}

}  // namespace

TEST_CASE("PCA") {
  Rng rng(1);
  SUBCASE("points on a line") {
    Eigen::MatrixXd X(50, 3);
    for (Eigen::Index i = 0; i < 50; ++i) {
      const double t = rng.normal();
      X.row(i) << 1 + 2 * t, -t, 3 + 0.5 * t;
    }
    const auto r = pca(X, 2);
    CHECK(std::abs(r.explained_variance_ratio[0] - 1.0) <= 1e-9);
    CHECK(r.points.col(1).cwiseAbs().maxCoeff() <= 1e-9);
  }
  SUBCASE("isotropic sample") {
    const auto r = pca(gaussian(20000, 2, rng), 2);
    CHECK(std::abs(r.explained_variance_ratio[0] - 0.5) <= 0.05);
    CHECK(std::abs(r.explained_variance_ratio[1] - 0.5) <= 0.05);
    CHECK(r.explained_variance_ratio[0] >= r.explained_variance_ratio[1]);
  }
  SUBCASE("full dimension") {
    const auto r = pca(gaussian(40, 4, rng), 4);
    double sum = 0.0;
    for (double v : r.explained_variance_ratio) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    for (std::size_t i = 1; i < 4; ++i) CHECK(r.explained_variance_ratio[i - 1] >= r.explained_variance_ratio[i]);
    // orthonormal components
    CHECK((r.components.transpose() * r.components - Eigen::MatrixXd::Identity(4, 4)).norm() <= 1e-10);
  }
  CHECK_THROWS_AS(pca(gaussian(5, 3, rng), 4), ClusterError);
  CHECK_THROWS_AS(pca(gaussian(1, 3, rng), 1), ClusterError);
}

TEST_CASE("k-means recovers separated clouds") {
  Rng rng(2);
  const auto X = two_clouds(100, rng);
  const auto m = kmeans(X, 2, 7);
  std::vector<std::size_t> truth(100);
  for (std::size_t i = 0; i < 100; ++i) truth[i] = i < 50 ? 0 : 1;
  CHECK(same_partition(m.assignments, truth));
  CHECK(silhouette_score(X, m.assignments) > 0.9);
  CHECK(std::abs(m.inertia - inertia(X, m.centroids, m.assignments)) <= 1e-9 * m.inertia);
}

TEST_CASE("k-means limits") {
  Rng rng(3);
  const auto X = gaussian(30, 3, rng);
  const auto one = kmeans(X, 1, 1);
  const Eigen::MatrixXd centered = X.rowwise() - X.colwise().mean();
  CHECK(one.inertia == doctest::Approx(centered.squaredNorm()).epsilon(1e-12));
  CHECK(kmeans(X, 30, 1).inertia == 0.0);
  CHECK_THROWS_AS(kmeans(X, 31, 1), ClusterError);
  CHECK_THROWS_AS(kmeans(X, 0, 1), ClusterError);
}

TEST_CASE("Lloyd inertia never increases") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto X = gaussian(80, 3, rng);
    const auto m = kmeans(X, 2 + rng.below(6), rng.next_u64(), 3);
    REQUIRE(m.inertia_trace.size() >= 2);
    for (std::size_t i = 1; i < m.inertia_trace.size(); ++i)
      CHECK(m.inertia_trace[i] <= m.inertia_trace[i - 1] * (1 + 1e-12));
    for (auto a : m.assignments) CHECK(a < m.k);
  }
}

TEST_CASE("empty clusters are repaired") {
  // many duplicates force coincident seeds
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(12, 2);
  X(10, 0) = 5;
  X(11, 0) = 9;
  const auto m = kmeans(X, 3, 5, 4);
  std::vector<std::size_t> counts(3, 0);
  for (auto a : m.assignments) ++counts[a];
  for (auto c : counts) CHECK(c > 0);
  CHECK(m.inertia == 0.0);
}

TEST_CASE("k-means determinism and translation invariance") {
  Rng rng(5);
  const auto X = gaussian(120, 2, rng);
  const auto a = kmeans(X, 4, 11);
  const auto b = kmeans(X, 4, 11, 10, 300, 3);
  CHECK(a.assignments == b.assignments);
  CHECK(a.centroids == b.centroids);
  const Eigen::MatrixXd shifted = X.rowwise() + Eigen::RowVectorXd{{4.0, -2.0}};
  CHECK(kmeans(shifted, 4, 11).assignments == a.assignments);
}

TEST_CASE("silhouette") {
  Rng rng(6);
  const auto X = gaussian(60, 2, rng);
  const auto m = kmeans(X, 3, 1);
  for (double s : silhouette_samples(X, m.assignments)) {
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
  // singleton members score 0
  Eigen::MatrixXd Y{{0, 0}, {0, 1}, {10, 10}};
  const auto s = silhouette_samples(Y, {0, 0, 1});
  CHECK(s[2] == 0.0);
  CHECK(s[0] > 0.9);
}

TEST_CASE("diagnostics scan") {
  Rng rng(7);
  const auto X = two_clouds(80, rng);
  const auto r = diagnostics_scan(X, 2, 9, 3);
  CHECK(r.ks.size() == 8);
  CHECK(r.inertia.size() == 8);
  CHECK(r.silhouette.size() == 8);
  CHECK(r.silhouette_best_k == 2);
  CHECK(r.chosen_k == 4);
  for (std::size_t i = 1; i < r.inertia.size(); ++i) CHECK(r.inertia[i] <= r.inertia[i - 1]);

  const auto blob = diagnostics_scan(gaussian(150, 2, rng), 2, 6, 3);
  for (double s : blob.silhouette) CHECK(s < 0.5);
  CHECK_THROWS_AS(diagnostics_scan(X, 1, 4, 1), ClusterError);
  CHECK_THROWS_AS(diagnostics_scan(X, 2, 80, 1), ClusterError);
}

TEST_CASE("biomass statistics per cluster") {
  const auto stats = cluster_biomass_stats({0, 0, 1}, Eigen::VectorXd{{1, 3, 5}}, 2);
  CHECK(*stats[0] == 2.0);
  CHECK(*stats[1] == 5.0);
  const auto single = cluster_biomass_stats({0, 0, 0}, Eigen::VectorXd{{1, 3, 5}}, 1);
  CHECK(*single[0] == 3.0);
  CHECK(!cluster_biomass_stats({0, 0}, Eigen::VectorXd{{1, 3}}, 2)[1].has_value());

  Rng rng(8);
  Eigen::VectorXd y(200);
  std::vector<std::size_t> a(200);
  for (std::size_t i = 0; i < 200; ++i) {
    y[long(i)] = rng.normal();
    a[i] = rng.below(4);
  }
  const auto s = cluster_biomass_stats(a, y, 4);
  double recombined = 0.0;
  for (std::size_t i = 0; i < 200; ++i) recombined += *s[a[i]] / 200.0;
  CHECK(std::abs(recombined - y.mean()) <= 1e-9);
  CHECK_THROWS_AS(cluster_biomass_stats({0}, y, 1), ClusterError);
}

TEST_CASE("cluster mean flux and upregulated reactions") {
  const auto d = tiny_dataset();
  const auto one = cluster_mean_flux(d, {0, 0, 0, 0}, 1, d.reaction_ids);
  CHECK((one - d.X.colwise().mean()).norm() == 0.0);
  const auto two = cluster_mean_flux(d, {0, 0, 1, 1}, 2, {"R1"});
  CHECK(two == Eigen::MatrixXd{{0}, {10}});
  CHECK_THROWS_AS(cluster_mean_flux(d, {0, 0, 1, 1}, 2, {"nope"}), ClusterError);

  // cluster 1 rows: R1 10 vs 5 overall, R2 4 vs 3, R3 equal
  CHECK(top_upregulated(d, {0, 0, 1, 1}, 1) == std::vector<std::string>{"R1", "R2"});
  CHECK(top_upregulated(d, {0, 0, 1, 1}, 1, 1) == std::vector<std::string>{"R1"});
}

TEST_CASE("pathway enrichment") {
  std::vector<Metabolite> mets{{"A", "", "c"}};
  auto rx = [](std::string id, std::optional<std::string> sub) {
    return Reaction{id, "", {{"A", -1}}, 0, 1, id == "R1" ? 1.0 : 0.0, sub};
  };
  const MetabolicModel m(mets, {rx("R1", "P"), rx("R2", "P"), rx("R3", "Q"), rx("R4", "P"), rx("R5", std::nullopt)},
                         "R1");
  using Table = std::vector<std::pair<std::string, std::size_t>>;
  CHECK(pathway_enrichment({"R1", "R2", "R4"}, m) == Table{{"P", 3}});
  CHECK(pathway_enrichment({"R1", "R2", "R3"}, m) == Table{{"P", 2}, {"Q", 1}});
  CHECK(pathway_enrichment({"R5", "R3"}, m) == Table{{"Q", 1}, {"unannotated", 1}});
  CHECK_THROWS_AS(pathway_enrichment({"X"}, m), ClusterError);
}

TEST_CASE("cluster CSV exports") {
  ClusterReport r;
  r.ks = {2, 3};
  r.inertia = {10, 4.5};
  r.silhouette = {0.5, 0.25};
  CHECK(diagnostics_csv(r) == "k,inertia,silhouette\n2,10,0.5\n3,4.5,0.25\n");
  CHECK(assignments_csv({"c0", "c1"}, {1, 0}, Eigen::MatrixXd{{0.5, 1}, {2, 3}}) ==
        "condition_id,cluster,z1,z2\nc0,1,0.5,1\nc1,0,2,3\n");
  CHECK(heatmap_csv(Eigen::MatrixXd{{1.5}}, {"R1"}) == "cluster,R1\n0,1.5\n");
  CHECK(enrichment_csv({{"P", 2}}) == "subsystem,count\nP,2\n");
}
