#include <doctest.h>

#include <algorithm>
#include <set>

#include "fluxml/dataset.hpp"
#include "fluxml/fba.hpp"
#include "fluxml/rng.hpp"

using namespace fluxml;

namespace {

void check_partition(const SplitIndices& s, std::size_t n) {
  std::vector<std::size_t> all;
  for (const auto* part : {&s.train, &s.validation, &s.test}) all.insert(all.end(), part->begin(), part->end());
  std::sort(all.begin(), all.end());
  REQUIRE(all.size() == n);
  for (std::size_t i = 0; i < n; ++i) CHECK(all[i] == i);
}

}  // namespace

TEST_CASE("split sizes and determinism") {
  const auto s = split(20, 1);
  CHECK(s.train.size() == 14);
  CHECK(s.validation.size() == 3);
  CHECK(s.test.size() == 3);
  check_partition(s, 20);

  const auto tiny = split(3, 1);
  CHECK(tiny.train.size() == 1);
  CHECK(tiny.validation.size() == 1);
  CHECK(tiny.test.size() == 1);

  const auto again = split(20, 1);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  CHECK(split(20, 2).train != s.train);

  CHECK_THROWS(split(2, 1));
  CHECK_THROWS(split(10, 1, {0.5, 0.2, 0.2}));

  for (std::size_t n : {7, 50, 101, 2000}) {
    const auto p = split(n, 42);
    check_partition(p, n);
    CHECK(std::abs(double(p.validation.size()) - 0.15 * double(n)) <= 1.0);
    CHECK(std::abs(double(p.train.size()) - 0.70 * double(n)) <= 2.0);
  }
}

TEST_CASE("standardizer") {
  Eigen::MatrixXd X(2, 2);
  X << 5, 0, 5, 2;
  const auto [s, Z] = standardize_fit_apply(X, {0, 1});
  CHECK(s.constant[0]);
  CHECK(!s.constant[1]);
  CHECK(Z(0, 0) == 0.0);
  CHECK(Z(1, 0) == 0.0);
  CHECK(Z(0, 1) == doctest::Approx(-1.0));
  CHECK(Z(1, 1) == doctest::Approx(1.0));

  Eigen::MatrixXd at_mean(1, 2);
  at_mean << 5, 1;
  CHECK(s.apply(at_mean).norm() == 0.0);
}

TEST_CASE("standardized training columns have zero mean and unit spread") {
  Rng rng(3);
  Eigen::MatrixXd X(60, 4);
  for (Eigen::Index i = 0; i < 60; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) X(i, j) = rng.normal() * double(j + 1) + double(j) * 10.0;
  const auto sp = split(60, 9);
  const auto [s, Z] = standardize_fit_apply(X, sp.train);
  const auto Zt = select_rows(Z, sp.train);
  for (Eigen::Index j = 0; j < 4; ++j) {
    const double mean = Zt.col(j).mean();
    const double var = (Zt.col(j).array() - mean).square().mean();
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(std::abs(std::sqrt(var) - 1.0) <= 1e-9);
  }
  // held-out rows generally do not standardize to mean 0: statistics came from training only
  const auto Zv = select_rows(Z, sp.test);
  double drift = 0.0;
  for (Eigen::Index j = 0; j < 4; ++j) drift += std::abs(Zv.col(j).mean());
  CHECK(drift > 1e-6);
}

TEST_CASE("kfold") {
  auto sizes = [](const std::vector<Fold>& folds) {
    std::vector<std::size_t> out;
    for (const auto& f : folds) out.push_back(f.holdout.size());
    return out;
  };
  CHECK(sizes(kfold_indices(10, 5, 1)) == std::vector<std::size_t>{2, 2, 2, 2, 2});
  CHECK(sizes(kfold_indices(7, 5, 1)) == std::vector<std::size_t>{2, 2, 1, 1, 1});
  CHECK_THROWS(kfold_indices(10, 1, 1));
  CHECK_THROWS(kfold_indices(3, 5, 1));

  const auto folds = kfold_indices(23, 4, 8);
  std::set<std::size_t> seen;
  for (const auto& f : folds) {
    CHECK(f.train.size() + f.holdout.size() == 23);
    for (auto i : f.holdout) CHECK(seen.insert(i).second);
    for (auto i : f.train) CHECK(std::find(f.holdout.begin(), f.holdout.end(), i) == f.holdout.end());
  }
  CHECK(seen.size() == 23);
}

TEST_CASE("dataset CSV and condition log") {
  SweepConfig sweep;
  sweep.n_samples = 12;
  sweep.seed = 4;
  sweep.ranges = {{"glucose", {-10, -1}}};
  const auto data = generate_flux_dataset(toy3_model(), sweep);
  const auto csv = dataset_to_csv(data);
  CHECK(csv.rfind("condition_id,EX_A,R_AB,R_BIO,biomass\n", 0) == 0);
  const auto back = dataset_from_csv(csv);
  CHECK(back.reaction_ids == data.reaction_ids);
  CHECK(back.condition_ids == data.condition_ids);
  CHECK((back.X - data.X).cwiseAbs().maxCoeff() <= 1e-8 * 10);
  // CSV rendering is a fixed point after one pass
  CHECK(dataset_to_csv(back) == csv);

  const auto log_json = condition_log_to_json(data.condition_log);
  const auto log = condition_log_from_json(log_json);
  REQUIRE(log.size() == 12);
  CHECK(log[3].condition_id == data.condition_log[3].condition_id);
  CHECK(log[3].condition == data.condition_log[3].condition);
  CHECK(condition_log_to_json(log) == log_json);

  CHECK_THROWS(dataset_from_csv("a,b\n1,2\n"));
  CHECK_THROWS(dataset_from_csv("condition_id,R,biomass\nc0,1\n"));
}

TEST_CASE("column and row selection") {
  Eigen::MatrixXd X(3, 4);
  X << 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11;
  const auto D = drop_columns(X, {3, 1});
  REQUIRE(D.cols() == 2);
  CHECK(D(1, 0) == 4);
  CHECK(D(1, 1) == 6);
  CHECK(select_rows(X, {2, 0})(0, 3) == 11);
  CHECK_THROWS(drop_columns(X, {4}));
}
