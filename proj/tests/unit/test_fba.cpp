#include <doctest.h>

#include <cmath>

#include "fluxml/fba.hpp"

using namespace fluxml;

namespace {

ConditionSpec glucose(double lb) {
  ConditionSpec c;
  c.glucose_uptake_lb = lb;
  return c;
}

}  // namespace

TEST_CASE("toy3 biomass follows the uptake bound") {
  const auto model = toy3_model();
  auto r = fba_solve(model, glucose(-10));
  REQUIRE(r.optimal());
  CHECK(std::abs(r.biomass_flux - 10.0) <= 1e-9);
  CHECK(r.biomass_flux == r.fluxes[model.objective_index()]);
  r = fba_solve(model, glucose(-1));
  CHECK(std::abs(r.biomass_flux - 1.0) <= 1e-9);
  CHECK(fba_solve(model, {}).biomass_flux == doctest::Approx(10.0));
}

TEST_CASE("knockouts") {
  const auto model = toy3_model();
  CHECK(fba_solve(knockout(model, "R_AB"), glucose(-10)).biomass_flux == 0.0);
  CHECK(fba_solve(knockout(model, "R_BIO"), glucose(-10)).biomass_flux == 0.0);
  CHECK_THROWS_AS(knockout(model, "nonexistent"), ModelError);
  // input untouched
  CHECK(model.reaction(1).upper_bound == 1000.0);
  CHECK(std::abs(fba_solve(model, glucose(-10)).biomass_flux - 10.0) <= 1e-9);
}

TEST_CASE("overexpression") {
  const auto model = toy3_model();
  const auto over = overexpress(model, "R_AB", 10);
  CHECK(over.reaction(1).upper_bound == 10000.0);
  CHECK(over.reaction(1).lower_bound == 0.0);
  CHECK(fba_solve(over, glucose(-10)).biomass_flux == doctest::Approx(10.0));
  CHECK_THROWS_AS(overexpress(model, "R_AB", 0.5), FbaError);
  CHECK_THROWS_AS(overexpress(model, "R_AB", 1.0), FbaError);
  CHECK_THROWS_AS(overexpress(model, "nope", 2.0), ModelError);
  const auto infinite = model.with_bounds(1, 0, std::numeric_limits<double>::infinity());
  CHECK(std::isinf(overexpress(infinite, "R_AB", 3).reaction(1).upper_bound));

  // a binding capacity is relaxed
  const auto tight = model.with_bounds(1, 0, 2);
  CHECK(fba_solve(tight, glucose(-10)).biomass_flux == doctest::Approx(2.0));
  CHECK(fba_solve(overexpress(tight, "R_AB", 3), glucose(-10)).biomass_flux == doctest::Approx(6.0));
}

TEST_CASE("infeasible conditions are typed outcomes") {
  // force 5 units through R_BIO while uptake is capped at 1
  ConditionSpec c = glucose(-1);
  c.extra_bounds["R_BIO"] = {5, 1000};
  const auto r = fba_solve(toy3_model(), c);
  CHECK(r.status == LpStatus::Infeasible);
  CHECK(std::isnan(r.biomass_flux));
}

TEST_CASE("condition validation") {
  const auto model = toy3_model();
  CHECK_THROWS_AS(fba_solve(model, glucose(1)), FbaError);
  ConditionSpec c;
  c.oxygen_uptake_lb = -5;
  CHECK_THROWS_AS(fba_solve(model, c), FbaError);
  c = {};
  c.extra_bounds["ghost"] = {0, 1};
  CHECK_THROWS_AS(fba_solve(model, c), FbaError);
}

TEST_CASE("oxygen sweep on toy3 via EX_A") {
  const ExchangeMap ex{{"oxygen", "EX_A"}};
  std::vector<double> values;
  for (int v = -10; v <= -2; ++v) values.push_back(v);
  const auto curve = oxygen_sweep(toy3_model(), values, ex);
  REQUIRE(curve.size() == 9);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    CHECK(curve[i].uptake_lb == values[i]);
    REQUIRE(curve[i].biomass_flux.has_value());
    CHECK(std::abs(*curve[i].biomass_flux - (10.0 - double(i))) <= 1e-9);
    if (i > 0) CHECK(*curve[i].biomass_flux <= *curve[i - 1].biomass_flux);
  }
  CHECK(oxygen_sweep(toy3_model(), {}, ex).empty());
  CHECK_THROWS_AS(oxygen_sweep(toy3_model(), values), FbaError);
}

TEST_CASE("parsimonious option keeps the optimum") {
  FbaOptions opt;
  opt.parsimonious = true;
  const auto r = fba_solve(toy3_model(), glucose(-4), {}, opt);
  REQUIRE(r.optimal());
  CHECK(r.biomass_flux == doctest::Approx(4.0).epsilon(1e-8));
  CHECK(r.fluxes[0] == doctest::Approx(-4.0).epsilon(1e-8));
}

TEST_CASE("uniform sweep dataset matches the analytic target") {
  SweepConfig sweep;
  sweep.n_samples = 100;
  sweep.seed = 7;
  sweep.ranges = {{"glucose", {-10, -1}}};
  const auto data = generate_flux_dataset(toy3_model(), sweep);
  REQUIRE(data.rows() == 100);
  REQUIRE(data.cols() == 3);
  REQUIRE(data.condition_log.size() == 100);
  for (std::size_t i = 0; i < 100; ++i) {
    const auto& rec = data.condition_log[i];
    const double lb = *rec.condition.glucose_uptake_lb;
    CHECK(lb >= -10.0);
    CHECK(lb <= -1.0);
    const auto r = Eigen::Index(i);
    CHECK(std::abs(data.y[r] - (-lb)) <= 1e-9);
    CHECK(data.y[r] == data.X(r, 2));
    CHECK(data.condition_ids[i] == rec.condition_id);
  }
}

TEST_CASE("sweep determinism is independent of worker count") {
  SweepConfig sweep;
  sweep.n_samples = 37;
  sweep.seed = 11;
  sweep.ranges = {{"glucose", {-10, -1}}};
  const auto a = generate_flux_dataset(toy3_model(), sweep, {}, {}, 1);
  const auto b = generate_flux_dataset(toy3_model(), sweep, {}, {}, 4);
  CHECK(a.X == b.X);
  CHECK(a.y == b.y);
  CHECK(condition_log_to_json(a.condition_log) == condition_log_to_json(b.condition_log));
  sweep.seed = 12;
  CHECK(generate_flux_dataset(toy3_model(), sweep).y != a.y);
}

TEST_CASE("samplers") {
  SweepConfig sweep;
  sweep.ranges = {{"glucose", {-10, -2}}};

  SUBCASE("single grid point equals a direct solve") {
    sweep.n_samples = 1;
    sweep.sampler = Sampler::Grid;
    const auto data = generate_flux_dataset(toy3_model(), sweep);
    REQUIRE(data.rows() == 1);
    const auto direct = fba_solve(toy3_model(), data.condition_log[0].condition);
    CHECK(*data.condition_log[0].condition.glucose_uptake_lb == -6.0);
    CHECK(data.y[0] == direct.biomass_flux);
    for (Eigen::Index j = 0; j < 3; ++j) CHECK(data.X(0, j) == direct.fluxes[std::size_t(j)]);
  }
  SUBCASE("latin hypercube covers every stratum once") {
    sweep.n_samples = 16;
    sweep.sampler = Sampler::LatinHypercube;
    const auto log = sample_conditions(sweep);
    std::vector<int> hits(16, 0);
    for (const auto& rec : log) {
      const double u = (*rec.condition.glucose_uptake_lb + 10.0) / 8.0;
      hits[std::size_t(std::floor(u * 16))]++;
    }
    for (int h : hits) CHECK(h == 1);
  }
  SUBCASE("invalid ranges") {
    sweep.ranges = {{"glucose", {-1, -10}}};
    CHECK_THROWS(sample_conditions(sweep));
    sweep.ranges = {{"glucose", {-1, 2}}};
    CHECK_THROWS(sample_conditions(sweep));
    sweep.ranges = {{"sucrose", {-1, 0}}};
    CHECK_THROWS(sample_conditions(sweep));
  }
  SUBCASE("unmapped nutrient") {
    sweep.ranges = {{"oxygen", {-10, -1}}};
    CHECK_THROWS_AS(generate_flux_dataset(toy3_model(), sweep), FbaError);
  }
}

TEST_CASE("all-infeasible sweep is an error") {
  SweepConfig sweep;
  sweep.n_samples = 5;
  sweep.ranges = {{"glucose", {-10, -1}}};
  const auto blocked = toy3_model().with_bounds(2, 50, 1000);
  CHECK_THROWS_AS(generate_flux_dataset(blocked, sweep), FbaError);
}

TEST_CASE("infeasible samples are dropped but logged") {
  SweepConfig sweep;
  sweep.n_samples = 40;
  sweep.seed = 3;
  sweep.ranges = {{"glucose", {-10, -1}}};
  // biomass forced >= 5 makes every sample with uptake above -5 infeasible
  const auto forced = toy3_model().with_bounds(2, 5, 1000);
  const auto data = generate_flux_dataset(forced, sweep);
  std::size_t infeasible = 0;
  for (const auto& rec : data.condition_log) {
    const bool ok = *rec.condition.glucose_uptake_lb <= -5.0;
    CHECK((rec.status == LpStatus::Optimal) == ok);
    if (!ok) ++infeasible;
  }
  CHECK(infeasible > 0);
  CHECK(data.rows() + infeasible == 40);
}
