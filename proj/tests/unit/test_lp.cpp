#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "fluxml/lp.hpp"
#include "fluxml/model.hpp"
#include "lp_oracle.hpp"

using namespace fluxml;
using fluxml::testing::DenseLp;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

LpProblem make(std::size_t rows, std::size_t cols, std::vector<SparseStoichMatrix::Entry> entries,
               std::vector<double> c, std::vector<double> lo, std::vector<double> hi, std::vector<double> rhs = {}) {
  LpProblem p;
  p.constraints = SparseStoichMatrix::from_triplets(rows, cols, std::move(entries));
  p.objective = std::move(c);
  p.lower = std::move(lo);
  p.upper = std::move(hi);
  p.rhs = std::move(rhs);
  return p;
}

void check_feasible(const LpProblem& p, const LpSolution& s) {
  CHECK(s.residual <= 1e-6);
  for (std::size_t j = 0; j < s.x.size(); ++j) {
    CHECK(s.x[j] >= p.lower[j] - 1e-9);
    CHECK(s.x[j] <= p.upper[j] + 1e-9);
  }
}

}  // namespace

TEST_CASE("hand-solved LPs") {
  SUBCASE("max x with x - y = 0") {
    const auto p = make(1, 2, {{0, 0, 1}, {0, 1, -1}}, {1, 0}, {0, 0}, {5, 3});
    const auto s = solve_bounded_lp(p);
    REQUIRE(s.status == LpStatus::Optimal);
    CHECK(s.objective_value == doctest::Approx(3.0).epsilon(1e-12));
    check_feasible(p, s);
  }
  SUBCASE("infeasible equality") {
    const auto p = make(1, 1, {{0, 0, 1}}, {1}, {1}, {2});
    CHECK(solve_bounded_lp(p).status == LpStatus::Infeasible);
  }
  SUBCASE("unbounded without equalities") {
    const auto p = make(0, 1, {}, {1}, {0}, {kInf});
    CHECK(solve_bounded_lp(p).status == LpStatus::Unbounded);
  }
  SUBCASE("unbounded through a free variable") {
    // maximize x + y with x - y = 0, both free
    const auto p = make(1, 2, {{0, 0, 1}, {0, 1, -1}}, {1, 1}, {-kInf, -kInf}, {kInf, kInf});
    CHECK(solve_bounded_lp(p).status == LpStatus::Unbounded);
  }
  SUBCASE("free variable pinned by equality") {
    // maximize -x with x - y = 0, x free, y in [2, 4]
    const auto p = make(1, 2, {{0, 0, 1}, {0, 1, -1}}, {-1, 0}, {-kInf, 2}, {kInf, 4});
    const auto s = solve_bounded_lp(p);
    REQUIRE(s.status == LpStatus::Optimal);
    CHECK(s.objective_value == doctest::Approx(-2.0));
  }
}

TEST_CASE("toy3 FBA LP") {
  const auto model = toy3_model();
  LpProblem p{model.objective_vector(), stoichiometric_matrix(model), {}, model.lower_bounds(), model.upper_bounds()};
  const auto s = solve_bounded_lp(p);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(std::abs(s.objective_value - 10.0) <= 1e-9);
  CHECK(s.x[0] == doctest::Approx(-10.0));
  CHECK(s.x[1] == doctest::Approx(10.0));
  CHECK(s.x[2] == doctest::Approx(10.0));
  check_feasible(p, s);
}

TEST_CASE("Beale's cycling example terminates at the optimum") {
  // slack columns 0..2, structural 3..6
  std::vector<SparseStoichMatrix::Entry> e{
      {0, 0, 1},     {1, 1, 1},        {2, 2, 1},    {0, 3, 0.25}, {1, 3, 0.5}, {0, 4, -60},
      {1, 4, -90},   {0, 5, -1.0 / 25}, {1, 5, -1.0 / 50}, {2, 5, 1},    {0, 6, 9},   {1, 6, 3}};
  const auto p = make(3, 7, e, {0, 0, 0, 0.75, -150, 0.02, -6}, std::vector<double>(7, 0.0),
                      std::vector<double>(7, kInf), {0, 0, 1});
  for (std::size_t bland_after : {std::size_t{1}, std::size_t{50}}) {
    ToleranceConfig tol;
    tol.bland_after = bland_after;
    const auto s = solve_bounded_lp(p, tol);
    REQUIRE(s.status == LpStatus::Optimal);
    CHECK(s.objective_value == doctest::Approx(0.05).epsilon(1e-10));
    check_feasible(p, s);
  }
}

TEST_CASE("dimension and bound errors") {
  auto p = make(1, 2, {{0, 0, 1}, {0, 1, -1}}, {1}, {0, 0}, {5, 3});
  CHECK_THROWS_AS(solve_bounded_lp(p), LpError);
  p.objective = {1, 0};
  p.lower = {0, 4};
  try {
    solve_bounded_lp(p);
    FAIL("expected LpError");
  } catch (const LpError& e) {
    CHECK(e.kind() == LpError::Kind::InvalidBounds);
  }
}

TEST_CASE("random LPs agree with vertex enumeration") {
  Rng rng(20240611);
  int feasible = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const DenseLp lp = fluxml::testing::random_small_lp(rng);
    const auto oracle = fluxml::testing::vertex_enumeration_optimum(lp);
    const auto problem = lp.to_problem();
    const auto s = solve_bounded_lp(problem);
    if (!oracle) {
      CHECK(s.status == LpStatus::Infeasible);
      continue;
    }
    ++feasible;
    REQUIRE(s.status == LpStatus::Optimal);
    CHECK(std::abs(s.objective_value - *oracle) <= 1e-8);
    check_feasible(problem, s);
  }
  CHECK(feasible > 150);
}

TEST_CASE("objective invariant under column permutation") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const DenseLp lp = fluxml::testing::random_small_lp(rng);
    const auto n = lp.A.cols();
    std::vector<std::size_t> perm = permutation(std::size_t(n), rng);
    DenseLp q = lp;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto src = Eigen::Index(perm[std::size_t(j)]);
      q.A.col(j) = lp.A.col(src);
      q.c[j] = lp.c[src];
      q.lo[j] = lp.lo[src];
      q.hi[j] = lp.hi[src];
    }
    const auto a = solve_bounded_lp(lp.to_problem());
    const auto b = solve_bounded_lp(q.to_problem());
    REQUIRE(a.status == b.status);
    if (a.status == LpStatus::Optimal) CHECK(std::abs(a.objective_value - b.objective_value) <= 1e-8);
  }
}

TEST_CASE("solves are deterministic") {
  Rng rng(5);
  const auto lp = fluxml::testing::random_small_lp(rng).to_problem();
  const auto a = solve_bounded_lp(lp);
  const auto b = solve_bounded_lp(lp);
  CHECK(a.x == b.x);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("frequent refactorization gives the same optimum") {
  Rng rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const auto lp = fluxml::testing::random_small_lp(rng).to_problem();
    ToleranceConfig eager;
    eager.refactor_every = 1;
    const auto a = solve_bounded_lp(lp);
    const auto b = solve_bounded_lp(lp, eager);
    REQUIRE(a.status == b.status);
    if (a.status == LpStatus::Optimal) CHECK(a.objective_value == doctest::Approx(b.objective_value).epsilon(1e-10));
  }
}
