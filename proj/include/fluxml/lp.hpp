#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fluxml/model.hpp"

namespace fluxml {

struct ToleranceConfig {
  double pivot = 1e-9;
  double feasibility = 1e-6;
  double optimality = 1e-9;
  /// Consecutive degenerate pivots before switching to Bland's rule.
  std::size_t bland_after = 50;
  std::size_t refactor_every = 100;
  /// 0 selects 20 * (rows + cols) + 1000.
  std::size_t max_iterations = 0;
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

const char* to_string(LpStatus status) noexcept;

/// maximize c.x  subject to  A x = rhs,  lb <= x <= ub.
/// An empty rhs means zero (the flux-balance case S v = 0). Bounds may be
/// infinite.
struct LpProblem {
  std::vector<double> objective;
  SparseStoichMatrix constraints;
  std::vector<double> rhs;
  std::vector<double> lower;
  std::vector<double> upper;
};

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  double objective_value = 0.0;
  std::vector<double> x;
  std::size_t iterations = 0;
  /// max |A x - rhs| at the returned point.
  double residual = 0.0;
};

class LpError : public std::runtime_error {
 public:
  enum class Kind { DimensionMismatch, InvalidBounds, NumericalBreakdown };
  LpError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Bounded-variable revised simplex, phase-1 artificial start.
///
/// Nonbasic variables sit at a finite bound (free ones at zero), so
/// two-sided flux bounds need no slack columns. Pricing is Dantzig's rule
/// until `bland_after` consecutive degenerate pivots, then Bland's rule
/// until the objective moves again. Pivoting is deterministic: for a given
/// problem the same vertex comes back every time, though FBA optima are in
/// general not unique.
///
/// Throws LpError on dimension mismatch, lb > ub, or numerical breakdown
/// (singular refactorization, or only sub-tolerance pivots left while in
/// Bland mode).
LpSolution solve_bounded_lp(const LpProblem& problem, const ToleranceConfig& tol = {});

}  // namespace fluxml
