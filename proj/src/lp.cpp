#include "fluxml/lp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <Eigen/SparseLU>

namespace fluxml {

const char* to_string(LpStatus status) noexcept {
  switch (status) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
  }
  return "unknown";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Vec = Eigen::VectorXd;

/// LU of a refactorized basis plus a product-form eta file for the pivots
/// since then.
class BasisFactor {
 public:
  explicit BasisFactor(std::size_t m) : m_(m) {}

  bool refactor(const SpMat& basis) {
    etas_.clear();
    if (m_ == 0) return true;
    lu_.analyzePattern(basis);
    lu_.factorize(basis);
    return lu_.info() == Eigen::Success;
  }

  /// B^{-1} a
  Vec ftran(const Vec& a) const {
    if (m_ == 0) return a;
    Vec w = lu_.solve(a);
    for (const auto& eta : etas_) {
      const double wr = w[eta.row] / eta.pivot;
      if (wr != 0.0)
        for (const auto& [i, v] : eta.entries) w[i] -= v * wr;
      w[eta.row] = wr;
    }
    return w;
  }

  /// B^{-T} c
  Vec btran(Vec c) const {
    if (m_ == 0) return c;
    for (auto it = etas_.rbegin(); it != etas_.rend(); ++it) {
      double acc = c[it->row];
      for (const auto& [i, v] : it->entries) acc -= c[i] * v;
      c[it->row] = acc / it->pivot;
    }
    return lu_.transpose().solve(c);
  }

  /// Records the basis change at position `row` whose entering column is
  /// `alpha` = B^{-1} a_q.
  void push_eta(std::size_t row, const Vec& alpha) {
    Eta eta{row, alpha[static_cast<Eigen::Index>(row)], {}};
    for (Eigen::Index i = 0; i < alpha.size(); ++i)
      if (static_cast<std::size_t>(i) != row && alpha[i] != 0.0)
        eta.entries.emplace_back(static_cast<std::size_t>(i), alpha[i]);
    etas_.push_back(std::move(eta));
  }

 private:
  struct Eta {
    std::size_t row;
    double pivot;
    std::vector<std::pair<std::size_t, double>> entries;
  };

  std::size_t m_;
  // transpose() is non-const in Eigen 3.4
  mutable Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu_;
  std::vector<Eta> etas_;
};

enum class VarState : unsigned char { Basic, AtLower, AtUpper, FreeZero };

class BoundedSimplex {
 public:
  BoundedSimplex(const LpProblem& p, const ToleranceConfig& tol)
      : p_(p),
        tol_(tol),
        m_(p.constraints.rows),
        n_(p.constraints.cols),
        total_(m_ + n_),
        factor_(m_) {
    max_iterations_ = tol.max_iterations ? tol.max_iterations : 20 * total_ + 1000;
    rhs_.assign(m_, 0.0);
    if (!p.rhs.empty()) rhs_ = p.rhs;
  }

  LpSolution run() {
    start_phase_one();
    LpSolution out;
    if (optimize(phase_one_cost_) == Outcome::Unbounded)
      throw LpError(LpError::Kind::NumericalBreakdown, "phase 1 reported an unbounded ray");

    double infeasibility = 0.0;
    for (std::size_t i = 0; i < m_; ++i) infeasibility += x_[n_ + i];
    if (infeasibility > tol_.feasibility) {
      out.status = LpStatus::Infeasible;
      out.iterations = iterations_;
      out.x.assign(x_.begin(), x_.begin() + static_cast<std::ptrdiff_t>(n_));
      out.residual = residual(out.x);
      return out;
    }

    // Artificials stay in the problem, pinned at zero.
    for (std::size_t i = 0; i < m_; ++i) {
      hi_[n_ + i] = 0.0;
      if (state_[n_ + i] != VarState::Basic) x_[n_ + i] = 0.0;
    }
    std::vector<double> cost(total_, 0.0);
    std::copy(p_.objective.begin(), p_.objective.end(), cost.begin());

    const Outcome outcome = optimize(cost);
    out.iterations = iterations_;
    if (outcome == Outcome::Unbounded) {
      out.status = LpStatus::Unbounded;
      out.objective_value = kInf;
      out.x.assign(x_.begin(), x_.begin() + static_cast<std::ptrdiff_t>(n_));
      out.residual = residual(out.x);
      return out;
    }

    refactor();
    for (std::size_t j = 0; j < n_; ++j)
      if (state_[j] == VarState::Basic) x_[j] = std::clamp(x_[j], lo_[j], hi_[j]);

    out.status = LpStatus::Optimal;
    out.x.assign(x_.begin(), x_.begin() + static_cast<std::ptrdiff_t>(n_));
    out.objective_value = 0.0;
    for (std::size_t j = 0; j < n_; ++j) out.objective_value += p_.objective[j] * out.x[j];
    out.residual = residual(out.x);
    return out;
  }

 private:
  enum class Outcome { Optimal, Unbounded };

  template <typename F>
  void for_column(std::size_t j, F&& f) const {
    if (j < n_) {
      const auto& s = p_.constraints;
      for (std::size_t k = s.col_start[j]; k < s.col_start[j + 1]; ++k) f(s.entries[k].row, s.entries[k].value);
    } else {
      f(j - n_, art_sign_[j - n_]);
    }
  }

  void start_phase_one() {
    lo_.assign(total_, 0.0);
    hi_.assign(total_, kInf);
    x_.assign(total_, 0.0);
    state_.assign(total_, VarState::AtLower);
    for (std::size_t j = 0; j < n_; ++j) {
      lo_[j] = p_.lower[j];
      hi_[j] = p_.upper[j];
      if (std::isfinite(lo_[j])) {
        x_[j] = lo_[j];
        state_[j] = VarState::AtLower;
      } else if (std::isfinite(hi_[j])) {
        x_[j] = hi_[j];
        state_[j] = VarState::AtUpper;
      } else {
        x_[j] = 0.0;
        state_[j] = VarState::FreeZero;
      }
    }
    std::vector<double> r = rhs_;
    for (std::size_t j = 0; j < n_; ++j)
      if (x_[j] != 0.0) for_column(j, [&](std::size_t i, double v) { r[i] -= v * x_[j]; });

    art_sign_.assign(m_, 1.0);
    head_.resize(m_);
    for (std::size_t i = 0; i < m_; ++i) {
      art_sign_[i] = r[i] >= 0.0 ? 1.0 : -1.0;
      x_[n_ + i] = std::abs(r[i]);
      state_[n_ + i] = VarState::Basic;
      head_[i] = n_ + i;
    }
    phase_one_cost_.assign(total_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) phase_one_cost_[n_ + i] = -1.0;
    refactor();
  }

  void refactor() {
    std::vector<Eigen::Triplet<double, int>> triplets;
    for (std::size_t i = 0; i < m_; ++i)
      for_column(head_[i], [&](std::size_t row, double v) {
        triplets.emplace_back(static_cast<int>(row), static_cast<int>(i), v);
      });
    SpMat basis(static_cast<int>(m_), static_cast<int>(m_));
    basis.setFromTriplets(triplets.begin(), triplets.end());
    basis.makeCompressed();
    if (!factor_.refactor(basis))
      throw LpError(LpError::Kind::NumericalBreakdown, "basis matrix is singular at refactorization");
    since_refactor_ = 0;

    Vec r(static_cast<Eigen::Index>(m_));
    for (std::size_t i = 0; i < m_; ++i) r[static_cast<Eigen::Index>(i)] = rhs_[i];
    for (std::size_t j = 0; j < total_; ++j)
      if (state_[j] != VarState::Basic && x_[j] != 0.0)
        for_column(j, [&](std::size_t i, double v) { r[static_cast<Eigen::Index>(i)] -= v * x_[j]; });
    const Vec xb = factor_.ftran(r);
    for (std::size_t i = 0; i < m_; ++i) x_[head_[i]] = xb[static_cast<Eigen::Index>(i)];
  }

  Outcome optimize(const std::vector<double>& cost) {
    std::size_t degenerate_run = 0;
    bool bland = false;
    bool fresh = true;
    Vec cb(static_cast<Eigen::Index>(m_));
    Vec a(static_cast<Eigen::Index>(m_));

    while (true) {
      if (since_refactor_ >= tol_.refactor_every) {
        refactor();
        fresh = true;
      }
      for (std::size_t i = 0; i < m_; ++i) cb[static_cast<Eigen::Index>(i)] = cost[head_[i]];
      const Vec y = factor_.btran(cb);

      std::size_t enter = total_;
      int dir = 0;
      double best_score = 0.0;
      for (std::size_t j = 0; j < total_; ++j) {
        if (state_[j] == VarState::Basic || lo_[j] == hi_[j]) continue;
        double d = cost[j];
        for_column(j, [&](std::size_t i, double v) { d -= y[static_cast<Eigen::Index>(i)] * v; });
        const bool up = d > tol_.optimality && state_[j] != VarState::AtUpper;
        const bool down = d < -tol_.optimality && state_[j] != VarState::AtLower;
        if (!up && !down) continue;
        if (bland) {
          enter = j;
          dir = up ? 1 : -1;
          break;
        }
        if (std::abs(d) > best_score) {
          best_score = std::abs(d);
          enter = j;
          dir = up ? 1 : -1;
        }
      }
      if (enter == total_) return Outcome::Optimal;

      a.setZero();
      for_column(enter, [&](std::size_t i, double v) { a[static_cast<Eigen::Index>(i)] = v; });
      const Vec alpha = factor_.ftran(a);

      const double flip = dir > 0 ? hi_[enter] - x_[enter] : x_[enter] - lo_[enter];
      double step = kInf;
      std::size_t leave = m_;
      double leave_target = 0.0;
      bool small_blocker = false;
      for (std::size_t i = 0; i < m_; ++i) {
        const double ai = alpha[static_cast<Eigen::Index>(i)];
        const std::size_t b = head_[i];
        const double delta = -dir * ai;
        const bool bounded = delta < 0 ? std::isfinite(lo_[b]) : std::isfinite(hi_[b]);
        if (std::abs(ai) <= tol_.pivot) {
          if (ai != 0.0 && bounded) small_blocker = true;
          continue;
        }
        if (!bounded) continue;
        const double target = delta < 0 ? lo_[b] : hi_[b];
        const double ratio = std::max(0.0, (target - x_[b]) / delta);
        const double tie = 1e-12 * std::max(1.0, step == kInf ? ratio : step);
        if (leave == m_ || ratio < step - tie) {
          step = ratio;
          leave = i;
          leave_target = target;
        } else if (ratio <= step + tie) {
          const bool prefer = bland ? b < head_[leave]
                                    : std::abs(ai) > std::abs(alpha[static_cast<Eigen::Index>(leave)]);
          if (prefer) {
            step = std::min(step, ratio);
            leave = i;
            leave_target = target;
          }
        }
      }

      if (leave == m_ && !std::isfinite(flip)) {
        if (small_blocker) {
          if (!fresh) {
            refactor();
            fresh = true;
            continue;
          }
          if (bland)
            throw LpError(LpError::Kind::NumericalBreakdown,
                          "only sub-tolerance pivots remain after anti-cycling engaged");
        }
        return Outcome::Unbounded;
      }

      if (++iterations_ > max_iterations_)
        throw LpError(LpError::Kind::NumericalBreakdown, "simplex iteration limit reached");

      if (leave == m_ || flip <= step) {
        x_[enter] += dir * flip;
        for (std::size_t i = 0; i < m_; ++i) x_[head_[i]] -= dir * flip * alpha[static_cast<Eigen::Index>(i)];
        state_[enter] = dir > 0 ? VarState::AtUpper : VarState::AtLower;
        x_[enter] = dir > 0 ? hi_[enter] : lo_[enter];
        degenerate_run = 0;
        bland = false;
        fresh = false;
        continue;
      }

      for (std::size_t i = 0; i < m_; ++i) x_[head_[i]] -= dir * step * alpha[static_cast<Eigen::Index>(i)];
      x_[enter] += dir * step;
      const std::size_t out_var = head_[leave];
      x_[out_var] = leave_target;
      state_[out_var] = leave_target == lo_[out_var] ? VarState::AtLower : VarState::AtUpper;
      state_[enter] = VarState::Basic;
      head_[leave] = enter;
      factor_.push_eta(leave, alpha);
      ++since_refactor_;
      fresh = false;

      if (step <= 1e-12) {
        if (++degenerate_run >= tol_.bland_after) bland = true;
      } else {
        degenerate_run = 0;
        bland = false;
      }
    }
  }

  double residual(const std::vector<double>& x) const {
    std::vector<double> r = rhs_;
    for (const auto& e : p_.constraints.entries) r[e.row] -= e.value * x[e.col];
    double worst = 0.0;
    for (double v : r) worst = std::max(worst, std::abs(v));
    return worst;
  }

  const LpProblem& p_;
  ToleranceConfig tol_;
  std::size_t m_;
  std::size_t n_;
  std::size_t total_;
  std::size_t max_iterations_ = 0;
  std::size_t iterations_ = 0;
  std::size_t since_refactor_ = 0;
  BasisFactor factor_;
  std::vector<double> rhs_;
  std::vector<double> lo_, hi_, x_;
  std::vector<VarState> state_;
  std::vector<double> art_sign_;
  std::vector<std::size_t> head_;
  std::vector<double> phase_one_cost_;
};

void validate(const LpProblem& p) {
  const std::size_t n = p.constraints.cols;
  const std::size_t m = p.constraints.rows;
  if (p.objective.size() != n || p.lower.size() != n || p.upper.size() != n)
    throw LpError(LpError::Kind::DimensionMismatch, "objective/bound length does not match column count");
  if (!p.rhs.empty() && p.rhs.size() != m)
    throw LpError(LpError::Kind::DimensionMismatch, "rhs length does not match row count");
  if (p.constraints.col_start.size() != n + 1)
    throw LpError(LpError::Kind::DimensionMismatch, "constraint matrix is not column-compressed");
  for (std::size_t j = 0; j < n; ++j) {
    const double lo = p.lower[j], hi = p.upper[j];
    if (std::isnan(lo) || std::isnan(hi) || lo > hi || lo == kInf || hi == -kInf)
      throw LpError(LpError::Kind::InvalidBounds, "invalid bounds on column " + std::to_string(j));
    if (!std::isfinite(p.objective[j]))
      throw LpError(LpError::Kind::InvalidBounds, "non-finite objective on column " + std::to_string(j));
  }
}

}  // namespace

LpSolution solve_bounded_lp(const LpProblem& problem, const ToleranceConfig& tol) {
  validate(problem);
  BoundedSimplex simplex(problem, tol);
  return simplex.run();
}

}  // namespace fluxml
