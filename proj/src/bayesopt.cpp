#include "fluxml/bayesopt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>

#include "fluxml/io.hpp"
#include "fluxml/rng.hpp"

namespace fluxml {

namespace {

constexpr double kLengthLo = 0.05;
constexpr double kLengthHi = 2.0;
constexpr int kLengthCount = 8;
constexpr double kNoiseRatios[] = {1e-8, 1e-4, 1e-2};

std::vector<double> length_grid() {
  std::vector<double> g(kLengthCount);
  const double a = std::log(kLengthLo), b = std::log(kLengthHi);
  for (int i = 0; i < kLengthCount; ++i) g[i] = std::exp(a + (b - a) * i / (kLengthCount - 1));
  return g;
}

// exp(-0.5 * sum_d D_d / l_d^2)
Eigen::MatrixXd correlation(const std::vector<Eigen::MatrixXd>& sq, const std::vector<double>& ls) {
  Eigen::MatrixXd E = Eigen::MatrixXd::Zero(sq[0].rows(), sq[0].cols());
  for (std::size_t d = 0; d < sq.size(); ++d) E += sq[d] / (ls[d] * ls[d]);
  return (-0.5 * E).array().exp().matrix();
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

std::string point_string(const Eigen::VectorXd& x) {
  std::string s = "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) s += (i ? ", " : "") + format_real(x[i]);
  return s + ")";
}

}  // namespace

void SearchBox::validate() const {
  if (bounds.empty()) throw BayesOptError("search box has no dimensions");
  if (!names.empty() && names.size() != bounds.size()) throw BayesOptError("search box names do not match bounds");
  for (const auto& [lo, hi] : bounds)
    if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) throw BayesOptError("search box needs finite lo <= hi");
}

Eigen::VectorXd SearchBox::to_unit(const Eigen::VectorXd& x) const {
  Eigen::VectorXd u(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const auto [lo, hi] = bounds[std::size_t(i)];
    u[i] = hi > lo ? (x[i] - lo) / (hi - lo) : 0.0;
  }
  return u;
}

Eigen::VectorXd SearchBox::from_unit(const Eigen::VectorXd& u) const {
  Eigen::VectorXd x(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const auto [lo, hi] = bounds[std::size_t(i)];
    x[i] = u[i] >= 1.0 ? hi : lo + u[i] * (hi - lo);
  }
  return x;
}

GpPrediction GpSurrogate::predict(const Eigen::VectorXd& x) const {
  if (x.size() != U_.cols()) throw BayesOptError("prediction input has wrong dimension");
  Eigen::VectorXd u = box_.to_unit(x);
  bool clamped = false;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double c = std::clamp(u[i], 0.0, 1.0);
    if (c != u[i]) clamped = true;
    u[i] = c;
  }
  auto p = predict_unit(u);
  p.clamped = p.clamped || clamped;
  return p;
}

GpPrediction GpSurrogate::predict_unit(const Eigen::VectorXd& u) const {
  const Eigen::Index n = U_.rows();
  Eigen::VectorXd k(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double e = 0.0;
    for (Eigen::Index d = 0; d < U_.cols(); ++d) {
      const double t = (U_(i, d) - u[d]) / hyper_.length_scales[std::size_t(d)];
      e += t * t;
    }
    k[i] = hyper_.signal_variance * std::exp(-0.5 * e);
  }
  GpPrediction p;
  p.mean = y_mean_ + y_scale_ * k.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(k);
  p.variance = std::max(0.0, hyper_.signal_variance - v.squaredNorm()) * y_scale_ * y_scale_;
  return p;
}

GpSurrogate gp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const SearchBox& box,
                   const GpFitOptions& options) {
  box.validate();
  const Eigen::Index n = X.rows(), dim = X.cols();
  if (std::size_t(dim) != box.dim()) throw BayesOptError("training inputs do not match the box dimension");
  if (y.size() != n) throw BayesOptError("training inputs and targets differ in length");
  if (!X.allFinite() || !y.allFinite()) throw BayesOptError("training data must be finite");
  bool distinct = false;
  for (Eigen::Index i = 1; i < n && !distinct; ++i) distinct = X.row(i) != X.row(0);
  if (!distinct) throw BayesOptError("GP fit needs at least 2 distinct points");

  GpSurrogate gp;
  gp.box_ = box;
  gp.U_.resize(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) gp.U_.row(i) = box.to_unit(X.row(i).transpose()).transpose();

  gp.y_mean_ = y.mean();
  const double sd = std::sqrt((y.array() - gp.y_mean_).square().mean());
  gp.y_scale_ = sd > 1e-12 * std::max(1.0, std::abs(gp.y_mean_)) ? sd : 1.0;
  const Eigen::VectorXd z = (y.array() - gp.y_mean_) / gp.y_scale_;

  std::vector<Eigen::MatrixXd> sq(std::size_t(dim), Eigen::MatrixXd(n, n));
  for (Eigen::Index d = 0; d < dim; ++d)
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        const double t = gp.U_(i, d) - gp.U_(j, d);
        sq[std::size_t(d)](i, j) = t * t;
      }
  const double log2pi = std::log(2.0 * std::numbers::pi);

  if (options.fixed) {
    const auto& h = *options.fixed;
    if (h.length_scales.size() != std::size_t(dim)) throw BayesOptError("fixed length scales do not match dimension");
    for (double l : h.length_scales)
      if (!(l > 0.0)) throw BayesOptError("length scales must be positive");
    if (!(h.signal_variance > 0.0) || h.noise_variance < 0.0) throw BayesOptError("invalid fixed GP variances");
    Eigen::MatrixXd K = h.signal_variance * correlation(sq, h.length_scales);
    K.diagonal().array() += h.noise_variance;
    gp.llt_.compute(K);
    if (gp.llt_.info() != Eigen::Success) throw BayesOptError("kernel matrix is not positive definite");
    gp.hyper_ = h;
    gp.alpha_ = gp.llt_.solve(z);
    gp.lml_ = -0.5 * z.dot(gp.alpha_) - 0.5 * log_det(gp.llt_) - 0.5 * double(n) * log2pi;
    return gp;
  }

  // Odometer over the per-dimension grid, noise ratio innermost.
  const auto grid = length_grid();
  std::vector<int> idx(std::size_t(dim), 0);
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> ls(static_cast<std::size_t>(dim));
  for (;;) {
    for (Eigen::Index d = 0; d < dim; ++d) ls[std::size_t(d)] = grid[std::size_t(idx[std::size_t(d)])];
    const Eigen::MatrixXd C = correlation(sq, ls);
    for (double ratio : kNoiseRatios) {
      Eigen::MatrixXd M = C;
      M.diagonal().array() += ratio;
      Eigen::LLT<Eigen::MatrixXd> llt(M);
      if (llt.info() != Eigen::Success) continue;
      const double q = z.dot(llt.solve(z));
      const double sf2 = std::max(q / double(n), 1e-12);
      // profile likelihood with sigma_f^2 at its maximizer
      const double lml = -0.5 * q / sf2 - 0.5 * (double(n) * std::log(sf2) + log_det(llt)) - 0.5 * double(n) * log2pi;
      if (lml > best) {
        best = lml;
        gp.hyper_ = GpHyper{ls, sf2, ratio * sf2};
      }
    }
    Eigen::Index d = 0;
    while (d < dim && ++idx[std::size_t(d)] == kLengthCount) idx[std::size_t(d++)] = 0;
    if (d == dim) break;
  }
  if (!std::isfinite(best)) throw BayesOptError("no grid hyperparameters gave a positive definite kernel");

  Eigen::MatrixXd K = gp.hyper_.signal_variance * correlation(sq, gp.hyper_.length_scales);
  K.diagonal().array() += gp.hyper_.noise_variance;
  gp.llt_.compute(K);
  if (gp.llt_.info() != Eigen::Success) throw BayesOptError("kernel matrix is not positive definite");
  gp.alpha_ = gp.llt_.solve(z);
  gp.lml_ = best;
  return gp;
}

double expected_improvement(double mu, double sigma, double f_best, double xi) {
  const double gain = mu - f_best - xi;
  if (!(sigma > 0.0)) return std::max(gain, 0.0);
  const double z = gain / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(0.0, gain * cdf + sigma * pdf);
}

Eigen::MatrixXd scrambled_halton(std::size_t n, std::size_t dim, std::uint64_t seed) {
  static constexpr int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  if (dim > std::size(primes)) throw BayesOptError("Halton design supports at most 16 dimensions");
  Rng rng(seed);
  Eigen::MatrixXd H(static_cast<long>(n), static_cast<long>(dim));
  for (std::size_t d = 0; d < dim; ++d) {
    const double shift = rng.uniform();
    for (std::size_t i = 0; i < n; ++i) {
      double f = 1.0, r = 0.0;
      for (std::size_t k = i; k > 0; k /= std::size_t(primes[d])) {
        f /= primes[d];
        r += f * double(k % std::size_t(primes[d]));
      }
      const double v = r + shift;
      H(long(i), long(d)) = v >= 1.0 ? v - 1.0 : v;
    }
  }
  return H;
}

std::optional<double> OptimizationTrace::best_value() const {
  if (points.empty()) return std::nullopt;
  return points[best_index].value;
}

namespace {

double ei_at(const GpSurrogate& gp, const Eigen::VectorXd& u, double f_best, double xi) {
  const auto p = gp.predict_unit(u);
  return expected_improvement(p.mean, std::sqrt(p.variance), f_best, xi);
}

// Best of `restarts` uniform starts, each refined by coordinate descent with
// halving steps. Returns (u, EI).
std::pair<Eigen::VectorXd, double> maximize_ei(const GpSurrogate& gp, std::size_t dim, double f_best, double xi,
                                               std::size_t restarts, Rng& rng) {
  Eigen::VectorXd best_u;
  double best_ei = -1.0;
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    Eigen::VectorXd u(static_cast<long>(dim));
    for (std::size_t d = 0; d < dim; ++d) u[long(d)] = rng.uniform();
    double cur = ei_at(gp, u, f_best, xi);
    for (double h = 0.25; h >= 1e-6; h *= 0.5) {
      bool moved = true;
      while (moved) {
        moved = false;
        for (std::size_t d = 0; d < dim; ++d)
          for (double dir : {-1.0, 1.0}) {
            Eigen::VectorXd c = u;
            c[long(d)] = std::clamp(u[long(d)] + dir * h, 0.0, 1.0);
            if (c[long(d)] == u[long(d)]) continue;
            const double e = ei_at(gp, c, f_best, xi);
            if (e > cur) {
              cur = e;
              u = c;
              moved = true;
            }
          }
      }
    }
    if (cur > best_ei) {
      best_ei = cur;
      best_u = u;
    }
  }
  return {best_u, best_ei};
}

}  // namespace

OptimizationTrace optimize(const Evaluator& evaluator, const SearchBox& box, const OptimizeConfig& config) {
  box.validate();
  if (config.n_init < 2) throw BayesOptError("optimize needs n_init >= 2");
  const std::size_t dim = box.dim();
  // The surrogate lives in unit coordinates, so proposals do not depend on the box scale.
  SearchBox unit{box.names, std::vector<std::pair<double, double>>(dim, {0.0, 1.0})};
  OptimizationTrace trace;
  double incumbent = -std::numeric_limits<double>::infinity();

  auto evaluate = [&](const Eigen::VectorXd& u, double acquisition, bool initial) {
    TracePoint p;
    p.unit = u;
    p.x = box.from_unit(u);
    p.initial = initial;
    p.acquisition = acquisition;
    const std::size_t index = trace.points.size();
    try {
      p.value = evaluator(p.x);
    } catch (const std::exception& e) {
      throw BayesOptError("evaluator failed at point " + std::to_string(index) + " " + point_string(p.x) + ": " +
                          e.what());
    }
    if (p.value && !std::isfinite(*p.value))
      throw BayesOptError("evaluator returned a non-finite value at point " + std::to_string(index) + " " +
                          point_string(p.x));
    if (p.value && *p.value > incumbent) {
      incumbent = *p.value;
      trace.best_index = index;
    }
    p.incumbent = incumbent;
    trace.points.push_back(std::move(p));
  };

  // Scores with infeasible points at (min feasible - 1).
  auto scores = [&]() {
    double lowest = std::numeric_limits<double>::infinity();
    for (const auto& p : trace.points)
      if (p.value) lowest = std::min(lowest, *p.value);
    const double penalty = std::isfinite(lowest) ? lowest - 1.0 : -1.0;
    Eigen::VectorXd s(long(trace.points.size()));
    for (std::size_t i = 0; i < trace.points.size(); ++i) {
      trace.points[i].score = trace.points[i].value.value_or(penalty);
      s[long(i)] = trace.points[i].score;
    }
    return s;
  };

  const Eigen::MatrixXd H = scrambled_halton(config.n_init, dim, derive_seed(config.seed, 0));
  for (std::size_t i = 0; i < config.n_init; ++i)
    evaluate(H.row(long(i)).transpose(), std::numeric_limits<double>::quiet_NaN(), true);

  for (std::size_t it = 0; it < config.n_iter; ++it) {
    const Eigen::VectorXd y = scores();
    Eigen::MatrixXd U(long(trace.points.size()), long(dim));
    for (std::size_t i = 0; i < trace.points.size(); ++i) U.row(long(i)) = trace.points[i].unit.transpose();
    const GpSurrogate gp = gp_fit(U, y, unit, config.gp);
    Rng rng(derive_seed(config.seed, it + 1));
    const auto [u, ei] = maximize_ei(gp, dim, y.maxCoeff(), config.xi, config.restarts, rng);
    evaluate(u, ei, false);
  }
  scores();
  return trace;
}

Evaluator fba_evaluator(const MetabolicModel& model, const SearchBox& box, const ExchangeMap& exchanges,
                        const FbaOptions& options) {
  box.validate();
  if (box.names.size() != box.dim()) throw BayesOptError("nutrient box needs a name per dimension");
  auto problem = std::make_shared<FbaProblem>(model, resolve_exchanges(model, exchanges), options);
  for (std::size_t d = 0; d < box.dim(); ++d) {
    const auto& name = box.names[d];
    if (name != kGlucose && name != kOxygen && name != kAmmonium)
      throw BayesOptError("unknown nutrient '" + name + "' in search box");
    if (!problem->exchange_index(name)) throw BayesOptError("no exchange reaction mapped for '" + name + "'");
    if (box.bounds[d].second > 0.0) throw BayesOptError("uptake bounds must satisfy lo <= hi <= 0");
  }
  return [problem, names = box.names](const Eigen::VectorXd& x) -> std::optional<double> {
    ConditionSpec c;
    for (std::size_t d = 0; d < names.size(); ++d) {
      const double v = x[long(d)];
      if (names[d] == kGlucose) c.glucose_uptake_lb = v;
      else if (names[d] == kOxygen) c.oxygen_uptake_lb = v;
      else c.ammonium_uptake_lb = v;
    }
    const auto r = problem->solve(c);
    if (r.status == LpStatus::Infeasible) return std::nullopt;
    if (r.status != LpStatus::Optimal) throw FbaError(std::string("FBA ") + to_string(r.status));
    return r.biomass_flux;
  };
}

SearchBox default_nutrient_box() {
  const auto ranges = SweepConfig::default_ranges();
  SearchBox box;
  for (const char* n : {kGlucose, kAmmonium, kOxygen}) {
    box.names.emplace_back(n);
    box.bounds.push_back(ranges.at(n));
  }
  return box;
}

std::string trace_csv(const OptimizationTrace& trace, const SearchBox& box) {
  std::ostringstream out;
  out << "iteration";
  for (std::size_t d = 0; d < box.dim(); ++d) out << ',' << (d < box.names.size() ? box.names[d] : "x" + std::to_string(d));
  out << ",biomass,incumbent,acquisition\n";
  for (std::size_t i = 0; i < trace.points.size(); ++i) {
    const auto& p = trace.points[i];
    out << i;
    for (Eigen::Index d = 0; d < p.x.size(); ++d) out << ',' << format_real(p.x[d]);
    out << ',' << (p.value ? format_real(*p.value) : std::string("infeasible"));
    out << ',' << (std::isfinite(p.incumbent) ? format_real(p.incumbent) : std::string(""));
    out << ',' << (std::isnan(p.acquisition) ? std::string("") : format_real(p.acquisition)) << '\n';
  }
  return out.str();
}

}  // namespace fluxml
