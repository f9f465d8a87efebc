#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fluxml/condition.hpp"
#include "fluxml/fba.hpp"

namespace fluxml {

class BayesOptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Axis-aligned box; names label the dimensions in traces.
struct SearchBox {
  std::vector<std::string> names;
  std::vector<std::pair<double, double>> bounds;

  std::size_t dim() const { return bounds.size(); }
  void validate() const;
  Eigen::VectorXd to_unit(const Eigen::VectorXd& x) const;
  Eigen::VectorXd from_unit(const Eigen::VectorXd& u) const;
};

/// Hyperparameters in the fitted space: inputs scaled to the unit box and
/// targets normalized to zero mean and unit spread.
struct GpHyper {
  std::vector<double> length_scales;
  double signal_variance = 1.0;
  double noise_variance = 0.0;
};

struct GpFitOptions {
  /// Skips the likelihood search.
  std::optional<GpHyper> fixed;
};

struct GpPrediction {
  double mean = 0.0;
  /// Latent (noise-free) posterior variance, clipped at 0.
  double variance = 0.0;
  bool clamped = false;
};

/// Squared-exponential GP with per-dimension length scales.
class GpSurrogate {
 public:
  GpPrediction predict(const Eigen::VectorXd& x) const;
  /// Same, with x already in unit-box coordinates.
  GpPrediction predict_unit(const Eigen::VectorXd& u) const;
  const GpHyper& hyper() const { return hyper_; }
  double log_marginal_likelihood() const { return lml_; }
  double prior_mean() const { return y_mean_; }
  /// Signal variance in target units.
  double signal_variance() const { return hyper_.signal_variance * y_scale_ * y_scale_; }
  double noise_variance() const { return hyper_.noise_variance * y_scale_ * y_scale_; }
  std::size_t size() const { return static_cast<std::size_t>(U_.rows()); }

 private:
  friend GpSurrogate gp_fit(const Eigen::MatrixXd&, const Eigen::VectorXd&, const SearchBox&, const GpFitOptions&);
  SearchBox box_;
  Eigen::MatrixXd U_;     // n x d in unit coordinates
  Eigen::VectorXd alpha_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  GpHyper hyper_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  double lml_ = 0.0;
};

/// Unless fixed, hyperparameters maximize the log marginal likelihood over
/// the grid: 8 log-spaced length scales in [0.05, 2] for every dimension
/// (full product), noise ratio sigma_n^2 / sigma_f^2 in {1e-8, 1e-4, 1e-2},
/// and sigma_f^2 in closed form for each combination.
GpSurrogate gp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const SearchBox& box,
                   const GpFitOptions& options = {});

/// Maximization form with exploration margin xi.
double expected_improvement(double mu, double sigma, double f_best, double xi = 0.01);

/// Halton sequence (bases 2, 3, 5, ...) with a seeded Cranley-Patterson shift, in the unit box.
Eigen::MatrixXd scrambled_halton(std::size_t n, std::size_t dim, std::uint64_t seed);

/// nullopt marks an infeasible point.
using Evaluator = std::function<std::optional<double>(const Eigen::VectorXd&)>;

struct OptimizeConfig {
  std::size_t n_init = 8;
  std::size_t n_iter = 40;
  std::uint64_t seed = 0;
  double xi = 0.01;
  std::size_t restarts = 64;
  GpFitOptions gp;
};

struct TracePoint {
  Eigen::VectorXd x;
  Eigen::VectorXd unit;         // x in unit-box coordinates
  std::optional<double> value;  // nullopt when infeasible
  double score = 0.0;           // value, or the infeasibility penalty in force when proposed
  double incumbent = 0.0;       // best feasible value so far (-inf before any)
  double acquisition = 0.0;     // EI at proposal; NaN for initial points
  bool initial = false;
};

struct OptimizationTrace {
  std::vector<TracePoint> points;
  std::size_t best_index = 0;

  std::optional<double> best_value() const;
  const Eigen::VectorXd& best_x() const { return points.at(best_index).x; }
};

/// n_init space-filling points, then n_iter EI proposals refit each step.
/// Infeasible points are scored (min feasible value - 1), recomputed as
/// observations arrive. EI is maximized from `restarts` random unit-box
/// starts refined by coordinate descent.
OptimizationTrace optimize(const Evaluator& evaluator, const SearchBox& box, const OptimizeConfig& config = {});

/// FBA biomass as a function of uptake lower bounds; box dimension names
/// must be logical nutrients with an exchange mapping.
Evaluator fba_evaluator(const MetabolicModel& model, const SearchBox& box, const ExchangeMap& exchanges = {},
                        const FbaOptions& options = {});

/// glucose, ammonium and oxygen over the default sweep ranges.
SearchBox default_nutrient_box();

/// iteration,<names>,biomass,incumbent,acquisition
std::string trace_csv(const OptimizationTrace& trace, const SearchBox& box);

}  // namespace fluxml
