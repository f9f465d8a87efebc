#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fluxml/condition.hpp"
#include "fluxml/dataset.hpp"
#include "fluxml/lp.hpp"
#include "fluxml/model.hpp"

namespace fluxml {

struct FbaOptions {
  ToleranceConfig tolerances;
  /// Second LP minimizing total |flux| at the optimal biomass.
  bool parsimonious = false;
};

struct FbaResult {
  LpStatus status = LpStatus::Infeasible;
  /// Flux of the objective reaction; NaN unless status is Optimal.
  double biomass_flux = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> fluxes;
  ConditionSpec condition;

  bool optimal() const noexcept { return status == LpStatus::Optimal; }
};

class FbaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precomputed stoichiometry and bounds for repeated solves against one
/// model. Solving only copies the bound vectors, so one instance can serve
/// many threads.
class FbaProblem {
 public:
  FbaProblem(const MetabolicModel& model, ExchangeMap exchanges, FbaOptions options = {});

  FbaResult solve(const ConditionSpec& condition) const;

  const MetabolicModel& model() const noexcept { return *model_; }
  const ExchangeMap& exchanges() const noexcept { return exchanges_; }
  /// Column of the exchange mapped to `nutrient`, if any.
  std::optional<std::size_t> exchange_index(const std::string& nutrient) const;

 private:
  const MetabolicModel* model_;
  ExchangeMap exchanges_;
  FbaOptions options_;
  SparseStoichMatrix stoich_;
  std::vector<double> lower_;
  std::vector<double> upper_;
  std::vector<double> objective_;
};

/// Exchange map given explicitly, falling back to the model's own hints.
ExchangeMap resolve_exchanges(const MetabolicModel& model, const ExchangeMap& overrides = {});

FbaResult fba_solve(const MetabolicModel& model, const ConditionSpec& condition,
                    const ExchangeMap& exchanges = {}, const FbaOptions& options = {});

/// Copy with both bounds of the reaction set to zero.
MetabolicModel knockout(const MetabolicModel& model, const std::string& reaction_id);

/// Copy with the reaction's upper bound multiplied by `factor` (> 1).
/// Infinite upper bounds stay infinite; the lower bound is untouched.
MetabolicModel overexpress(const MetabolicModel& model, const std::string& reaction_id, double factor);

struct SweepPoint {
  double uptake_lb;
  /// Empty when the solve was not optimal.
  std::optional<double> biomass_flux;
};

/// One FBA solve per lower bound on the "oxygen" exchange, in input order.
std::vector<SweepPoint> oxygen_sweep(const MetabolicModel& model, const std::vector<double>& o2_lb_values,
                                     const ExchangeMap& exchanges = {}, const FbaOptions& options = {});

enum class Sampler { UniformRandom, Grid, LatinHypercube };

const char* to_string(Sampler s) noexcept;
Sampler sampler_from_string(const std::string& name);

struct SweepConfig {
  std::size_t n_samples = 2000;
  /// Nutrient name -> (lo, hi) uptake lower-bound interval; lo <= hi <= 0.
  std::map<std::string, std::pair<double, double>> ranges;
  Sampler sampler = Sampler::UniformRandom;
  std::uint64_t seed = 0;

  /// glucose [-20, -0.5], oxygen [-20, -0.5], ammonium [-10, -0.1].
  static std::map<std::string, std::pair<double, double>> default_ranges();
};

/// Sampled conditions for a sweep, in sample-index order. Uniform samples
/// use a per-sample generator seeded from (seed, index).
std::vector<ConditionRecord> sample_conditions(const SweepConfig& sweep);

/// Runs one FBA per sampled condition on `workers` threads. Infeasible
/// samples are dropped from the matrix but kept in the condition log.
/// Output is identical for any worker count.
FluxDataset generate_flux_dataset(const MetabolicModel& model, const SweepConfig& sweep,
                                  const ExchangeMap& exchanges = {}, const FbaOptions& options = {},
                                  std::size_t workers = 1);

}  // namespace fluxml
