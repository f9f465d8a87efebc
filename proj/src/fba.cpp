#include "fluxml/fba.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

#include "fluxml/rng.hpp"

namespace fluxml {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

const std::vector<std::string>& nutrient_order() {
  static const std::vector<std::string> order{kGlucose, kOxygen, kAmmonium};
  return order;
}

std::optional<double>& uptake_slot(ConditionSpec& c, const std::string& nutrient) {
  if (nutrient == kGlucose) return c.glucose_uptake_lb;
  if (nutrient == kOxygen) return c.oxygen_uptake_lb;
  if (nutrient == kAmmonium) return c.ammonium_uptake_lb;
  throw FbaError("unknown nutrient '" + nutrient + "'");
}

const std::optional<double>& uptake_slot(const ConditionSpec& c, const std::string& nutrient) {
  return uptake_slot(const_cast<ConditionSpec&>(c), nutrient);
}

/// min sum |v| subject to the FBA constraints with the objective flux held
/// at `optimum`. v is split as p - q with p, q >= 0.
std::vector<double> parsimonious_fluxes(const SparseStoichMatrix& s, std::vector<double> lo,
                                        std::vector<double> hi, std::size_t objective, double optimum,
                                        const ToleranceConfig& tol) {
  const double slack = 1e-9 * std::max(1.0, std::abs(optimum));
  lo[objective] = std::max(lo[objective], optimum - slack);
  hi[objective] = std::min(hi[objective], optimum);
  if (lo[objective] > hi[objective]) lo[objective] = hi[objective];

  const std::size_t n = s.cols;
  std::vector<SparseStoichMatrix::Entry> triplets;
  triplets.reserve(2 * s.entries.size());
  for (const auto& e : s.entries) {
    triplets.push_back({e.row, e.col, e.value});
    triplets.push_back({e.row, e.col + n, -e.value});
  }
  LpProblem lp;
  lp.constraints = SparseStoichMatrix::from_triplets(s.rows, 2 * n, std::move(triplets));
  lp.objective.assign(2 * n, -1.0);
  lp.lower.resize(2 * n);
  lp.upper.resize(2 * n);
  for (std::size_t j = 0; j < n; ++j) {
    lp.lower[j] = std::max(0.0, lo[j]);
    lp.upper[j] = std::max(0.0, hi[j]);
    lp.lower[j + n] = std::max(0.0, -hi[j]);
    lp.upper[j + n] = std::max(0.0, -lo[j]);
  }
  const auto sol = solve_bounded_lp(lp, tol);
  if (sol.status != LpStatus::Optimal) return {};
  std::vector<double> v(n);
  for (std::size_t j = 0; j < n; ++j) v[j] = sol.x[j] - sol.x[j + n];
  return v;
}

}  // namespace

ExchangeMap resolve_exchanges(const MetabolicModel& model, const ExchangeMap& overrides) {
  ExchangeMap out = model.exchange_hints();
  for (const auto& [name, id] : overrides) out[name] = id;
  return out;
}

FbaProblem::FbaProblem(const MetabolicModel& model, ExchangeMap exchanges, FbaOptions options)
    : model_(&model),
      exchanges_(std::move(exchanges)),
      options_(options),
      stoich_(stoichiometric_matrix(model)),
      lower_(model.lower_bounds()),
      upper_(model.upper_bounds()),
      objective_(model.objective_vector()) {
  for (const auto& [name, id] : exchanges_)
    if (!model.find_reaction(id))
      throw FbaError("exchange '" + name + "' maps to unknown reaction '" + id + "'");
}

std::optional<std::size_t> FbaProblem::exchange_index(const std::string& nutrient) const {
  auto it = exchanges_.find(nutrient);
  if (it == exchanges_.end()) return std::nullopt;
  return model_->find_reaction(it->second);
}

FbaResult FbaProblem::solve(const ConditionSpec& condition) const {
  std::vector<double> lo = lower_;
  std::vector<double> hi = upper_;
  for (const auto& nutrient : nutrient_order()) {
    const auto& value = uptake_slot(condition, nutrient);
    if (!value) continue;
    const auto j = exchange_index(nutrient);
    if (!j) throw FbaError("condition sets " + nutrient + " uptake but no exchange reaction is mapped for it");
    if (!(*value <= 0.0)) throw FbaError(nutrient + " uptake lower bound must be <= 0");
    if (*value > hi[*j])
      throw FbaError(nutrient + " uptake lower bound exceeds the upper bound of '" + model_->reaction(*j).id + "'");
    lo[*j] = *value;
  }
  for (const auto& [id, bounds] : condition.extra_bounds) {
    const auto j = model_->find_reaction(id);
    if (!j) throw FbaError("condition bounds unknown reaction '" + id + "'");
    if (!(bounds.first <= bounds.second)) throw FbaError("condition bounds on '" + id + "' have lb > ub");
    lo[*j] = bounds.first;
    hi[*j] = bounds.second;
  }

  LpProblem lp{objective_, stoich_, {}, lo, hi};
  const auto sol = solve_bounded_lp(lp, options_.tolerances);

  FbaResult out;
  out.status = sol.status;
  out.condition = condition;
  if (sol.status != LpStatus::Optimal) return out;
  out.fluxes = sol.x;
  const std::size_t obj = model_->objective_index();
  if (options_.parsimonious) {
    auto v = parsimonious_fluxes(stoich_, lo, hi, obj, sol.x[obj], options_.tolerances);
    if (!v.empty()) out.fluxes = std::move(v);
  }
  out.biomass_flux = out.fluxes[obj];
  return out;
}

FbaResult fba_solve(const MetabolicModel& model, const ConditionSpec& condition, const ExchangeMap& exchanges,
                    const FbaOptions& options) {
  return FbaProblem(model, resolve_exchanges(model, exchanges), options).solve(condition);
}

MetabolicModel knockout(const MetabolicModel& model, const std::string& reaction_id) {
  return model.with_bounds(model.reaction_index(reaction_id), 0.0, 0.0);
}

MetabolicModel overexpress(const MetabolicModel& model, const std::string& reaction_id, double factor) {
  const std::size_t j = model.reaction_index(reaction_id);
  if (!(factor > 1.0)) throw FbaError("overexpression factor must be > 1");
  const auto& r = model.reaction(j);
  double ub = r.upper_bound;
  if (std::isfinite(ub)) {
    ub *= factor;
    // A negative upper bound shrinks under multiplication; keep lb <= ub.
    ub = std::max(ub, r.lower_bound);
  }
  return model.with_bounds(j, r.lower_bound, ub);
}

std::vector<SweepPoint> oxygen_sweep(const MetabolicModel& model, const std::vector<double>& o2_lb_values,
                                     const ExchangeMap& exchanges, const FbaOptions& options) {
  FbaProblem problem(model, resolve_exchanges(model, exchanges), options);
  if (!problem.exchange_index(kOxygen)) throw FbaError("no exchange reaction mapped for oxygen");
  std::vector<SweepPoint> curve;
  curve.reserve(o2_lb_values.size());
  for (double lb : o2_lb_values) {
    ConditionSpec c;
    c.oxygen_uptake_lb = lb;
    const auto res = problem.solve(c);
    curve.push_back({lb, res.optimal() ? std::optional<double>(res.biomass_flux) : std::nullopt});
  }
  return curve;
}

const char* to_string(Sampler s) noexcept {
  switch (s) {
    case Sampler::UniformRandom: return "uniform";
    case Sampler::Grid: return "grid";
    case Sampler::LatinHypercube: return "latin-hypercube";
  }
  return "unknown";
}

Sampler sampler_from_string(const std::string& name) {
  if (name == "uniform" || name == "uniform-random") return Sampler::UniformRandom;
  if (name == "grid") return Sampler::Grid;
  if (name == "latin-hypercube" || name == "lhs") return Sampler::LatinHypercube;
  throw std::invalid_argument("unknown sampler '" + name + "'");
}

std::map<std::string, std::pair<double, double>> SweepConfig::default_ranges() {
  return {{kGlucose, {-20.0, -0.5}}, {kOxygen, {-20.0, -0.5}}, {kAmmonium, {-10.0, -0.1}}};
}

std::vector<ConditionRecord> sample_conditions(const SweepConfig& sweep) {
  if (sweep.n_samples < 1) throw std::invalid_argument("sweep needs n_samples >= 1");
  std::vector<std::string> dims;
  for (const auto& nutrient : nutrient_order()) {
    auto it = sweep.ranges.find(nutrient);
    if (it == sweep.ranges.end()) continue;
    const auto [lo, hi] = it->second;
    if (!(lo <= hi && hi <= 0.0))
      throw std::invalid_argument("sweep range for " + nutrient + " must satisfy lo <= hi <= 0");
    dims.push_back(nutrient);
  }
  for (const auto& [name, range] : sweep.ranges)
    if (std::find(dims.begin(), dims.end(), name) == dims.end())
      throw std::invalid_argument("sweep range for unknown nutrient '" + name + "'");

  const std::size_t n = sweep.n_samples;
  const std::size_t d = dims.size();
  // unit-cube coordinates per sample and dimension
  std::vector<std::vector<double>> unit(n, std::vector<double>(d, 0.5));
  switch (sweep.sampler) {
    case Sampler::UniformRandom:
      for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(sweep.seed, i));
        for (std::size_t k = 0; k < d; ++k) unit[i][k] = rng.uniform();
      }
      break;
    case Sampler::Grid: {
      if (d == 0) break;
      std::size_t per_dim = 1;
      while (true) {
        std::size_t cells = 1;
        for (std::size_t k = 0; k < d; ++k) cells *= per_dim;
        if (cells >= n) break;
        ++per_dim;
      }
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t rem = i;
        for (std::size_t k = d; k-- > 0;) {
          unit[i][k] = (static_cast<double>(rem % per_dim) + 0.5) / static_cast<double>(per_dim);
          rem /= per_dim;
        }
      }
      break;
    }
    case Sampler::LatinHypercube:
      for (std::size_t k = 0; k < d; ++k) {
        Rng strata_rng(derive_seed(sweep.seed, 0x5eed0000ULL + k));
        const auto strata = permutation(n, strata_rng);
        for (std::size_t i = 0; i < n; ++i) {
          Rng rng(derive_seed(derive_seed(sweep.seed, i), k));
          unit[i][k] = (static_cast<double>(strata[i]) + rng.uniform()) / static_cast<double>(n);
        }
      }
      break;
  }

  std::vector<ConditionRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "c%06zu", i);
    out[i].condition_id = id;
    for (std::size_t k = 0; k < d; ++k) {
      const auto [lo, hi] = sweep.ranges.at(dims[k]);
      uptake_slot(out[i].condition, dims[k]) = lo + (hi - lo) * unit[i][k];
    }
  }
  return out;
}

FluxDataset generate_flux_dataset(const MetabolicModel& model, const SweepConfig& sweep,
                                  const ExchangeMap& exchanges, const FbaOptions& options, std::size_t workers) {
  auto log = sample_conditions(sweep);
  const FbaProblem problem(model, resolve_exchanges(model, exchanges), options);
  for (const auto& [name, range] : sweep.ranges)
    if (!problem.exchange_index(name)) throw FbaError("sweep varies " + name + " but no exchange is mapped for it");

  const std::size_t n = log.size();
  std::vector<FbaResult> results(n);
  workers = std::clamp<std::size_t>(workers, 1, n);
  auto work = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += workers) results[i] = problem.solve(log[i].condition);
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }

  std::size_t feasible = 0;
  for (std::size_t i = 0; i < n; ++i) {
    log[i].status = results[i].status;
    if (results[i].optimal()) ++feasible;
  }
  if (feasible == 0) throw FbaError("every sampled condition was infeasible; dataset is empty");

  FluxDataset data;
  const std::size_t R = model.reactions().size();
  data.X.resize(static_cast<Eigen::Index>(feasible), static_cast<Eigen::Index>(R));
  data.y.resize(static_cast<Eigen::Index>(feasible));
  for (const auto& r : model.reactions()) data.reaction_ids.push_back(r.id);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!results[i].optimal()) continue;
    for (std::size_t j = 0; j < R; ++j) data.X(row, static_cast<Eigen::Index>(j)) = results[i].fluxes[j];
    data.y[row] = data.X(row, static_cast<Eigen::Index>(model.objective_index()));
    data.condition_ids.push_back(log[i].condition_id);
    ++row;
  }
  data.condition_log = std::move(log);
  return data;
}

}  // namespace fluxml
