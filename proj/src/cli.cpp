#include "fluxml/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fluxml/bayesopt.hpp"
#include "fluxml/cluster.hpp"
#include "fluxml/dataset.hpp"
#include "fluxml/fba.hpp"
#include "fluxml/io.hpp"
#include "fluxml/nn.hpp"
#include "fluxml/report.hpp"
#include "fluxml/shap.hpp"
#include "fluxml/tree.hpp"

namespace fluxml {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Kind { String, Integer, Real, Flag, List, RealList, Map, Ranges };

struct Opt {
  std::string key;
  Kind kind;
  ojson def;
  std::string help;
};

struct Context;

struct Command {
  std::string name;
  std::string help;
  std::vector<Opt> opts;
  void (*run)(Context&);
};

// ---------------------------------------------------------------- context

struct Context {
  const Command* cmd = nullptr;
  ojson cfg;
  fs::path out_root;
  std::size_t workers = 1;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
  ojson inputs = ojson::object();
  std::string model_checksum;
  ojson extra = ojson::object();
  fs::path dir;
  std::string hash;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  const ojson& at(const std::string& key) const { return cfg.at(key); }
  std::string str(const std::string& key) const { return cfg.at(key).get<std::string>(); }
  std::uint64_t u64(const std::string& key) const { return cfg.at(key).get<std::uint64_t>(); }
  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }
  double real(const std::string& key) const { return cfg.at(key).get<double>(); }
  bool flag(const std::string& key) const { return cfg.at(key).get<bool>(); }

  // Keys naming files whose content is already checksummed in `inputs`.
  std::set<std::string> file_keys;

  void open() {
    ojson hashed = cfg;
    for (const auto& k : file_keys) hashed.erase(k);
    ojson payload;
    payload["command"] = cmd->name;
    payload["config"] = hashed;
    payload["inputs"] = inputs;
    hash = json_hash(payload);
    dir = out_root / (cmd->name + "-" + hash);
    fs::create_directories(dir);
  }

  void write(const std::string& name, const std::string& content) const { write_text_file((dir / name).string(), content); }

  void finish() {
    RunMetadata meta;
    meta.command = cmd->name;
    meta.config_hash = hash;
    meta.model_checksum = model_checksum;
    meta.config = cfg;
    meta.config["workers"] = workers;
    meta.inputs = inputs;
    meta.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    meta.extra = extra;
    write("metadata.json", metadata_to_json(meta).dump(2) + "\n");

    const fs::path index_path = out_root / "index.json";
    ojson index = ojson::object();
    if (fs::exists(index_path)) {
      try {
        index = ojson::parse(read_text_file(index_path.string()));
      } catch (const std::exception&) {
        index = ojson::object();
      }
    }
    if (!index.contains("runs")) index["runs"] = ojson::object();
    if (!index.contains("latest")) index["latest"] = ojson::object();
    const std::string name = dir.filename().string();
    index["runs"][name] = ojson{{"command", cmd->name}, {"config_hash", hash}};
    index["latest"][cmd->name] = name;
    write_text_file(index_path.string(), index.dump(2) + "\n");
    *out << "artifacts: " << dir.string() << '\n';
  }
};

std::string display(double v) {
  std::string s = format_real(v);
  if (s.find_first_of(".eni") == std::string::npos) s += ".0";
  return s;
}

std::string checksum_text(std::string_view text) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

fs::path absolute_path(const std::string& p) { return fs::weakly_canonical(fs::absolute(p)); }

// ---------------------------------------------------------------- option parsing

std::string flag_name(const std::string& key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

std::uint64_t parse_u64(const std::string& text, const std::string& where) {
  std::size_t used = 0;
  try {
    if (!text.empty() && text[0] != '-') {
      const auto v = std::stoull(text, &used);
      if (used == text.size()) return v;
    }
  } catch (const std::exception&) {
  }
  throw UsageError(where + ": expected a non-negative integer, got '" + text + "'");
}

double parse_number(const std::string& text, const std::string& where) {
  try {
    return parse_real(text);
  } catch (const std::exception&) {
    throw UsageError(where + ": expected a number, got '" + text + "'");
  }
}

std::vector<std::string> split_commas(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    std::stringstream ss(t);
    std::string part;
    while (std::getline(ss, part, ','))
      if (!part.empty()) out.push_back(part);
  }
  return out;
}

// Validates a config-file value against the option kind.
ojson from_json(const Opt& o, const ojson& v, const std::string& where) {
  auto bad = [&](const char* what) { return UsageError(where + ": expected " + what); };
  switch (o.kind) {
    case Kind::String:
      if (!v.is_string()) throw bad("a string");
      return v;
    case Kind::Integer:
      if (!v.is_number_integer() || v.get<long long>() < 0) throw bad("a non-negative integer");
      return v.get<std::uint64_t>();
    case Kind::Real:
      if (v.is_null()) return v;
      if (!v.is_number()) throw bad("a number");
      return v.get<double>();
    case Kind::Flag:
      if (!v.is_boolean()) throw bad("true or false");
      return v;
    case Kind::List: {
      if (!v.is_array()) throw bad("an array of strings");
      for (const auto& e : v)
        if (!e.is_string()) throw bad("an array of strings");
      return v;
    }
    case Kind::RealList: {
      if (!v.is_array()) throw bad("an array of numbers");
      ojson a = ojson::array();
      for (const auto& e : v) {
        if (!e.is_number()) throw bad("an array of numbers");
        a.push_back(e.get<double>());
      }
      return a;
    }
    case Kind::Map: {
      if (!v.is_object()) throw bad("an object of strings");
      for (const auto& [k, e] : v.items())
        if (!e.is_string()) throw bad("an object of strings");
      return v;
    }
    case Kind::Ranges: {
      if (!v.is_object()) throw bad("an object of [lo, hi] pairs");
      ojson r = ojson::object();
      for (const auto& [k, e] : v.items()) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
          throw UsageError(where + "." + k + ": expected [lo, hi]");
        r[k] = ojson::array({e[0].get<double>(), e[1].get<double>()});
      }
      return r;
    }
  }
  return v;
}

ojson from_flag(const Opt& o, const std::string& scalar, const std::vector<std::string>& list, bool flag) {
  const std::string where = flag_name(o.key);
  switch (o.kind) {
    case Kind::String: return scalar;
    case Kind::Integer: return parse_u64(scalar, where);
    case Kind::Real: return parse_number(scalar, where);
    case Kind::Flag: return flag;
    case Kind::List: return split_commas(list);
    case Kind::RealList: {
      ojson a = ojson::array();
      for (const auto& t : split_commas(list)) a.push_back(parse_number(t, where));
      return a;
    }
    case Kind::Map: {
      ojson m = ojson::object();
      for (const auto& t : split_commas(list)) {
        const auto eq = t.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError(where + ": expected name=value, got '" + t + "'");
        m[t.substr(0, eq)] = t.substr(eq + 1);
      }
      return m;
    }
    case Kind::Ranges: {
      ojson m = ojson::object();
      for (const auto& t : list) {
        const auto eq = t.find('=');
        const auto colon = t.find(':', eq == std::string::npos ? 0 : eq);
        if (eq == std::string::npos || colon == std::string::npos)
          throw UsageError(where + ": expected name=lo:hi, got '" + t + "'");
        m[t.substr(0, eq)] = ojson::array({parse_number(t.substr(eq + 1, colon - eq - 1), where),
                                           parse_number(t.substr(colon + 1), where)});
      }
      return m;
    }
  }
  return nullptr;
}

// ---------------------------------------------------------------- shared loaders

const std::vector<const char*> kNutrients = {kGlucose, kAmmonium, kOxygen};

MetabolicModel load_model(Context& ctx, const std::string& key = "model") {
  const std::string path = ctx.str(key);
  if (path.empty()) throw UsageError("missing required key '" + key + "' (" + flag_name(key) + ")");
  if (!fs::exists(path)) throw DomainError(key + ": file not found: " + path);
  std::vector<std::string> warnings;
  auto model = load_model_file(path, &warnings);
  for (const auto& w : warnings) *ctx.err << "warning: " << w << '\n';
  ctx.cfg[key] = absolute_path(path).string();
  ctx.file_keys.insert(key);
  ctx.model_checksum = model_checksum(model);
  ctx.inputs["model"] = ctx.model_checksum;
  return model;
}

ExchangeMap resolve_exchange_key(Context& ctx, const MetabolicModel& model) {
  ExchangeMap given;
  for (const auto& [k, v] : ctx.at("exchanges").items()) given[k] = v.get<std::string>();
  auto resolved = resolve_exchanges(model, given);
  ojson j = ojson::object();
  for (const auto& [k, v] : resolved) j[k] = v;
  ctx.cfg["exchanges"] = j;
  return resolved;
}

ConditionSpec condition_from(const Context& ctx) {
  ConditionSpec c;
  if (!ctx.at("glucose").is_null()) c.glucose_uptake_lb = ctx.real("glucose");
  if (!ctx.at("oxygen").is_null()) c.oxygen_uptake_lb = ctx.real("oxygen");
  if (!ctx.at("ammonium").is_null()) c.ammonium_uptake_lb = ctx.real("ammonium");
  return c;
}

FbaOptions fba_options(const Context& ctx) {
  FbaOptions o;
  o.parsimonious = ctx.cfg.contains("parsimonious") && ctx.flag("parsimonious");
  return o;
}

// Directory of a prior run, explicit or the latest `command` run.
fs::path prior_run(Context& ctx, const std::string& key, const std::string& command) {
  std::string given = ctx.str(key);
  if (given.empty() || given == "latest") {
    const fs::path index_path = ctx.out_root / "index.json";
    if (fs::exists(index_path)) {
      const auto index = ojson::parse(read_text_file(index_path.string()));
      if (index.contains("latest") && index["latest"].contains(command))
        given = (ctx.out_root / index["latest"][command].get<std::string>()).string();
    }
    if (given.empty() || given == "latest")
      throw DomainError(key + ": no prior '" + command + "' run under " + ctx.out_root.string() + "; pass " +
                        flag_name(key));
  }
  if (!fs::exists(given)) throw DomainError(key + ": not found: " + given);
  const fs::path p = absolute_path(given);
  ctx.cfg[key] = p.string();
  ctx.file_keys.insert(key);
  return p;
}

std::optional<RunMetadata> read_metadata(const fs::path& run_dir) {
  const fs::path p = run_dir / "metadata.json";
  if (!fs::exists(p)) return std::nullopt;
  return metadata_from_json(nlohmann::json::parse(read_text_file(p.string())));
}

struct LoadedDataset {
  FluxDataset data;
  fs::path dir;
  std::optional<RunMetadata> meta;
};

// --dataset takes a sweep run directory or a dataset CSV.
LoadedDataset load_dataset_key(Context& ctx) {
  const fs::path p = prior_run(ctx, "dataset", "sweep");
  LoadedDataset d;
  fs::path csv = p;
  if (fs::is_directory(p)) {
    d.dir = p;
    csv = p / "dataset.csv";
  } else {
    d.dir = p.parent_path();
  }
  if (!fs::exists(csv)) throw DomainError("dataset: no dataset.csv in " + p.string());
  const fs::path log = csv.parent_path() / "conditions.json";
  const std::string text = read_text_file(csv.string());
  d.data = load_dataset(csv.string(), fs::exists(log) ? log.string() : std::string{});
  if (d.data.rows() == 0) throw DomainError("dataset: " + csv.string() + " has no rows");
  ctx.inputs["dataset"] = checksum_text(text);
  d.meta = read_metadata(d.dir);
  return d;
}

// Model for dataset-driven commands: --model, else the sweep's model.
std::optional<MetabolicModel> dataset_model(Context& ctx, const LoadedDataset& d) {
  if (ctx.str("model").empty() && d.meta && d.meta->config.contains("model"))
    ctx.cfg["model"] = d.meta->config["model"].get<std::string>();
  if (ctx.str("model").empty()) return std::nullopt;
  return load_model(ctx);
}

std::string objective_id(Context& ctx, const LoadedDataset& d) {
  if (!ctx.str("objective").empty()) return ctx.str("objective");
  if (d.meta && d.meta->extra.contains("objective_reaction")) {
    const auto id = d.meta->extra["objective_reaction"].get<std::string>();
    ctx.cfg["objective"] = id;
    return id;
  }
  throw UsageError("objective: the dataset has no recorded objective reaction; pass --objective");
}

std::vector<std::size_t> feature_columns(Context& ctx, const LoadedDataset& d) {
  std::vector<std::size_t> cols(d.data.cols());
  std::iota(cols.begin(), cols.end(), 0);
  if (!ctx.flag("exclude_objective")) return cols;
  const auto id = objective_id(ctx, d);
  const auto it = std::find(d.data.reaction_ids.begin(), d.data.reaction_ids.end(), id);
  if (it == d.data.reaction_ids.end()) throw DomainError("objective: '" + id + "' is not a dataset column");
  cols.erase(cols.begin() + (it - d.data.reaction_ids.begin()));
  if (cols.empty()) throw DomainError("no features left after excluding the objective");
  return cols;
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& X, const std::vector<std::size_t>& cols) {
  Eigen::MatrixXd out(X.rows(), long(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(long(j)) = X.col(long(cols[j]));
  return out;
}

TreeParams tree_params(const Context& ctx, const std::string& kind) {
  const auto depth = ctx.at("max_depth");
  if (kind == "forest") {
    ForestParams p;
    p.n_trees = ctx.size("n_trees");
    if (!depth.is_null()) p.max_depth = static_cast<std::size_t>(depth.get<double>());
    p.min_samples_leaf = ctx.size("min_samples_leaf");
    p.max_features = ctx.size("max_features");
    p.seed = ctx.u64("seed");
    p.workers = ctx.workers;
    return p;
  }
  if (kind == "boosted") {
    BoostParams p;
    p.n_rounds = ctx.size("rounds");
    p.learning_rate = ctx.real("learning_rate");
    if (!depth.is_null()) p.max_depth = static_cast<std::size_t>(depth.get<double>());
    p.lambda_l2 = ctx.real("lambda");
    p.min_samples_leaf = ctx.size("min_samples_leaf");
    p.subsample = ctx.real("subsample");
    p.seed = ctx.u64("seed");
    return p;
  }
  throw UsageError("kind: expected forest, boosted or ffnn, got '" + kind + "'");
}

TrainConfig nn_config(const Context& ctx) {
  TrainConfig c;
  c.epochs = ctx.size("epochs");
  c.batch_size = ctx.size("batch_size");
  c.learning_rate = ctx.real("nn_learning_rate");
  c.seed = ctx.u64("seed");
  return c;
}

ojson metrics_json(const RegressionMetrics& m) { return ojson{{"r2", m.r2}, {"mse", m.mse}}; }

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
  return s;
}

// ---------------------------------------------------------------- commands

void cmd_fba(Context& ctx) {
  auto model = load_model(ctx);
  const auto exchanges = resolve_exchange_key(ctx, model);
  for (const auto& j : ctx.at("knockout")) model = knockout(model, j.get<std::string>());
  for (const auto& j : ctx.at("overexpress")) model = overexpress(model, j.get<std::string>(), ctx.real("factor"));
  const auto r = fba_solve(model, condition_from(ctx), exchanges, fba_options(ctx));
  ctx.open();
  std::string csv = "reaction_id,flux\n";
  if (r.optimal())
    for (std::size_t j = 0; j < r.fluxes.size(); ++j)
      csv += csv_field(model.reaction(j).id) + "," + format_real(r.fluxes[j]) + "\n";
  ctx.write("fluxes.csv", csv);
  ojson res{{"status", to_string(r.status)}};
  res["biomass"] = r.optimal() ? ojson(r.biomass_flux) : ojson(nullptr);
  res["condition"] = condition_to_json(r.condition);
  ctx.write("result.json", res.dump(2) + "\n");
  *ctx.out << "status " << to_string(r.status) << '\n';
  if (r.optimal()) *ctx.out << "biomass " << display(r.biomass_flux) << '\n';
  ctx.finish();
}

void cmd_sweep(Context& ctx) {
  const auto model = load_model(ctx);
  const auto exchanges = resolve_exchange_key(ctx, model);
  SweepConfig sweep;
  sweep.n_samples = ctx.size("n");
  sweep.seed = ctx.u64("seed");
  try {
    sweep.sampler = sampler_from_string(ctx.str("sampler"));
  } catch (const std::exception& e) {
    throw UsageError(std::string("sampler: ") + e.what());
  }
  if (ctx.at("ranges").empty()) {
    ojson r = ojson::object();
    for (const auto& [name, range] : SweepConfig::default_ranges())
      if (exchanges.contains(name)) r[name] = ojson::array({range.first, range.second});
    ctx.cfg["ranges"] = r;
  }
  for (const auto& [k, v] : ctx.at("ranges").items()) sweep.ranges[k] = {v[0].get<double>(), v[1].get<double>()};
  const auto data = generate_flux_dataset(model, sweep, exchanges, fba_options(ctx), ctx.workers);
  ctx.extra["objective_reaction"] = model.objective_reaction_id();
  ctx.open();
  ctx.write("dataset.csv", dataset_to_csv(data));
  ctx.write("conditions.json", condition_log_to_json(data.condition_log));
  *ctx.out << "rows " << data.rows() << " of " << data.condition_log.size() << " sampled\n";
  ctx.finish();
}

void cmd_train(Context& ctx) {
  const auto d = load_dataset_key(ctx);
  const auto cols = feature_columns(ctx, d);
  const Eigen::MatrixXd X = select_columns(d.data.X, cols);
  const Eigen::VectorXd& y = d.data.y;
  std::vector<std::string> features;
  for (auto c : cols) features.push_back(d.data.reaction_ids[c]);
  const auto sp = split(d.data.rows(), ctx.u64("split_seed"));
  const std::string kind = ctx.str("kind");

  ojson metrics;
  metrics["kind"] = kind;
  metrics["rows"] = d.data.rows();
  metrics["features"] = features;
  Eigen::VectorXd pred;
  std::string model_doc, loss_csv;

  if (kind == "ffnn") {
    auto [scaler, Z] = standardize_fit_apply(X, sp.train);
    FfnnArch arch;
    arch.hidden.clear();
    for (const auto& h : ctx.at("hidden")) arch.hidden.push_back(parse_u64(h.get<std::string>(), "hidden"));
    arch.dropout_rate = ctx.real("dropout");
    const auto r = train_ffnn(Z, y, sp, arch, nn_config(ctx));
    pred = r.model.predict(Z);
    metrics["train"] = metrics_json(fluxml::metrics(select_rows(y, sp.train), select_rows(pred, sp.train)));
    metrics["validation"] = metrics_json(r.validation);
    metrics["test"] = metrics_json(r.test);
    metrics["cv"] = nullptr;
    ojson doc{{"kind", "ffnn"}, {"y_mean", r.model.y_mean}, {"y_scale", r.model.y_scale}};
    doc["standardizer"] = ojson{{"mean", scaler.mean}, {"scale", scaler.scale}};
    doc["net"] = mlp_to_json(r.model.net);
    model_doc = doc.dump() + "\n";
    loss_csv = "epoch,train_loss,validation_loss\n";
    for (std::size_t e = 0; e < r.train_loss.size(); ++e)
      loss_csv += std::to_string(e) + "," + format_real(r.train_loss[e]) + "," + format_real(r.validation_loss[e]) + "\n";
  } else {
    TreeParams params = tree_params(ctx, kind);
    if (ctx.flag("grid")) {
      const auto g = grid_search(X, y, sp.train, sp.validation,
                                 kind == "forest" ? EnsembleKind::Forest : EnsembleKind::Boosted, ctx.u64("seed"));
      params = g.best;
      if (auto* f = std::get_if<ForestParams>(&params)) f->workers = ctx.workers;
      metrics["grid_best_validation_r2"] = g.best_validation_r2;
    }
    const auto ens = fit_ensemble(select_rows(X, sp.train), select_rows(y, sp.train), params);
    pred = predict(ens, X);
    metrics["params"] = params_to_json(params);
    for (const auto& [name, rows] : {std::pair{"train", &sp.train}, {"validation", &sp.validation}, {"test", &sp.test}})
      metrics[name] = metrics_json(fluxml::metrics(select_rows(y, *rows), select_rows(pred, *rows)));
    const std::size_t folds = ctx.size("cv_folds");
    if (folds >= 2) {
      const auto cv = cross_validate(X, y, params, folds, ctx.u64("split_seed"));
      metrics["cv"] = ojson{{"folds", folds}, {"r2_mean", cv.r2},   {"r2_std", cv.r2_std},
                            {"mse_mean", cv.mse}, {"mse_std", cv.mse_std}, {"fold_r2", cv.fold_r2}};
    } else {
      metrics["cv"] = nullptr;
    }
    model_doc = ensemble_to_json(ens).dump() + "\n";
    const auto imp = ens.feature_importance();
    std::vector<std::size_t> order(imp.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return imp[a] > imp[b]; });
    std::string icsv = "rank,feature,reaction_id,importance\n";
    for (std::size_t r = 0; r < order.size(); ++r)
      icsv += std::to_string(r + 1) + "," + std::to_string(order[r]) + "," + csv_field(features[order[r]]) + "," +
              format_real(imp[order[r]]) + "\n";
    ctx.extra["importance_csv"] = icsv;
    if (!ens.training_loss.empty()) {
      loss_csv = "round,train_mse\n";
      for (std::size_t r = 0; r < ens.training_loss.size(); ++r)
        loss_csv += std::to_string(r) + "," + format_real(ens.training_loss[r]) + "\n";
    }
  }

  ctx.open();
  ctx.write("metrics.json", metrics.dump(2) + "\n");
  ctx.write("model.json", model_doc);
  if (ctx.extra.contains("importance_csv")) {
    ctx.write("importance.csv", ctx.extra["importance_csv"].get<std::string>());
    ctx.extra.erase("importance_csv");
  }
  if (!loss_csv.empty()) ctx.write("loss.csv", loss_csv);
  ojson split_doc{{"seed", ctx.u64("split_seed")}, {"train", sp.train}, {"validation", sp.validation}, {"test", sp.test}};
  ctx.write("split.json", split_doc.dump() + "\n");

  std::vector<std::string> label(d.data.rows(), "train");
  for (auto i : sp.validation) label[i] = "validation";
  for (auto i : sp.test) label[i] = "test";
  std::string pcsv = "condition_id,split,y,y_pred\n";
  for (std::size_t i = 0; i < d.data.rows(); ++i)
    pcsv += csv_field(d.data.condition_ids[i]) + "," + label[i] + "," + format_real(y[long(i)]) + "," +
            format_real(pred[long(i)]) + "\n";
  ctx.write("predictions.csv", pcsv);

  PlotData pd;
  for (auto i : sp.test) {
    pd.x.push_back(y[long(i)]);
    pd.y.push_back(pred[long(i)]);
  }
  ctx.write("parity.svg", render_plot(PlotKind::Scatter, pd,
                                      {kind + " test predictions", "true biomass flux", "predicted biomass flux", true}));

  *ctx.out << "test r2 " << format_real(metrics["test"]["r2"].get<double>()) << '\n';
  *ctx.out << "validation r2 " << format_real(metrics["validation"]["r2"].get<double>()) << '\n';
  if (!metrics["cv"].is_null())
    *ctx.out << "cv r2 " << format_real(metrics["cv"]["r2_mean"].get<double>()) << " +/- "
             << format_real(metrics["cv"]["r2_std"].get<double>()) << '\n';
  ctx.finish();
}

struct TrainedRun {
  TreeEnsemble ensemble;
  LoadedDataset data;
  Eigen::MatrixXd X;
  std::vector<std::string> features;
  std::vector<std::size_t> test_rows;
};

TrainedRun load_trained(Context& ctx) {
  const fs::path run = prior_run(ctx, "train_run", "train");
  const auto meta = read_metadata(run);
  if (!meta) throw DomainError("train_run: no metadata.json in " + run.string());
  const std::string model_text = read_text_file((run / "model.json").string());
  const auto doc = nlohmann::json::parse(model_text);
  if (doc.value("kind", std::string{}) == "ffnn") throw DomainError("train_run: SHAP needs a tree ensemble, got ffnn");
  TrainedRun t;
  t.ensemble = ensemble_from_json(doc);
  ctx.inputs["train_model"] = checksum_text(model_text);

  const std::string csv = meta->config.at("dataset").get<std::string>();
  fs::path csv_path = fs::is_directory(csv) ? fs::path(csv) / "dataset.csv" : fs::path(csv);
  if (!fs::exists(csv_path)) throw DomainError("train_run: dataset " + csv_path.string() + " is gone");
  t.data.data = load_dataset(csv_path.string());
  ctx.inputs["dataset"] = checksum_text(read_text_file(csv_path.string()));

  const auto metrics = nlohmann::json::parse(read_text_file((run / "metrics.json").string()));
  t.features = metrics.at("features").get<std::vector<std::string>>();
  std::vector<std::size_t> cols;
  for (const auto& f : t.features) {
    const auto it = std::find(t.data.data.reaction_ids.begin(), t.data.data.reaction_ids.end(), f);
    if (it == t.data.data.reaction_ids.end()) throw DomainError("train_run: feature '" + f + "' missing from dataset");
    cols.push_back(std::size_t(it - t.data.data.reaction_ids.begin()));
  }
  t.X = select_columns(t.data.data.X, cols);
  const auto sp = nlohmann::json::parse(read_text_file((run / "split.json").string()));
  t.test_rows = sp.at("test").get<std::vector<std::size_t>>();
  return t;
}

void cmd_explain(Context& ctx) {
  const auto t = load_trained(ctx);
  const std::string rows = ctx.str("rows");
  Eigen::MatrixXd X;
  if (rows == "all") X = t.X;
  else if (rows == "test") X = select_rows(t.X, t.test_rows);
  else throw UsageError("rows: expected all or test, got '" + rows + "'");

  const auto shap = tree_shap(t.ensemble, X, ctx.workers);
  const auto pred = predict(t.ensemble, X);
  double worst = 0.0;
  for (long i = 0; i < X.rows(); ++i)
    worst = std::max(worst, std::abs(shap.values.row(i).sum() + shap.base_value - pred[i]));
  const auto ranking = global_importance(shap);
  const std::size_t top = std::min(ctx.size("top_k"), ranking.size());
  std::vector<std::size_t> top_features;
  PlotData bars;
  for (std::size_t r = 0; r < top; ++r) {
    top_features.push_back(ranking[r].feature);
    bars.labels.push_back(t.features[ranking[r].feature]);
    bars.y.push_back(ranking[r].mean_abs);
  }

  ctx.open();
  ctx.write("shap_importance.csv", importance_csv(ranking, t.features));
  ctx.write("beeswarm.csv", beeswarm_csv(shap, X, top_features, t.features));
  if (!bars.y.empty())
    ctx.write("shap_importance.svg",
              render_plot(PlotKind::Bar, bars, {"mean |SHAP| by reaction", "reaction", "mean |SHAP|"}));
  ojson summary{{"rows", X.rows()},
                {"base_value", shap.base_value},
                {"background", shap.background},
                {"max_local_accuracy_error", worst}};
  ctx.write("summary.json", summary.dump(2) + "\n");
  for (std::size_t r = 0; r < std::min<std::size_t>(top, 5); ++r)
    *ctx.out << r + 1 << ' ' << t.features[ranking[r].feature] << ' ' << format_real(ranking[r].mean_abs) << '\n';
  *ctx.out << "max local accuracy error " << format_real(worst) << '\n';
  ctx.finish();
}

void cmd_ablate(Context& ctx) {
  const auto d = load_dataset_key(ctx);
  const auto cols = feature_columns(ctx, d);
  const Eigen::MatrixXd X = select_columns(d.data.X, cols);
  std::vector<std::string> features;
  for (auto c : cols) features.push_back(d.data.reaction_ids[c]);
  const std::string kind = ctx.str("kind");
  if (kind == "ffnn") throw UsageError("kind: ablation uses tree ensembles (forest or boosted)");
  const TreeParams params = tree_params(ctx, kind);
  const std::uint64_t split_seed = ctx.u64("split_seed");

  auto index_of = [&](const std::string& id) {
    const auto it = std::find(features.begin(), features.end(), id);
    if (it == features.end()) throw DomainError("exclude: '" + id + "' is not a feature");
    return std::size_t(it - features.begin());
  };

  std::vector<std::pair<std::string, std::vector<std::size_t>>> sets;
  if (!ctx.at("exclude").empty()) {
    std::vector<std::size_t> ex;
    for (const auto& id : ctx.at("exclude")) ex.push_back(index_of(id.get<std::string>()));
    sets.push_back({"given", ex});
  } else {
    // Rank on the training rows of the same split the ablation scores on.
    const auto sp = split(d.data.rows(), split_seed);
    const Eigen::MatrixXd Xtr = select_rows(X, sp.train);
    const auto ens = fit_ensemble(Xtr, select_rows(d.data.y, sp.train), params);
    const auto ranking = global_importance(tree_shap(ens, Xtr, ctx.workers));
    const std::size_t k = std::min(ctx.size("top_k"), ranking.size() - 1);
    if (k == 0) throw DomainError("ablation needs at least two features");
    std::vector<std::size_t> top, bottom;
    for (std::size_t r = 0; r < k; ++r) {
      top.push_back(ranking[r].feature);
      bottom.push_back(ranking[ranking.size() - 1 - r].feature);
    }
    sets.push_back({"top-shap", top});
    sets.push_back({"bottom-shap", bottom});
  }

  std::string csv = "set,excluded,full_test_r2,ablated_test_r2,delta_r2\n";
  ojson summary = ojson::array();
  for (const auto& [name, ex] : sets) {
    const auto r = ablate(X, d.data.y, ex, params, split_seed);
    std::vector<std::string> ids;
    for (auto j : ex) ids.push_back(features[j]);
    const double delta = r.full.r2 - r.ablated.r2;
    csv += name + "," + csv_field(join(ids, ";")) + "," + format_real(r.full.r2) + "," + format_real(r.ablated.r2) + "," +
           format_real(delta) + "\n";
    summary.push_back(ojson{{"set", name}, {"excluded", ids}, {"full_test_r2", r.full.r2},
                            {"ablated_test_r2", r.ablated.r2}, {"delta_r2", delta}});
    *ctx.out << name << " [" << join(ids, ";") << "] r2 " << format_real(r.full.r2) << " -> "
             << format_real(r.ablated.r2) << '\n';
  }
  ctx.open();
  ctx.write("ablation.csv", csv);
  ctx.write("ablation.json", summary.dump(2) + "\n");
  ctx.finish();
}

void cmd_cluster(Context& ctx) {
  const auto d = load_dataset_key(ctx);
  const auto model = dataset_model(ctx, d);
  std::vector<std::size_t> all(d.data.rows());
  std::iota(all.begin(), all.end(), 0);
  const auto [scaler, Z] = standardize_fit_apply(d.data.X, all);
  const std::string method = ctx.str("method");
  const std::uint64_t seed = ctx.u64("seed");

  Eigen::MatrixXd latent;
  std::string vae_csv;
  if (method == "vae") {
    VaeConfig vc;
    vc.train = nn_config(ctx);
    vc.beta = ctx.real("beta");
    const auto r = train_vae(Z, ctx.size("latent_dim"), vc);
    latent = encode(r.model, Z);
    vae_csv = "epoch,total,reconstruction,kl,beta\n";
    for (std::size_t e = 0; e < r.trace.size(); ++e)
      vae_csv += std::to_string(e) + "," + format_real(r.trace[e].total) + "," + format_real(r.trace[e].reconstruction) +
                 "," + format_real(r.trace[e].kl) + "," + format_real(r.trace[e].beta) + "\n";
  } else if (method == "pca") {
    latent = Z;
  } else {
    throw UsageError("method: expected vae or pca, got '" + method + "'");
  }
  const std::size_t dims = std::min<std::size_t>(2, std::size_t(latent.cols()));
  const auto p = pca(latent, dims);
  const Eigen::MatrixXd& points = p.points;

  const std::size_t n = d.data.rows();
  const std::size_t k = ctx.size("k");
  if (k < 1 || k > n) throw DomainError("k: " + std::to_string(k) + " clusters for " + std::to_string(n) + " rows");
  const std::size_t restarts = ctx.size("restarts");
  const std::size_t k_max = std::min(ctx.size("k_max"), n - 1);
  std::optional<ClusterReport> diag;
  if (ctx.size("k_min") >= 2 && k_max >= ctx.size("k_min"))
    diag = diagnostics_scan(points, ctx.size("k_min"), k_max, seed, k, restarts);
  const auto cm = kmeans(points, k, seed, restarts, 300, ctx.workers);

  const auto biomass = cluster_biomass_stats(cm.assignments, d.data.y, k);
  std::vector<std::size_t> sizes(k, 0);
  for (auto a : cm.assignments) ++sizes[a];
  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < k; ++c)
    if (biomass[c] && (!best || *biomass[c] > *biomass[*best])) best = c;

  std::vector<std::string> heat_ids;
  std::set<std::string> seen;
  for (std::size_t c = 0; c < k; ++c)
    for (const auto& id : top_upregulated(d.data, cm.assignments, c, ctx.size("top_reactions")))
      if (seen.insert(id).second) heat_ids.push_back(id);

  ctx.open();
  ctx.write("assignments.csv", assignments_csv(d.data.condition_ids, cm.assignments, points));
  if (!vae_csv.empty()) ctx.write("vae_loss.csv", vae_csv);
  std::string bcsv = "cluster,size,mean_biomass\n";
  for (std::size_t c = 0; c < k; ++c)
    bcsv += std::to_string(c) + "," + std::to_string(sizes[c]) + "," + (biomass[c] ? format_real(*biomass[c]) : "") + "\n";
  ctx.write("cluster_biomass.csv", bcsv);
  if (!heat_ids.empty()) ctx.write("heatmap.csv", heatmap_csv(cluster_mean_flux(d.data, cm.assignments, k, heat_ids), heat_ids));
  if (diag) {
    ctx.write("diagnostics.csv", diagnostics_csv(*diag));
    PlotData elbow, sil;
    for (std::size_t i = 0; i < diag->ks.size(); ++i) {
      elbow.x.push_back(double(diag->ks[i]));
      elbow.y.push_back(diag->inertia[i]);
      sil.x.push_back(double(diag->ks[i]));
      sil.y.push_back(diag->silhouette[i]);
    }
    ctx.write("elbow.svg", render_plot(PlotKind::Line, elbow, {"elbow", "k", "inertia"}));
    ctx.write("silhouette.svg", render_plot(PlotKind::Line, sil, {"silhouette", "k", "mean silhouette"}));
  }
  PlotData sc;
  for (long i = 0; i < points.rows(); ++i) {
    sc.x.push_back(points(i, 0));
    sc.y.push_back(dims > 1 ? points(i, 1) : 0.0);
  }
  ctx.write("latent.svg", render_plot(PlotKind::Scatter, sc, {"latent embedding (PCA)", "PC1", "PC2"}));

  ojson summary{{"method", method}, {"k", k}, {"inertia", cm.inertia},
                {"explained_variance_ratio", p.explained_variance_ratio}};
  summary["silhouette_best_k"] = diag ? ojson(diag->silhouette_best_k) : ojson(nullptr);
  summary["highest_biomass_cluster"] = best ? ojson(*best) : ojson(nullptr);
  if (best) {
    const auto up = top_upregulated(d.data, cm.assignments, *best, ctx.size("top_reactions"));
    summary["highest_biomass_upregulated"] = up;
    if (model) {
      const auto table = pathway_enrichment(up, *model);
      ctx.write("enrichment.csv", enrichment_csv(table));
      PlotData bars;
      for (const auto& [label, count] : table) {
        bars.labels.push_back(label);
        bars.y.push_back(double(count));
      }
      if (!bars.y.empty())
        ctx.write("enrichment.svg", render_plot(PlotKind::Bar, bars, {"enriched subsystems", "subsystem", "count"}));
    } else {
      *ctx.err << "warning: no model available, enrichment skipped\n";
    }
  }
  ctx.write("summary.json", summary.dump(2) + "\n");
  for (std::size_t c = 0; c < k; ++c)
    *ctx.out << "cluster " << c << " size " << sizes[c] << " mean biomass "
             << (biomass[c] ? format_real(*biomass[c]) : std::string("-")) << '\n';
  ctx.finish();
}

void cmd_gan(Context& ctx) {
  const auto d = load_dataset_key(ctx);
  const auto model = dataset_model(ctx, d);
  if (!model) throw UsageError("model: projection needs the metabolic model; pass --model");
  std::vector<std::string> ids;
  for (const auto& r : model->reactions()) ids.push_back(r.id);
  if (ids != d.data.reaction_ids) throw DomainError("dataset columns do not follow the model's reaction order");
  std::vector<std::size_t> all(d.data.rows());
  std::iota(all.begin(), all.end(), 0);
  const auto [scaler, Z] = standardize_fit_apply(d.data.X, all);
  const auto g = train_gan(Z, nn_config(ctx), ctx.size("noise_dim"));
  const auto gen = generate_and_project(g.model, scaler, *model, ctx.size("n"), ctx.u64("seed"));

  std::string samples = "sample";
  for (const auto& id : ids) samples += "," + csv_field(id);
  samples += "\n";
  for (long i = 0; i < gen.samples.rows(); ++i) {
    samples += std::to_string(i);
    for (long j = 0; j < gen.samples.cols(); ++j) samples += "," + format_real(gen.samples(i, j));
    samples += "\n";
  }
  std::string proj = "sample,status,residual_before,residual_after,l1_distance\n";
  double worst = 0.0;
  std::map<std::string, std::size_t> statuses;
  for (std::size_t i = 0; i < gen.report.size(); ++i) {
    const auto& r = gen.report[i];
    proj += std::to_string(i) + "," + r.status + "," + format_real(r.residual_before) + "," +
            format_real(r.residual_after) + "," + format_real(r.distance) + "\n";
    worst = std::max(worst, r.residual_after);
    ++statuses[r.status];
  }
  std::string loss = "epoch,discriminator_loss,generator_loss\n";
  for (std::size_t e = 0; e < g.trace.size(); ++e)
    loss += std::to_string(e) + "," + format_real(g.trace[e].discriminator_loss) + "," +
            format_real(g.trace[e].generator_loss) + "\n";

  // mean |flux| per subsystem over generated samples
  std::map<std::string, std::pair<double, std::size_t>> by_sub;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const auto& sub = model->reaction(j).subsystem;
    auto& acc = by_sub[sub && !sub->empty() ? *sub : "unannotated"];
    acc.first += gen.samples.rows() ? gen.samples.col(long(j)).cwiseAbs().mean() : 0.0;
    ++acc.second;
  }
  std::vector<std::pair<std::string, double>> pathway;
  for (const auto& [sub, acc] : by_sub) pathway.push_back({sub, acc.first / double(acc.second)});
  std::stable_sort(pathway.begin(), pathway.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::string pcsv = "subsystem,mean_abs_flux\n";
  PlotData bars;
  for (std::size_t i = 0; i < pathway.size(); ++i) {
    pcsv += csv_field(pathway[i].first) + "," + format_real(pathway[i].second) + "\n";
    if (i < 10) {
      bars.labels.push_back(pathway[i].first);
      bars.y.push_back(pathway[i].second);
    }
  }

  ctx.open();
  ctx.write("generated.csv", samples);
  ctx.write("projection.csv", proj);
  ctx.write("gan_loss.csv", loss);
  ctx.write("pathway_flux.csv", pcsv);
  if (!bars.y.empty() && gen.samples.rows() > 0)
    ctx.write("pathway_flux.svg", render_plot(PlotKind::Bar, bars, {"generated flux by subsystem", "subsystem", "mean |flux|"}));
  ojson st = ojson::object();
  for (const auto& [s, c] : statuses) st[s] = c;
  ojson summary{{"samples", gen.samples.rows()}, {"variance_statistic", gen.variance_statistic},
                {"max_residual_after", worst}, {"statuses", st}};
  ctx.write("summary.json", summary.dump(2) + "\n");
  *ctx.out << "samples " << gen.samples.rows() << " variance " << format_real(gen.variance_statistic)
           << " max residual " << format_real(worst) << '\n';
  ctx.finish();
}

void cmd_perturb(Context& ctx) {
  const auto model = load_model(ctx);
  const auto exchanges = resolve_exchange_key(ctx, model);
  const auto cond = condition_from(ctx);
  const auto opts = fba_options(ctx);
  const double factor = ctx.real("factor");

  std::vector<std::string> knock, over;
  for (const auto& j : ctx.at("knockout")) knock.push_back(j.get<std::string>());
  for (const auto& j : ctx.at("overexpress")) over.push_back(j.get<std::string>());
  if (!ctx.str("from_explain").empty()) {
    const fs::path run = prior_run(ctx, "from_explain", "explain");
    const std::string text = read_text_file((run / "shap_importance.csv").string());
    ctx.inputs["shap_importance"] = checksum_text(text);
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    for (std::size_t taken = 0; taken < ctx.size("top_k") && std::getline(in, line); ++taken) {
      const auto f = split_csv_line(line);
      if (f.size() < 3) throw DomainError("from_explain: malformed shap_importance.csv line: " + line);
      over.push_back(f[2]);
    }
  }
  if (ctx.flag("scan_knockouts"))
    for (const auto& r : model.reactions()) knock.push_back(r.id);
  if (knock.empty() && over.empty())
    throw UsageError("nothing to perturb: pass --knockout, --overexpress, --from-explain or --scan-knockouts");

  const auto base = fba_solve(model, cond, exchanges, opts);
  struct Row {
    std::string kind, id;
    double factor;
    FbaResult r;
  };
  std::vector<Row> rows{{"baseline", "", 1.0, base}};
  for (const auto& id : knock) rows.push_back({"knockout", id, 0.0, fba_solve(knockout(model, id), cond, exchanges, opts)});
  for (const auto& id : over)
    rows.push_back({"overexpress", id, factor, fba_solve(overexpress(model, id, factor), cond, exchanges, opts)});
  if (over.size() > 1) {
    MetabolicModel all = model;
    for (const auto& id : over) all = overexpress(all, id, factor);
    rows.push_back({"overexpress-set", join(over, ";"), factor, fba_solve(all, cond, exchanges, opts)});
  }

  std::string csv = "perturbation,reaction_id,factor,status,biomass,delta_vs_baseline\n";
  PlotData bars;
  for (const auto& row : rows) {
    const bool ok = row.r.optimal();
    csv += row.kind + "," + csv_field(row.id) + "," + format_real(row.factor) + "," + to_string(row.r.status) + "," +
           (ok ? format_real(row.r.biomass_flux) : "") + "," +
           (ok && base.optimal() ? format_real(row.r.biomass_flux - base.biomass_flux) : "") + "\n";
    if (ok && rows.size() <= 60) {
      bars.labels.push_back(row.kind == "baseline" ? "baseline" : row.kind + ":" + row.id);
      bars.y.push_back(row.r.biomass_flux);
    }
  }
  ctx.open();
  ctx.write("perturbation.csv", csv);
  if (!bars.y.empty())
    ctx.write("perturbation.svg", render_plot(PlotKind::Bar, bars, {"biomass under perturbation", "", "biomass flux"}));
  *ctx.out << "baseline biomass " << (base.optimal() ? display(base.biomass_flux) : std::string(to_string(base.status)))
           << '\n';
  for (std::size_t i = 1; i < rows.size() && i <= 20; ++i)
    *ctx.out << rows[i].kind << ' ' << rows[i].id << ' '
             << (rows[i].r.optimal() ? display(rows[i].r.biomass_flux) : std::string(to_string(rows[i].r.status))) << '\n';
  ctx.finish();
}

void cmd_oxygen(Context& ctx) {
  const auto model = load_model(ctx);
  const auto exchanges = resolve_exchange_key(ctx, model);
  std::vector<double> values;
  if (!ctx.at("values").empty()) {
    for (const auto& v : ctx.at("values")) values.push_back(v.get<double>());
  } else {
    const double start = ctx.real("start"), stop = ctx.real("stop"), step = ctx.real("step");
    if (!(step > 0.0) || start > stop) throw UsageError("start/stop/step: need start <= stop and step > 0");
    const auto count = std::size_t(std::floor((stop - start) / step + 1e-9)) + 1;
    for (std::size_t i = 0; i < count; ++i) values.push_back(start + step * double(i));
    ctx.cfg["values"] = values;
  }
  const auto curve = oxygen_sweep(model, values, exchanges, fba_options(ctx));
  std::optional<double> ref;
  for (const auto& p : curve)
    if (p.biomass_flux) {
      ref = p.biomass_flux;
      break;
    }
  std::string csv = "o2_lb,biomass,normalized_biomass\n";
  PlotData line;
  bool monotone = true;
  std::optional<double> prev;
  for (const auto& p : curve) {
    const bool norm = p.biomass_flux && ref && *ref != 0.0;
    csv += format_real(p.uptake_lb) + "," + (p.biomass_flux ? format_real(*p.biomass_flux) : "") + "," +
           (norm ? format_real(*p.biomass_flux / *ref) : "") + "\n";
    if (p.biomass_flux) {
      line.x.push_back(p.uptake_lb);
      line.y.push_back(*p.biomass_flux);
      if (prev && *p.biomass_flux > *prev + 1e-9) monotone = false;
      prev = p.biomass_flux;
    }
  }
  ctx.open();
  ctx.write("oxygen_curve.csv", csv);
  if (!line.y.empty())
    ctx.write("oxygen_curve.svg", render_plot(PlotKind::Line, line, {"biomass vs oxygen uptake bound", "O2 lower bound", "biomass flux"}));
  ctx.write("summary.json", ojson{{"points", curve.size()}, {"non_increasing", monotone}}.dump(2) + "\n");
  for (const auto& p : curve)
    *ctx.out << format_real(p.uptake_lb) << ' ' << (p.biomass_flux ? display(*p.biomass_flux) : std::string("infeasible"))
             << '\n';
  *ctx.out << "non-increasing " << (monotone ? "yes" : "no") << '\n';
  ctx.finish();
}

void cmd_optimize(Context& ctx) {
  const auto model = load_model(ctx);
  const auto exchanges = resolve_exchange_key(ctx, model);
  if (ctx.at("ranges").empty()) {
    const auto def = default_nutrient_box();
    ojson r = ojson::object();
    for (std::size_t i = 0; i < def.dim(); ++i)
      if (exchanges.contains(def.names[i])) r[def.names[i]] = ojson::array({def.bounds[i].first, def.bounds[i].second});
    ctx.cfg["ranges"] = r;
  }
  SearchBox box;
  for (const char* n : kNutrients)
    if (ctx.at("ranges").contains(n)) {
      box.names.push_back(n);
      const auto& v = ctx.at("ranges")[n];
      box.bounds.push_back({v[0].get<double>(), v[1].get<double>()});
    }
  for (const auto& [k, v] : ctx.at("ranges").items())
    if (std::find(box.names.begin(), box.names.end(), k) == box.names.end())
      throw UsageError("ranges: unknown nutrient '" + k + "'");
  if (box.dim() == 0) throw UsageError("ranges: no nutrient with a mapped exchange to optimize");

  const auto eval = fba_evaluator(model, box, exchanges, fba_options(ctx));
  OptimizeConfig oc;
  oc.n_init = ctx.size("n_init");
  oc.n_iter = ctx.size("n_iter");
  oc.seed = ctx.u64("seed");
  oc.xi = ctx.real("xi");
  const auto trace = optimize(eval, box, oc);

  const auto base = fba_solve(model, ConditionSpec{}, exchanges, fba_options(ctx));
  Eigen::VectorXd corner(long(box.dim()));
  for (std::size_t i = 0; i < box.dim(); ++i) corner[long(i)] = box.bounds[i].second;
  const auto corner_value = eval(corner);

  ojson result = ojson::object();
  const auto best = trace.best_value();
  result["best_biomass"] = best ? ojson(*best) : ojson(nullptr);
  ojson at = ojson::object();
  if (best)
    for (std::size_t i = 0; i < box.dim(); ++i) at[box.names[i]] = trace.best_x()[long(i)];
  result["best_condition"] = at;
  result["baseline_model_bounds"] = base.optimal() ? ojson(base.biomass_flux) : ojson(nullptr);
  result["baseline_box_upper_corner"] = corner_value ? ojson(*corner_value) : ojson(nullptr);
  result["fold_vs_box_corner"] =
      best && corner_value && *corner_value > 0 ? ojson(*best / *corner_value) : ojson(nullptr);
  result["evaluations"] = trace.points.size();

  PlotData line;
  for (std::size_t i = 0; i < trace.points.size(); ++i)
    if (std::isfinite(trace.points[i].incumbent)) {
      line.x.push_back(double(i));
      line.y.push_back(trace.points[i].incumbent);
    }
  ctx.open();
  ctx.write("trace.csv", trace_csv(trace, box));
  ctx.write("result.json", result.dump(2) + "\n");
  if (!line.y.empty())
    ctx.write("convergence.svg", render_plot(PlotKind::Line, line, {"incumbent biomass", "evaluation", "biomass flux"}));
  if (best) {
    *ctx.out << "best biomass " << display(*best);
    for (std::size_t i = 0; i < box.dim(); ++i) *ctx.out << ' ' << box.names[i] << '=' << format_real(trace.best_x()[long(i)]);
    *ctx.out << '\n';
  } else {
    *ctx.out << "no feasible point found\n";
  }
  if (corner_value) *ctx.out << "box corner baseline " << display(*corner_value) << '\n';
  ctx.finish();
}

void cmd_report(Context& ctx) {
  const fs::path index_path = ctx.out_root / "index.json";
  if (!fs::exists(index_path)) throw DomainError("no runs under " + ctx.out_root.string());
  const auto index = ojson::parse(read_text_file(index_path.string()));
  const auto latest = index.value("latest", ojson::object());
  std::vector<std::pair<std::string, std::string>> table;
  std::string md = "# fluxml report\n\n";
  auto load = [&](const std::string& cmd, const std::string& file) -> std::optional<nlohmann::json> {
    if (!latest.contains(cmd)) return std::nullopt;
    const fs::path p = ctx.out_root / latest[cmd].get<std::string>() / file;
    if (!fs::exists(p)) return std::nullopt;
    ctx.inputs[cmd + "/" + file] = checksum_text(read_text_file(p.string()));
    return nlohmann::json::parse(read_text_file(p.string()));
  };
  auto add = [&](const std::string& k, const nlohmann::json& v) {
    if (v.is_null()) return;
    table.push_back({k, v.is_number() ? format_real(v.get<double>()) : v.dump()});
  };
  if (auto m = load("train", "metrics.json")) {
    const std::string kind = (*m)["kind"];
    add(kind + "_test_r2", (*m)["test"]["r2"]);
    add(kind + "_test_mse", (*m)["test"]["mse"]);
    if (!(*m)["cv"].is_null()) {
      add(kind + "_cv_r2_mean", (*m)["cv"]["r2_mean"]);
      add(kind + "_cv_r2_std", (*m)["cv"]["r2_std"]);
    }
    add("dataset_rows", (*m)["rows"]);
    add("feature_count", nlohmann::json((*m)["features"].size()));
  }
  if (auto s = load("explain", "summary.json")) add("shap_max_local_accuracy_error", (*s)["max_local_accuracy_error"]);
  if (auto s = load("cluster", "summary.json")) {
    add("cluster_k", (*s)["k"]);
    add("cluster_silhouette_best_k", (*s)["silhouette_best_k"]);
  }
  if (auto r = load("optimize", "result.json")) {
    add("optimized_biomass", (*r)["best_biomass"]);
    add("baseline_model_bounds", (*r)["baseline_model_bounds"]);
    add("fold_vs_box_corner", (*r)["fold_vs_box_corner"]);
  }
  if (auto s = load("oxygen-curve", "summary.json")) add("oxygen_curve_non_increasing", (*s)["non_increasing"]);
  if (auto s = load("gan", "summary.json")) {
    add("gan_variance_statistic", (*s)["variance_statistic"]);
    add("gan_max_residual_after", (*s)["max_residual_after"]);
  }
  if (auto a = load("ablate", "ablation.json"))
    for (const auto& row : *a) add("ablation_delta_r2_" + row["set"].get<std::string>(), row["delta_r2"]);

  std::string csv = "metric,value\n";
  md += "| metric | value |\n|---|---|\n";
  for (const auto& [k, v] : table) {
    csv += csv_field(k) + "," + csv_field(v) + "\n";
    md += "| " + k + " | " + v + " |\n";
  }
  md += "\n## Runs\n\n";
  for (const auto& [cmd, dir] : latest.items()) {
    md += "- " + cmd + ": `" + dir.get<std::string>() + "`";
    std::vector<std::string> svgs;
    const fs::path rd = ctx.out_root / dir.get<std::string>();
    if (fs::is_directory(rd))
      for (const auto& e : fs::directory_iterator(rd))
        if (e.path().extension() == ".svg") svgs.push_back(e.path().filename().string());
    std::sort(svgs.begin(), svgs.end());
    if (!svgs.empty()) md += " (" + join(svgs, ", ") + ")";
    md += "\n";
  }
  ctx.open();
  ctx.write("summary.csv", csv);
  ctx.write("report.md", md);
  for (const auto& [k, v] : table) *ctx.out << k << ' ' << v << '\n';
  ctx.finish();
}

// ---------------------------------------------------------------- command table

std::vector<Opt> model_opts() {
  return {{"model", Kind::String, "", "model file (native JSON or SBML)"},
          {"exchanges", Kind::Map, ojson::object(), "nutrient=exchange_id mapping"}};
}

std::vector<Opt> condition_opts() {
  return {{"glucose", Kind::Real, nullptr, "glucose uptake lower bound"},
          {"oxygen", Kind::Real, nullptr, "oxygen uptake lower bound"},
          {"ammonium", Kind::Real, nullptr, "ammonium uptake lower bound"}};
}

std::vector<Opt> tree_opts() {
  return {{"kind", Kind::String, "forest", "forest, boosted or ffnn"},
          {"seed", Kind::Integer, 0, "model seed"},
          {"split_seed", Kind::Integer, 0, "train/validation/test split seed"},
          {"exclude_objective", Kind::Flag, false, "drop the objective reaction's column from X"},
          {"objective", Kind::String, "", "objective reaction id when the dataset does not record it"},
          {"n_trees", Kind::Integer, 200, "forest size"},
          {"max_depth", Kind::Real, nullptr, "tree depth limit (0 unlimited; default forest 0, boosted 6)"},
          {"min_samples_leaf", Kind::Integer, 1, "minimum rows per leaf"},
          {"max_features", Kind::Integer, 0, "features per split (0 means R/3)"},
          {"rounds", Kind::Integer, 200, "boosting rounds"},
          {"learning_rate", Kind::Real, 0.1, "boosting shrinkage"},
          {"lambda", Kind::Real, 1.0, "boosting L2 leaf penalty"},
          {"subsample", Kind::Real, 1.0, "boosting row fraction per round"}};
}

std::vector<Opt> nn_opts(std::size_t epochs) {
  return {{"epochs", Kind::Integer, epochs, "training epochs"},
          {"batch_size", Kind::Integer, 64, "minibatch size"},
          {"nn_learning_rate", Kind::Real, 1e-3, "Adam learning rate"}};
}

template <typename... V>
std::vector<Opt> cat(V... parts) {
  std::vector<Opt> out;
  (out.insert(out.end(), parts.begin(), parts.end()), ...);
  return out;
}

const std::vector<Command>& commands() {
  static const std::vector<Command> table = {
      {"fba", "solve one FBA problem",
       cat(model_opts(), condition_opts(),
           std::vector<Opt>{{"knockout", Kind::List, ojson::array(), "reactions to knock out"},
                            {"overexpress", Kind::List, ojson::array(), "reactions to overexpress"},
                            {"factor", Kind::Real, 2.0, "overexpression factor"},
                            {"parsimonious", Kind::Flag, false, "minimize total flux at optimal biomass"}}),
       cmd_fba},
      {"sweep", "generate a flux dataset over sampled conditions",
       cat(model_opts(), std::vector<Opt>{{"n", Kind::Integer, 2000, "number of sampled conditions"},
                                          {"seed", Kind::Integer, 0, "sampling seed"},
                                          {"sampler", Kind::String, "uniform", "uniform, grid or lhs"},
                                          {"ranges", Kind::Ranges, ojson::object(), "nutrient=lo:hi uptake range"},
                                          {"parsimonious", Kind::Flag, false, "minimize total flux at optimal biomass"}}),
       cmd_sweep},
      {"train", "fit a biomass regressor to a flux dataset",
       cat(std::vector<Opt>{{"dataset", Kind::String, "", "sweep run directory or dataset CSV (default: latest sweep)"},
                            {"cv_folds", Kind::Integer, 5, "cross-validation folds (0 disables)"},
                            {"grid", Kind::Flag, false, "grid search on the validation split"},
                            {"hidden", Kind::List, ojson::array({"128", "64"}), "FFNN hidden widths"},
                            {"dropout", Kind::Real, 0.1, "FFNN dropout rate"}},
           tree_opts(), nn_opts(100)),
       cmd_train},
      {"explain", "TreeSHAP attributions for a trained ensemble",
       {{"train_run", Kind::String, "", "train run directory (default: latest train)"},
        {"rows", Kind::String, "all", "all or test"},
        {"top_k", Kind::Integer, 20, "features in the beeswarm table and bar chart"}},
       cmd_explain},
      {"cluster", "latent embedding, k-means and cluster summaries",
       cat(std::vector<Opt>{{"dataset", Kind::String, "", "sweep run directory or dataset CSV (default: latest sweep)"},
                            {"model", Kind::String, "", "model for enrichment (default: the sweep's model)"},
                            {"method", Kind::String, "vae", "vae or pca"},
                            {"latent_dim", Kind::Integer, 2, "VAE latent dimension"},
                            {"beta", Kind::Real, 1.0, "VAE KL weight"},
                            {"k", Kind::Integer, 4, "clusters"},
                            {"k_min", Kind::Integer, 2, "diagnostics scan start"},
                            {"k_max", Kind::Integer, 10, "diagnostics scan end"},
                            {"restarts", Kind::Integer, 10, "k-means restarts"},
                            {"top_reactions", Kind::Integer, 10, "upregulated reactions per cluster"},
                            {"seed", Kind::Integer, 0, "seed"}},
           nn_opts(100)),
       cmd_cluster},
      {"perturb", "knockout and overexpression studies",
       cat(model_opts(), condition_opts(),
           std::vector<Opt>{{"knockout", Kind::List, ojson::array(), "reactions to knock out one at a time"},
                            {"overexpress", Kind::List, ojson::array(), "reactions to overexpress one at a time"},
                            {"factor", Kind::Real, 2.0, "overexpression factor"},
                            {"from_explain", Kind::String, "", "explain run (or 'latest') supplying top SHAP reactions"},
                            {"top_k", Kind::Integer, 10, "reactions taken from the explain run"},
                            {"scan_knockouts", Kind::Flag, false, "knock out every reaction"},
                            {"parsimonious", Kind::Flag, false, "minimize total flux at optimal biomass"}}),
       cmd_perturb},
      {"oxygen-curve", "biomass over a descending range of oxygen uptake bounds",
       cat(model_opts(), std::vector<Opt>{{"start", Kind::Real, -20.0, "most permissive bound"},
                                          {"stop", Kind::Real, -2.0, "most restrictive bound"},
                                          {"step", Kind::Real, 1.0, "bound increment"},
                                          {"values", Kind::RealList, ojson::array(), "explicit bounds, in order"}}),
       cmd_oxygen},
      {"optimize", "Bayesian optimization of nutrient uptake bounds",
       cat(model_opts(), std::vector<Opt>{{"ranges", Kind::Ranges, ojson::object(), "nutrient=lo:hi search range"},
                                          {"n_init", Kind::Integer, 8, "initial design points"},
                                          {"n_iter", Kind::Integer, 40, "EI iterations"},
                                          {"xi", Kind::Real, 0.01, "EI exploration margin"},
                                          {"seed", Kind::Integer, 0, "seed"}}),
       cmd_optimize},
      {"gan", "train a GAN on fluxes and project samples onto the feasible set",
       cat(std::vector<Opt>{{"dataset", Kind::String, "", "sweep run directory or dataset CSV (default: latest sweep)"},
                            {"model", Kind::String, "", "model for projection (default: the sweep's model)"},
                            {"n", Kind::Integer, 10, "samples to generate"},
                            {"noise_dim", Kind::Integer, 32, "generator noise dimension"},
                            {"seed", Kind::Integer, 0, "seed"}},
           nn_opts(200)),
       cmd_gan},
      {"ablate", "retrain without top SHAP-ranked reactions",
       cat(std::vector<Opt>{{"dataset", Kind::String, "", "sweep run directory or dataset CSV (default: latest sweep)"},
                            {"top_k", Kind::Integer, 1, "features removed per set"},
                            {"exclude", Kind::List, ojson::array(), "explicit reactions to remove"}},
           tree_opts()),
       cmd_ablate},
      {"report", "summary table of the latest runs", {}, cmd_report},
  };
  return table;
}

const std::vector<Opt> kCommon = {{"out", Kind::String, "runs", "artifact root directory"},
                                  {"workers", Kind::Integer, 1, "worker threads"}};

bool known_anywhere(const std::string& key) {
  for (const auto& o : kCommon)
    if (o.key == key) return true;
  for (const auto& c : commands()) {
    if (c.name == key) return true;
    for (const auto& o : c.opts)
      if (o.key == key) return true;
  }
  return false;
}

const Opt* find_opt(const Command& c, const std::string& key) {
  for (const auto& o : c.opts)
    if (o.key == key) return &o;
  for (const auto& o : kCommon)
    if (o.key == key) return &o;
  return nullptr;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fluxml: flux-balance analysis and machine-learning pipeline", "fluxml"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  struct Raw {
    std::string scalar;
    std::vector<std::string> list;
    bool flag = false;
  };
  std::map<std::string, std::map<std::string, Raw>> raw;
  std::map<std::string, std::string> config_path;
  std::map<std::string, CLI::App*> subs;

  for (const auto& c : commands()) {
    auto* sub = app.add_subcommand(c.name, c.help);
    subs[c.name] = sub;
    sub->add_option("--config", config_path[c.name], "JSON config file");
    auto& store = raw[c.name];
    for (const auto* group : {&kCommon, &c.opts})
      for (const auto& o : *group) {
        auto& slot = store[o.key];
        std::string help = o.help;
        if (!o.def.is_null() && !(o.def.is_string() && o.def.get<std::string>().empty()) &&
            !(o.def.is_structured() && o.def.empty()))
          help += " [" + (o.def.is_string() ? o.def.get<std::string>() : o.def.dump()) + "]";
        switch (o.kind) {
          case Kind::Flag: sub->add_flag(flag_name(o.key), slot.flag, help); break;
          case Kind::List:
          case Kind::RealList:
          case Kind::Map:
          case Kind::Ranges: sub->add_option(flag_name(o.key), slot.list, help); break;
          default: sub->add_option(flag_name(o.key), slot.scalar, help); break;
        }
      }
  }

  if (!args.empty() && !args[0].empty() && args[0][0] != '-' && !subs.count(args[0])) {
    err << "error: unknown subcommand '" << args[0] << "'\n" << app.help();
    return 2;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return 2;
  }

  const Command* cmd = nullptr;
  for (const auto& c : commands())
    if (subs[c.name]->parsed()) cmd = &c;
  if (!cmd) {
    err << app.help();
    return 2;
  }
  CLI::App* sub = subs[cmd->name];

  Context ctx;
  ctx.cmd = cmd;
  ctx.out = &out;
  ctx.err = &err;
  try {
    ojson cfg = ojson::object();
    for (const auto* group : {&kCommon, &cmd->opts})
      for (const auto& o : *group) cfg[o.key] = o.def;

    const std::string& cpath = config_path[cmd->name];
    if (!cpath.empty()) {
      if (!fs::exists(cpath)) throw UsageError("config: file not found: " + cpath);
      ojson file;
      try {
        file = ojson::parse(read_text_file(cpath));
      } catch (const nlohmann::json::parse_error& e) {
        throw UsageError("config: " + cpath + ": " + e.what());
      }
      if (!file.is_object()) throw UsageError("config: " + cpath + ": top level must be an object");
      for (const auto& [k, v] : file.items()) {
        if (!known_anywhere(k)) throw UsageError("config key '" + k + "': unknown key");
        if (k == cmd->name) continue;
        bool is_section = false;
        for (const auto& c : commands()) is_section = is_section || c.name == k;
        if (is_section) continue;
        if (const Opt* o = find_opt(*cmd, k)) cfg[k] = from_json(*o, v, "config key '" + k + "'");
      }
      if (file.contains(cmd->name)) {
        const auto& section = file[cmd->name];
        if (!section.is_object()) throw UsageError("config key '" + cmd->name + "': expected an object");
        for (const auto& [k, v] : section.items()) {
          const Opt* o = find_opt(*cmd, k);
          if (!o) throw UsageError("config key '" + cmd->name + "." + k + "': unknown key for " + cmd->name);
          cfg[k] = from_json(*o, v, "config key '" + cmd->name + "." + k + "'");
        }
      }
    }
    for (const auto* group : {&kCommon, &cmd->opts})
      for (const auto& o : *group)
        if (sub->count(flag_name(o.key)) > 0) {
          const auto& r = raw[cmd->name][o.key];
          cfg[o.key] = from_flag(o, r.scalar, r.list, r.flag);
        }

    ctx.out_root = cfg["out"].get<std::string>();
    ctx.workers = std::max<std::size_t>(1, cfg["workers"].get<std::size_t>());
    cfg.erase("out");
    cfg.erase("workers");
    if (!cpath.empty()) ctx.inputs["config_file"] = checksum_text(read_text_file(cpath));
    ctx.cfg = std::move(cfg);
    cmd->run(ctx);
    return 0;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << cmd->name << ": " << e.what() << '\n';
    return 1;
  }
}

}  // namespace fluxml
