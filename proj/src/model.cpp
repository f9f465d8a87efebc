#include "fluxml/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace fluxml {

using nlohmann::json;

namespace {

std::string describe(ModelError::Kind kind, const std::string& message,
                     std::optional<std::size_t> position) {
  std::string out = kind == ModelError::Kind::Syntax ? "syntax error" : "semantic error";
  if (position) out += " at " + std::to_string(*position);
  return out + ": " + message;
}

[[noreturn]] void semantic(const std::string& id, const std::string& message) {
  throw ModelError(ModelError::Kind::Semantic, id, message);
}

double bound_from_json(const json& value, const std::string& reaction_id, const char* key) {
  if (value.is_number()) return value.get<double>();
  if (value.is_string()) {
    const auto s = value.get<std::string>();
    if (s == "inf" || s == "+inf" || s == "Infinity") return std::numeric_limits<double>::infinity();
    if (s == "-inf" || s == "-Infinity") return -std::numeric_limits<double>::infinity();
  }
  semantic(reaction_id, std::string("reaction '") + reaction_id + "' has invalid " + key);
}

json bound_to_json(double value) {
  if (std::isinf(value)) return value > 0 ? json("inf") : json("-inf");
  return json(value);
}

std::string string_field(const json& obj, const char* key, const std::string& fallback = {}) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  if (!it->is_string()) semantic(fallback, std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

ModelError::ModelError(Kind kind, std::string offending, const std::string& message,
                       std::optional<std::size_t> position)
    : std::runtime_error(describe(kind, message, position)),
      kind_(kind),
      offending_(std::move(offending)),
      position_(position) {}

MetabolicModel::MetabolicModel(std::vector<Metabolite> metabolites,
                               std::vector<Reaction> reactions,
                               std::string objective_reaction_id,
                               std::map<std::string, std::string> exchange_hints)
    : metabolites_(std::move(metabolites)),
      reactions_(std::move(reactions)),
      objective_id_(std::move(objective_reaction_id)),
      exchange_hints_(std::move(exchange_hints)) {
  validate_and_index();
}

void MetabolicModel::validate_and_index() {
  metabolite_lookup_.clear();
  reaction_lookup_.clear();
  for (std::size_t i = 0; i < metabolites_.size(); ++i) {
    const auto& m = metabolites_[i];
    if (m.id.empty()) semantic("", "metabolite " + std::to_string(i) + " has an empty id");
    if (!metabolite_lookup_.emplace(m.id, i).second)
      semantic(m.id, "duplicate metabolite id '" + m.id + "'");
  }
  for (std::size_t j = 0; j < reactions_.size(); ++j) {
    const auto& r = reactions_[j];
    if (r.id.empty()) semantic("", "reaction " + std::to_string(j) + " has an empty id");
    if (!reaction_lookup_.emplace(r.id, j).second)
      semantic(r.id, "duplicate reaction id '" + r.id + "'");
    if (std::isnan(r.lower_bound) || std::isnan(r.upper_bound) || r.lower_bound > r.upper_bound)
      semantic(r.id, "reaction '" + r.id + "' has lower bound above upper bound");
    if (r.stoichiometry.empty()) semantic(r.id, "reaction '" + r.id + "' has empty stoichiometry");
    for (const auto& [met, coeff] : r.stoichiometry) {
      if (!metabolite_lookup_.contains(met))
        semantic(met, "reaction '" + r.id + "' references undeclared metabolite '" + met + "'");
      if (!std::isfinite(coeff))
        semantic(r.id, "reaction '" + r.id + "' has a non-finite coefficient");
    }
  }
  auto it = reaction_lookup_.find(objective_id_);
  if (it == reaction_lookup_.end())
    semantic(objective_id_, "objective reaction '" + objective_id_ + "' does not exist");
  objective_index_ = it->second;

  std::size_t nonzero = 0;
  for (const auto& r : reactions_) {
    if (r.objective_coefficient == 0.0) continue;
    if (r.id != objective_id_)
      semantic(r.id, "reaction '" + r.id + "' carries an objective coefficient but is not the objective");
    ++nonzero;
  }
  if (nonzero == 0) reactions_[objective_index_].objective_coefficient = 1.0;

  for (const auto& [name, id] : exchange_hints_) {
    if (!reaction_lookup_.contains(id))
      semantic(id, "exchange '" + name + "' maps to unknown reaction '" + id + "'");
  }
}

std::optional<std::size_t> MetabolicModel::find_reaction(std::string_view id) const {
  auto it = reaction_lookup_.find(std::string(id));
  if (it == reaction_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> MetabolicModel::find_metabolite(std::string_view id) const {
  auto it = metabolite_lookup_.find(std::string(id));
  if (it == metabolite_lookup_.end()) return std::nullopt;
  return it->second;
}

std::size_t MetabolicModel::reaction_index(std::string_view id) const {
  if (auto j = find_reaction(id)) return *j;
  semantic(std::string(id), "unknown reaction '" + std::string(id) + "'");
}

MetabolicModel MetabolicModel::with_bounds(std::size_t j, double lb, double ub) const {
  MetabolicModel copy = *this;
  auto& r = copy.reactions_.at(j);
  if (std::isnan(lb) || std::isnan(ub) || lb > ub)
    semantic(r.id, "reaction '" + r.id + "' has lower bound above upper bound");
  r.lower_bound = lb;
  r.upper_bound = ub;
  return copy;
}

std::vector<double> MetabolicModel::lower_bounds() const {
  std::vector<double> out;
  out.reserve(reactions_.size());
  for (const auto& r : reactions_) out.push_back(r.lower_bound);
  return out;
}

std::vector<double> MetabolicModel::upper_bounds() const {
  std::vector<double> out;
  out.reserve(reactions_.size());
  for (const auto& r : reactions_) out.push_back(r.upper_bound);
  return out;
}

std::vector<double> MetabolicModel::objective_vector() const {
  std::vector<double> out;
  out.reserve(reactions_.size());
  for (const auto& r : reactions_) out.push_back(r.objective_coefficient);
  return out;
}

bool MetabolicModel::operator==(const MetabolicModel& other) const {
  return metabolites_ == other.metabolites_ && reactions_ == other.reactions_ &&
         objective_id_ == other.objective_id_ && exchange_hints_ == other.exchange_hints_;
}

double SparseStoichMatrix::at(std::size_t i, std::size_t j) const {
  for (std::size_t k = col_start[j]; k < col_start[j + 1]; ++k)
    if (entries[k].row == i) return entries[k].value;
  return 0.0;
}

std::vector<double> SparseStoichMatrix::multiply(const std::vector<double>& v) const {
  std::vector<double> out(rows, 0.0);
  for (const auto& e : entries) out[e.row] += e.value * v[e.col];
  return out;
}

SparseStoichMatrix SparseStoichMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                                     std::vector<Entry> triplets) {
  std::sort(triplets.begin(), triplets.end(), [](const Entry& a, const Entry& b) {
    return a.col != b.col ? a.col < b.col : a.row < b.row;
  });
  SparseStoichMatrix s;
  s.rows = rows;
  s.cols = cols;
  s.col_start.assign(cols + 1, 0);
  for (const auto& e : triplets) {
    if (e.row >= rows || e.col >= cols) throw std::out_of_range("stoichiometric entry out of range");
    if (!s.entries.empty() && s.entries.back().row == e.row && s.entries.back().col == e.col)
      throw std::invalid_argument("duplicate stoichiometric entry");
    s.entries.push_back(e);
    ++s.col_start[e.col + 1];
  }
  for (std::size_t j = 0; j < cols; ++j) s.col_start[j + 1] += s.col_start[j];
  return s;
}

SparseStoichMatrix stoichiometric_matrix(const MetabolicModel& model) {
  std::vector<SparseStoichMatrix::Entry> triplets;
  const auto& reactions = model.reactions();
  for (std::size_t j = 0; j < reactions.size(); ++j)
    for (const auto& [met, coeff] : reactions[j].stoichiometry)
      triplets.push_back({*model.find_metabolite(met), j, coeff});
  return SparseStoichMatrix::from_triplets(model.metabolites().size(), reactions.size(),
                                           std::move(triplets));
}

MetabolicModel parse_native_model(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ModelError(ModelError::Kind::Syntax, "", e.what(), e.byte);
  }
  if (!doc.is_object()) throw ModelError(ModelError::Kind::Syntax, "", "model must be a JSON object", 0);
  for (const char* key : {"metabolites", "reactions", "objective_reaction"})
    if (!doc.contains(key)) semantic("", std::string("missing top-level key '") + key + "'");

  std::vector<Metabolite> metabolites;
  for (const auto& m : doc.at("metabolites")) {
    if (!m.is_object()) semantic("", "metabolite entries must be objects");
    metabolites.push_back({string_field(m, "id"), string_field(m, "name"), string_field(m, "compartment")});
  }

  std::vector<Reaction> reactions;
  for (const auto& r : doc.at("reactions")) {
    if (!r.is_object()) semantic("", "reaction entries must be objects");
    Reaction rx;
    rx.id = string_field(r, "id");
    rx.name = string_field(r, "name");
    if (!r.contains("lb") || !r.contains("ub")) semantic(rx.id, "reaction '" + rx.id + "' is missing bounds");
    rx.lower_bound = bound_from_json(r.at("lb"), rx.id, "lb");
    rx.upper_bound = bound_from_json(r.at("ub"), rx.id, "ub");
    if (auto it = r.find("objective"); it != r.end() && !it->is_null()) {
      if (!it->is_number()) semantic(rx.id, "reaction '" + rx.id + "' has a non-numeric objective");
      rx.objective_coefficient = it->get<double>();
    }
    if (auto it = r.find("subsystem"); it != r.end() && it->is_string()) rx.subsystem = it->get<std::string>();
    if (auto it = r.find("stoichiometry"); it != r.end() && it->is_object()) {
      for (const auto& [met, coeff] : it->items()) {
        if (!coeff.is_number()) semantic(rx.id, "reaction '" + rx.id + "' has a non-numeric coefficient");
        rx.stoichiometry[met] = coeff.get<double>();
      }
    }
    reactions.push_back(std::move(rx));
  }

  std::map<std::string, std::string> hints;
  if (auto it = doc.find("exchanges"); it != doc.end() && it->is_object())
    for (const auto& [name, id] : it->items()) hints[name] = id.get<std::string>();

  if (!doc.at("objective_reaction").is_string()) semantic("", "objective_reaction must be a string");
  return MetabolicModel(std::move(metabolites), std::move(reactions),
                        doc.at("objective_reaction").get<std::string>(), std::move(hints));
}

std::string serialize_native_model(const MetabolicModel& model) {
  // ordered_json keeps declaration order so files diff cleanly
  nlohmann::ordered_json doc;
  doc["metabolites"] = nlohmann::ordered_json::array();
  for (const auto& m : model.metabolites())
    doc["metabolites"].push_back({{"id", m.id}, {"name", m.name}, {"compartment", m.compartment}});
  doc["reactions"] = nlohmann::ordered_json::array();
  for (const auto& r : model.reactions()) {
    nlohmann::ordered_json rx;
    rx["id"] = r.id;
    rx["name"] = r.name;
    nlohmann::ordered_json stoich = nlohmann::ordered_json::object();
    for (const auto& [met, coeff] : r.stoichiometry) stoich[met] = coeff;
    rx["stoichiometry"] = stoich;
    rx["lb"] = bound_to_json(r.lower_bound);
    rx["ub"] = bound_to_json(r.upper_bound);
    rx["objective"] = r.objective_coefficient;
    rx["subsystem"] = r.subsystem ? nlohmann::ordered_json(*r.subsystem) : nlohmann::ordered_json(nullptr);
    doc["reactions"].push_back(std::move(rx));
  }
  doc["objective_reaction"] = model.objective_reaction_id();
  if (!model.exchange_hints().empty()) {
    nlohmann::ordered_json ex = nlohmann::ordered_json::object();
    for (const auto& [name, id] : model.exchange_hints()) ex[name] = id;
    doc["exchanges"] = ex;
  }
  return doc.dump(2) + "\n";
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string model_checksum(const MetabolicModel& model) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx",
                static_cast<unsigned long long>(fnv1a64(serialize_native_model(model))));
  return buf;
}

MetabolicModel load_model_file(const std::string& path, std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n\xef\xbb\xbf");
  if (first != std::string::npos && text[first] == '<') {
    auto imported = import_sbml_subset(text);
    if (warnings) *warnings = std::move(imported.warnings);
    return std::move(imported.model);
  }
  return parse_native_model(text);
}

MetabolicModel toy3_model() {
  std::vector<Metabolite> mets{{"A", "metabolite A", "c"}, {"B", "metabolite B", "c"}};
  std::vector<Reaction> rxns;
  rxns.push_back({"EX_A", "A exchange", {{"A", -1.0}}, -10.0, 0.0, 0.0, "Exchange reaction"});
  rxns.push_back({"R_AB", "A to B", {{"A", -1.0}, {"B", 1.0}}, 0.0, 1000.0, 0.0, "Conversion"});
  rxns.push_back({"R_BIO", "biomass", {{"B", -1.0}}, 0.0, 1000.0, 1.0, "Biomass"});
  return MetabolicModel(std::move(mets), std::move(rxns), "R_BIO", {{"glucose", "EX_A"}});
}

}  // namespace fluxml
