// Subset importer for SBML level 3 with the fbc (flux bounds and objectives)
// and groups packages. Anything outside that subset is reported in the
// warning list and skipped.

#include <cstdlib>
#include <limits>
#include <set>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "fluxml/model.hpp"

namespace fluxml {

namespace pt = boost::property_tree;

namespace {

std::string_view local_name(std::string_view qualified) {
  const auto colon = qualified.rfind(':');
  return colon == std::string_view::npos ? qualified : qualified.substr(colon + 1);
}

const pt::ptree* child(const pt::ptree& node, std::string_view name) {
  for (const auto& [key, sub] : node)
    if (local_name(key) == name) return &sub;
  return nullptr;
}

std::vector<const pt::ptree*> children(const pt::ptree& node, std::string_view name) {
  std::vector<const pt::ptree*> out;
  for (const auto& [key, sub] : node)
    if (local_name(key) == name) out.push_back(&sub);
  return out;
}

std::optional<std::string> attr(const pt::ptree& node, std::string_view name) {
  const auto* attrs = child(node, "<xmlattr>");
  if (!attrs) return std::nullopt;
  for (const auto& [key, value] : *attrs)
    if (local_name(key) == name) return value.data();
  return std::nullopt;
}

std::optional<double> parse_real(const std::string& text) {
  const char* begin = text.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin) return std::nullopt;
  return v;
}

[[noreturn]] void fail(const std::string& id, const std::string& message) {
  throw ModelError(ModelError::Kind::Semantic, id, message);
}

}  // namespace

SbmlImport import_sbml_subset(std::string_view text) {
  pt::ptree doc;
  try {
    std::istringstream in{std::string(text)};
    pt::read_xml(in, doc);
  } catch (const pt::xml_parser_error& e) {
    throw ModelError(ModelError::Kind::Syntax, "", "malformed XML: " + e.message(), e.line());
  }

  std::vector<std::string> warnings;
  const pt::ptree* sbml = child(doc, "sbml");
  if (!sbml) throw ModelError(ModelError::Kind::Syntax, "", "missing <sbml> root element", 0);
  const pt::ptree* model = child(*sbml, "model");
  if (!model) throw ModelError(ModelError::Kind::Syntax, "", "missing <model> element", 0);

  static const std::set<std::string_view> handled{
      "<xmlattr>",         "<xmlcomment>",    "listOfSpecies", "listOfReactions", "listOfParameters",
      "listOfObjectives",  "listOfGroups",    "listOfCompartments", "notes", "annotation",
      "listOfUnitDefinitions", "listOfGeneProducts"};
  for (const auto& [key, sub] : *model)
    if (!handled.contains(local_name(key))) warnings.push_back("skipped element <" + key + ">");

  std::map<std::string, double> parameters;
  if (const auto* list = child(*model, "listOfParameters"))
    for (const auto* p : children(*list, "parameter")) {
      auto id = attr(*p, "id");
      auto value = attr(*p, "value");
      if (!id || !value) continue;
      if (auto v = parse_real(*value)) parameters[*id] = *v;
    }

  std::vector<Metabolite> metabolites;
  if (const auto* list = child(*model, "listOfSpecies"))
    for (const auto* s : children(*list, "species")) {
      auto id = attr(*s, "id");
      if (!id) fail("", "species without id");
      metabolites.push_back({*id, attr(*s, "name").value_or(""), attr(*s, "compartment").value_or("")});
    }

  std::map<std::string, std::string> subsystem_of;
  if (const auto* list = child(*model, "listOfGroups"))
    for (const auto* g : children(*list, "group")) {
      const std::string label = attr(*g, "name").value_or(attr(*g, "id").value_or(""));
      if (const auto* members = child(*g, "listOfMembers"))
        for (const auto* m : children(*members, "member"))
          if (auto ref = attr(*m, "idRef")) subsystem_of.emplace(*ref, label);
    }

  auto resolve_bound = [&](const std::string& rid, const std::optional<std::string>& ref) -> double {
    if (!ref) fail(rid, "reaction '" + rid + "' is missing flux bounds");
    if (auto it = parameters.find(*ref); it != parameters.end()) return it->second;
    if (auto v = parse_real(*ref)) return *v;
    fail(rid, "reaction '" + rid + "' references unknown bound parameter '" + *ref + "'");
  };

  std::vector<Reaction> reactions;
  if (const auto* list = child(*model, "listOfReactions"))
    for (const auto* r : children(*list, "reaction")) {
      Reaction rx;
      rx.id = attr(*r, "id").value_or("");
      rx.name = attr(*r, "name").value_or("");
      rx.lower_bound = resolve_bound(rx.id, attr(*r, "lowerFluxBound"));
      rx.upper_bound = resolve_bound(rx.id, attr(*r, "upperFluxBound"));
      for (auto [list_name, sign] : {std::pair{"listOfReactants", -1.0}, std::pair{"listOfProducts", 1.0}}) {
        const auto* refs = child(*r, list_name);
        if (!refs) continue;
        for (const auto* sr : children(*refs, "speciesReference")) {
          auto species = attr(*sr, "species");
          if (!species) fail(rx.id, "reaction '" + rx.id + "' has a speciesReference without species");
          double coeff = 1.0;
          if (auto st = attr(*sr, "stoichiometry"))
            if (auto v = parse_real(*st)) coeff = *v;
          rx.stoichiometry[*species] += sign * coeff;
        }
      }
      for (auto it = rx.stoichiometry.begin(); it != rx.stoichiometry.end();) {
        if (it->second == 0.0) {
          warnings.push_back("reaction '" + rx.id + "': metabolite '" + it->first +
                             "' cancels on both sides and was dropped");
          it = rx.stoichiometry.erase(it);
        } else {
          ++it;
        }
      }
      if (child(*r, "listOfModifiers")) warnings.push_back("reaction '" + rx.id + "': modifiers skipped");
      if (child(*r, "kineticLaw")) warnings.push_back("reaction '" + rx.id + "': kineticLaw skipped");
      if (auto it = subsystem_of.find(rx.id); it != subsystem_of.end()) rx.subsystem = it->second;
      reactions.push_back(std::move(rx));
    }

  std::optional<std::string> objective_id;
  double objective_coeff = 0.0;
  if (const auto* list = child(*model, "listOfObjectives")) {
    const auto active = attr(*list, "activeObjective");
    for (const auto* obj : children(*list, "objective")) {
      if (active && attr(*obj, "id") != active) continue;
      const auto type = attr(*obj, "type").value_or("maximize");
      const double sense = type == "minimize" ? -1.0 : 1.0;
      if (type == "minimize") warnings.push_back("minimize objective imported as negated maximize");
      if (const auto* fluxes = child(*obj, "listOfFluxObjectives"))
        for (const auto* fo : children(*fluxes, "fluxObjective")) {
          auto rid = attr(*fo, "reaction");
          double c = 1.0;
          if (auto cs = attr(*fo, "coefficient"))
            if (auto v = parse_real(*cs)) c = *v;
          if (!rid || c == 0.0) continue;
          if (objective_id) {
            warnings.push_back("additional flux objective on '" + *rid + "' ignored");
            continue;
          }
          objective_id = *rid;
          objective_coeff = sense * c;
        }
      break;
    }
  }
  if (!objective_id) fail("", "SBML model has no flux objective");

  for (auto& rx : reactions)
    if (rx.id == *objective_id) rx.objective_coefficient = objective_coeff;

  return {MetabolicModel(std::move(metabolites), std::move(reactions), *objective_id), std::move(warnings)};
}

}  // namespace fluxml
