#include <doctest.h>

#include <limits>
#include <string>

#include "fluxml/io.hpp"
#include "fluxml/model.hpp"

using namespace fluxml;

namespace {

std::string fixture(const std::string& name) { return read_text_file(std::string(FLUXML_DATA_DIR) + "/" + name); }

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

template <typename F>
ModelError expect_model_error(F&& f) {
  try {
    f();
  } catch (const ModelError& e) {
    return e;
  }
  FAIL("expected ModelError");
  throw 0;
}

}  // namespace

TEST_CASE("toy3 fixture parses") {
  const auto model = parse_native_model(fixture("toy3.json"));
  CHECK(model.metabolites().size() == 2);
  CHECK(model.reactions().size() == 3);
  CHECK(model.objective_reaction_id() == "R_BIO");
  CHECK(model.objective_index() == 2);
  CHECK(model.exchange_hints().at("glucose") == "EX_A");
  CHECK(model == toy3_model());
}

TEST_CASE("semantic errors name the offending id") {
  const auto text = fixture("toy3.json");

  SUBCASE("lb above ub") {
    const auto bad = replace(text, R"("lb": 0, "ub": 1000, "objective": 0, "subsystem": "Conversion")",
                             R"("lb": 5, "ub": 1, "objective": 0, "subsystem": "Conversion")");
    const auto e = expect_model_error([&] { parse_native_model(bad); });
    CHECK(e.kind() == ModelError::Kind::Semantic);
    CHECK(e.offending() == "R_AB");
  }
  SUBCASE("undeclared metabolite") {
    const auto bad = replace(text, R"({"B": -1})", R"({"Z": -1})");
    const auto e = expect_model_error([&] { parse_native_model(bad); });
    CHECK(e.offending() == "Z");
    CHECK(std::string(e.what()).find("'Z'") != std::string::npos);
  }
  SUBCASE("duplicate reaction id") {
    const auto bad = replace(text, R"("id": "R_AB")", R"("id": "EX_A")");
    CHECK(expect_model_error([&] { parse_native_model(bad); }).offending() == "EX_A");
  }
  SUBCASE("missing objective reaction") {
    const auto bad = replace(text, R"("objective_reaction": "R_BIO")", R"("objective_reaction": "R_NONE")");
    CHECK(expect_model_error([&] { parse_native_model(bad); }).offending() == "R_NONE");
  }
  SUBCASE("second reaction with an objective coefficient") {
    const auto bad = replace(text, R"("ub": 1000, "objective": 0, "subsystem": "Conversion")",
                             R"("ub": 1000, "objective": 2, "subsystem": "Conversion")");
    CHECK(expect_model_error([&] { parse_native_model(bad); }).offending() == "R_AB");
  }
}

TEST_CASE("syntax errors carry a position") {
  const auto e = expect_model_error([] { parse_native_model("{\"metabolites\": [,]}"); });
  CHECK(e.kind() == ModelError::Kind::Syntax);
  REQUIRE(e.position().has_value());
  CHECK(*e.position() > 0);
}

TEST_CASE("native serialization round-trips") {
  const auto model = toy3_model();
  const auto text = serialize_native_model(model);
  const auto again = parse_native_model(text);
  CHECK(again == model);
  CHECK(serialize_native_model(again) == text);

  // infinite bounds survive as strings
  const auto open = model.with_bounds(1, -std::numeric_limits<double>::infinity(),
                                      std::numeric_limits<double>::infinity());
  CHECK(parse_native_model(serialize_native_model(open)) == open);
}

TEST_CASE("stoichiometric matrix of toy3") {
  const auto s = stoichiometric_matrix(toy3_model());
  CHECK(s.rows == 2);
  CHECK(s.cols == 3);
  const double expected[2][3] = {{-1, -1, 0}, {0, 1, -1}};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(s.at(i, j) == expected[i][j]);
  const auto& rx = toy3_model().reactions();
  for (std::size_t j = 0; j < 3; ++j) CHECK(s.column_size(j) == rx[j].stoichiometry.size());
}

TEST_CASE("single reaction A -> B") {
  MetabolicModel m({{"A", "", "c"}, {"B", "", "c"}}, {{"R", "", {{"A", -1}, {"B", 1}}, 0, 1, 1, {}}}, "R");
  const auto s = stoichiometric_matrix(m);
  REQUIRE(s.entries.size() == 2);
  CHECK(s.entries[0] == SparseStoichMatrix::Entry{0, 0, -1.0});
  CHECK(s.entries[1] == SparseStoichMatrix::Entry{1, 0, 1.0});
}

TEST_CASE("objective defaults to coefficient 1") {
  MetabolicModel m({{"A", "", "c"}}, {{"R", "", {{"A", -1}}, 0, 1, 0, {}}}, "R");
  CHECK(m.reaction(0).objective_coefficient == 1.0);
}

TEST_CASE("SBML subset import") {
  SUBCASE("minimal fixture") {
    const auto imported = import_sbml_subset(fixture("minimal.xml"));
    const auto& m = imported.model;
    REQUIRE(m.reactions().size() == 1);
    CHECK(m.metabolites().size() == 1);
    CHECK(m.reaction(0).lower_bound == -10.0);
    CHECK(m.reaction(0).upper_bound == 0.0);
    CHECK(m.objective_reaction_id() == "EX_S");
    // kineticLaw and listOfEvents are reported, not imported
    CHECK(imported.warnings.size() == 2);
  }
  SUBCASE("missing objective") {
    const auto e = expect_model_error([] { import_sbml_subset(fixture("minimal_no_objective.xml")); });
    CHECK(std::string(e.what()).find("objective") != std::string::npos);
  }
  SUBCASE("missing bounds") {
    auto text = replace(fixture("minimal.xml"), R"(fbc:upperFluxBound="ub")", "");
    CHECK(expect_model_error([&] { import_sbml_subset(text); }).offending() == "EX_S");
  }
  SUBCASE("malformed XML") {
    const auto e = expect_model_error([] { import_sbml_subset("<sbml><model></sbml>"); });
    CHECK(e.kind() == ModelError::Kind::Syntax);
  }
  SUBCASE("format independence") {
    auto imported = import_sbml_subset(fixture("toy3.xml")).model;
    const auto reparsed = parse_native_model(serialize_native_model(imported));
    CHECK(reparsed == imported);
    // toy3.json additionally carries exchange hints
    const MetabolicModel with_hints(imported.metabolites(), imported.reactions(), imported.objective_reaction_id(),
                                    {{"glucose", "EX_A"}});
    CHECK(with_hints == toy3_model());
    CHECK(model_checksum(with_hints) == model_checksum(toy3_model()));
  }
}

TEST_CASE("load_model_file dispatches on content") {
  const auto dir = std::string(FLUXML_DATA_DIR);
  CHECK(load_model_file(dir + "/toy3.json") == toy3_model());
  std::vector<std::string> warnings;
  CHECK(load_model_file(dir + "/toy3.xml", &warnings).reactions().size() == 3);
}
