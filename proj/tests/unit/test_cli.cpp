#include <doctest.h>

#include <filesystem>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "fluxml/cli.hpp"
#include "fluxml/io.hpp"

using namespace fluxml;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

const fs::path kScratch = fs::temp_directory_path() / ("fluxml_cli_" + std::to_string(::getpid()));

struct ScratchCleanup {
  ~ScratchCleanup() {
    std::error_code ec;
    fs::remove_all(kScratch, ec);
  }
} cleanup;

fs::path scratch(const std::string& name) {
  const fs::path p = kScratch / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string toy3() { return std::string(FLUXML_DATA_DIR) + "/toy3.json"; }
std::string aerobic() { return std::string(FLUXML_DATA_DIR) + "/toy_aerobic.json"; }

fs::path artifacts(const Outcome& o) {
  const auto p = o.out.rfind("artifacts: ");
  REQUIRE(p != std::string::npos);
  std::string line = o.out.substr(p + 11);
  return line.substr(0, line.find('\n'));
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_text_file(p.string())); }

}  // namespace

TEST_CASE("fba on toy3 prints the analytic optimum") {
  const auto root = scratch("fba");
  const auto o = run({"fba", "--model", toy3(), "--glucose", "-10", "--out", root.string()});
  REQUIRE(o.code == 0);
  CHECK(o.out.find("status optimal\n") != std::string::npos);
  CHECK(o.out.find("biomass 10.0\n") != std::string::npos);
  const auto dir = artifacts(o);
  CHECK(dir.parent_path() == root);
  CHECK(dir.filename().string().rfind("fba-", 0) == 0);
  const auto meta = read_json(dir / "metadata.json");
  CHECK(meta["command"] == "fba");
  CHECK(meta["tool_version"].get<std::string>().size() > 0);
  CHECK(meta["model_checksum"].get<std::string>().rfind("fnv1a64:", 0) == 0);
  CHECK(meta["config"]["glucose"].get<double>() == -10.0);
  CHECK(fs::path(meta["config"]["model"].get<std::string>()).is_absolute());
  CHECK(meta["elapsed_seconds"].get<double>() >= 0.0);
  CHECK(read_text_file((dir / "fluxes.csv").string()) == "reaction_id,flux\nEX_A,-10\nR_AB,10\nR_BIO,10\n");

  const auto ko = run({"fba", "--model", toy3(), "--knockout", "R_AB", "--out", root.string()});
  REQUIRE(ko.code == 0);
  CHECK(ko.out.find("biomass 0.0\n") != std::string::npos);
}

TEST_CASE("sweep then train gives a high test R2") {
  const auto root = scratch("pipeline");
  const auto s = run({"sweep", "--model", toy3(), "--n", "100", "--seed", "7", "--out", root.string()});
  REQUIRE(s.code == 0);
  const auto t = run({"train", "--kind", "forest", "--out", root.string()});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  const auto metrics = read_json(artifacts(t) / "metrics.json");
  CHECK(metrics["test"]["r2"].get<double>() >= 0.95);
  CHECK(metrics["cv"]["folds"] == 5);
  CHECK(fs::exists(artifacts(t) / "parity.svg"));
  const auto pred = read_text_file((artifacts(t) / "predictions.csv").string());
  CHECK(pred.rfind("condition_id,split,y,y_pred\n", 0) == 0);

  const auto e = run({"explain", "--out", root.string()});
  REQUIRE_MESSAGE(e.code == 0, e.err);
  const auto summary = read_json(artifacts(e) / "summary.json");
  CHECK(summary["max_local_accuracy_error"].get<double>() <= 1e-6);

  const auto r = run({"report", "--out", root.string()});
  REQUIRE(r.code == 0);
  const auto table = read_text_file((artifacts(r) / "summary.csv").string());
  CHECK(table.find("forest_test_r2,") != std::string::npos);
}

TEST_CASE("usage errors exit 2") {
  const auto root = scratch("usage");
  auto o = run({"frobnicate"});
  CHECK(o.code == 2);
  CHECK(o.err.find("unknown subcommand 'frobnicate'") != std::string::npos);
  CHECK(o.err.find("Subcommands:") != std::string::npos);
  CHECK(run({}).code == 2);
  CHECK(run({"fba", "--no-such-flag"}).code == 2);
  o = run({"sweep", "--model", toy3(), "--n", "many", "--out", root.string()});
  CHECK(o.code == 2);
  CHECK(o.err.find("--n") != std::string::npos);
  o = run({"fba", "--out", root.string()});
  CHECK(o.code == 2);
  CHECK(o.err.find("model") != std::string::npos);
  o = run({"perturb", "--model", toy3(), "--out", root.string()});
  CHECK(o.code == 2);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"train", "--help"}).code == 0);
}

TEST_CASE("config errors name the offending key") {
  const auto root = scratch("config_errors");
  write_text_file((root / "unknown.json").string(), R"({"glucose": -5, "colour": "red"})");
  auto o = run({"fba", "--model", toy3(), "--config", (root / "unknown.json").string(), "--out", root.string()});
  CHECK(o.code == 2);
  CHECK(o.err.find("colour") != std::string::npos);

  write_text_file((root / "section.json").string(), R"({"fba": {"n_trees": 3}})");
  o = run({"fba", "--model", toy3(), "--config", (root / "section.json").string(), "--out", root.string()});
  CHECK(o.code == 2);
  CHECK(o.err.find("fba.n_trees") != std::string::npos);

  write_text_file((root / "type.json").string(), R"({"glucose": "lots"})");
  o = run({"fba", "--model", toy3(), "--config", (root / "type.json").string(), "--out", root.string()});
  CHECK(o.code == 2);
  CHECK(o.err.find("glucose") != std::string::npos);

  write_text_file((root / "broken.json").string(), "{");
  CHECK(run({"fba", "--model", toy3(), "--config", (root / "broken.json").string()}).code == 2);
}

TEST_CASE("domain errors exit 1") {
  const auto root = scratch("domain");
  auto o = run({"fba", "--model", (root / "missing.json").string(), "--out", root.string()});
  CHECK(o.code == 1);
  CHECK(o.err.find("missing.json") != std::string::npos);
  o = run({"oxygen-curve", "--model", toy3(), "--out", root.string()});
  CHECK(o.code == 1);
  CHECK(o.err.find("oxygen") != std::string::npos);
  o = run({"train", "--out", (root / "empty").string()});
  CHECK(o.code == 1);
  CHECK(o.err.find("dataset") != std::string::npos);
}

TEST_CASE("flags override the config section, which overrides top-level keys") {
  const auto root = scratch("precedence");
  const auto cfg = (root / "run.json").string();
  write_text_file(cfg, R"({"glucose": -4, "n": 50, "fba": {"glucose": -6}})");
  auto biomass = [&](std::vector<std::string> extra) {
    std::vector<std::string> args{"fba", "--model", toy3(), "--out", root.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto o = run(args);
    REQUIRE_MESSAGE(o.code == 0, o.err);
    return read_json(artifacts(o) / "result.json")["biomass"].get<double>();
  };
  CHECK(biomass({}) == doctest::Approx(10.0));
  write_text_file((root / "top.json").string(), R"({"glucose": -4})");
  CHECK(biomass({"--config", (root / "top.json").string()}) == doctest::Approx(4.0));
  CHECK(biomass({"--config", cfg}) == doctest::Approx(6.0));
  CHECK(biomass({"--config", cfg, "--glucose", "-3"}) == doctest::Approx(3.0));
}

TEST_CASE("artifact directories are content-addressed") {
  const auto root = scratch("hash");
  const auto a = run({"fba", "--model", toy3(), "--glucose", "-5", "--out", root.string()});
  const auto b = run({"fba", "--model", toy3(), "--glucose", "-5", "--out", root.string(), "--workers", "3"});
  const auto c = run({"fba", "--model", toy3(), "--glucose", "-6", "--out", root.string()});
  CHECK(artifacts(a) == artifacts(b));
  CHECK(artifacts(a) != artifacts(c));
  const auto index = read_json(root / "index.json");
  CHECK(index["runs"].size() == 2);
  CHECK(index["latest"]["fba"] == artifacts(c).filename().string());
}

TEST_CASE("sweep CSVs do not depend on the worker count") {
  const auto r1 = scratch("workers1"), r4 = scratch("workers4");
  const auto a = run({"sweep", "--model", aerobic(), "--n", "120", "--seed", "3", "--workers", "1", "--out", r1.string()});
  const auto b = run({"sweep", "--model", aerobic(), "--n", "120", "--seed", "3", "--workers", "4", "--out", r4.string()});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(artifacts(a).filename() == artifacts(b).filename());
  CHECK(read_text_file((artifacts(a) / "dataset.csv").string()) == read_text_file((artifacts(b) / "dataset.csv").string()));
}

TEST_CASE("oxygen curve, optimize and perturb on the aerobic model") {
  const auto root = scratch("aerobic");
  const auto ox = run({"oxygen-curve", "--model", aerobic(), "--out", root.string()});
  REQUIRE_MESSAGE(ox.code == 0, ox.err);
  CHECK(ox.out.find("non-increasing yes") != std::string::npos);
  const auto curve = read_text_file((artifacts(ox) / "oxygen_curve.csv").string());
  CHECK(curve.rfind("o2_lb,biomass,normalized_biomass\n-20,", 0) == 0);

  const auto opt = run({"optimize", "--model", toy3(), "--ranges", "glucose=-10:-1", "--n-iter", "20", "--out",
                        root.string()});
  REQUIRE_MESSAGE(opt.code == 0, opt.err);
  const auto res = read_json(artifacts(opt) / "result.json");
  CHECK(res["best_biomass"].get<double>() == doctest::Approx(10.0).epsilon(1e-7));
  CHECK(res["baseline_box_upper_corner"].get<double>() == doctest::Approx(1.0));
  CHECK(res["fold_vs_box_corner"].get<double>() == doctest::Approx(10.0).epsilon(1e-7));

  const auto p = run({"perturb", "--model", aerobic(), "--knockout", "RESP,FERM", "--overexpress", "GLYC", "--out",
                      root.string()});
  REQUIRE_MESSAGE(p.code == 0, p.err);
  const auto csv = read_text_file((artifacts(p) / "perturbation.csv").string());
  CHECK(csv.find("knockout,RESP,0,optimal,") != std::string::npos);
  CHECK(csv.find("overexpress,GLYC,2,") != std::string::npos);
}
