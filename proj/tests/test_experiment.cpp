// SPDX-License-Identifier: Apache-2.0
// Experiment layer and command-line tool: config parsing with field-path
// errors, artifact layout, exit codes, flag/env precedence, subcommand
// composition, and byte-level determinism of summaries and reports.
#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pathflow/experiment.hpp"

namespace fs = std::filesystem;
using namespace pathflow;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string cli_bin() {
  const char* v = std::getenv("PATHFLOW_BIN");
  return v ? v : "";
}

std::string config_path(const std::string& name) {
  const char* v = std::getenv("PATHFLOW_CONFIGS");
  return (fs::path(v ? v : "configs") / name).string();
}

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() /
               ("pathflow_test_" + std::to_string(::getpid()) + "_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

json load_json(const fs::path& p) {
  std::ifstream is(p);
  return json::parse(is);
}

struct Cmd {
  int code = -1;
  std::string out, err;
};

// Runs the installed binary through the shell; env is a prefix like
// "PATHFLOW_OUTPUT_DIR=/tmp/x".
Cmd run_cli(const std::string& args, const std::string& env = "") {
  static int seq = 0;
  fs::path o = fs::temp_directory_path() /
               ("pf_cap_" + std::to_string(::getpid()) + "_" + std::to_string(seq++));
  fs::path e = o;
  e += ".err";
  std::string cmd = env + (env.empty() ? "" : " ") + cli_bin() + " " + args + " >" +
                    o.string() + " 2>" + e.string();
  int status = std::system(cmd.c_str());
  Cmd r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  fs::remove(o);
  fs::remove(e);
  return r;
}

// Minimal valid config used as a mutation base for parse-error tests.
json base_config() {
  return json{
      {"architecture", json::array({json{{"type", "fc"},
                                         {"in", 2},
                                         {"out", 1},
                                         {"activation", "linear"}}})},
      {"dataset", {{"n", 4}, {"d", 2}, {"margin", 0.3}, {"seed", 1}}},
      {"loss", "logistic"},
      {"optimizer", {{"kind", "euler"}, {"eta", 1e-3}, {"steps", 10}}},
  };
}

}  // namespace

TEST_CASE("config parsing: errors carry the offending field path") {
  CHECK_NOTHROW(parse_experiment_config(base_config()));

  json bad_eta = base_config();
  bad_eta["optimizer"]["eta"] = -1.0;
  CHECK_THROWS_WITH(parse_experiment_config(bad_eta), ContainsSubstring("optimizer.eta"));

  json gd_eta = base_config();
  gd_eta["optimizer"] = {{"kind", "gd_adaptive"}, {"eta", 0.1}, {"steps", 5}};
  CHECK_THROWS_WITH(parse_experiment_config(gd_eta), ContainsSubstring("optimizer.eta"));

  json no_seed = base_config();
  no_seed["dataset"].erase("seed");
  CHECK_THROWS_WITH(parse_experiment_config(no_seed), ContainsSubstring("dataset.seed"));

  json unknown = base_config();
  unknown["bogus_field"] = 1;
  CHECK_THROWS_WITH(parse_experiment_config(unknown), ContainsSubstring("bogus_field"));

  json bad_loss = base_config();
  bad_loss["loss"] = "hinge";
  CHECK_THROWS_WITH(parse_experiment_config(bad_loss), ContainsSubstring("loss"));

  json bad_block = base_config();
  bad_block["architecture"][0]["type"] = "gru";
  CHECK_THROWS_WITH(parse_experiment_config(bad_block),
                    ContainsSubstring("architecture[0].type"));

  json bad_stride = base_config();
  bad_stride["log_stride"] = 0;
  CHECK_THROWS_WITH(parse_experiment_config(bad_stride), ContainsSubstring("log_stride"));
}

TEST_CASE("config validation: manifest references are checked against the graph") {
  json j = base_config();
  j["checks"] = json::array({json{{"id", "a"}, {"kind", "vertex"}, {"vertex", 2}},
                             json{{"id", "a"}, {"kind", "vertex"}, {"vertex", 2}}});
  auto cfg = parse_experiment_config(j);
  auto g = build_architecture(cfg.architecture);
  CHECK_THROWS_WITH(validate_references(cfg, g), ContainsSubstring("checks[1].id"));

  j["checks"] = json::array({json{{"id", "a"}, {"kind", "vertex"}, {"vertex", 99}}});
  cfg = parse_experiment_config(j);
  CHECK_THROWS_WITH(validate_references(cfg, g), ContainsSubstring("checks[0].vertex"));

  j["checks"] = json::array(
      {json{{"id", "a"}, {"kind", "layer"}, {"first", "b0_fc"}, {"second", "nope"}}});
  cfg = parse_experiment_config(j);
  CHECK_THROWS_WITH(validate_references(cfg, g), ContainsSubstring("checks[0].second"));

  j["checks"] = json::array();
  j["spectra"] = {{"blocks", json::array({5})}};
  cfg = parse_experiment_config(j);
  CHECK_THROWS_WITH(validate_references(cfg, g), ContainsSubstring("spectra.blocks[0]"));
}

TEST_CASE("run subcommand: clean invariance config produces the full artifact set") {
  fs::path dir = fresh_dir("run_clean");
  auto r = run_cli("run -c " + config_path("euler_chain_invariance.json"),
                   "PATHFLOW_OUTPUT_DIR=" + dir.string());
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK_THAT(r.out, ContainsSubstring("summary.json"));

  for (const char* f : {"graph.json", "trajectory.csv", "trajectory.bin", "checks.json",
                        "spectra.json", "summary.json"})
    CHECK(fs::exists(dir / f));
  for (const char* c : {"hidden_vertex_balance", "hidden_pair_balance", "layer_balance_01",
                        "gram_balance_01", "gram_balance_12"})
    CHECK(fs::exists(dir / "checks" / (std::string(c) + ".csv")));
  for (int b : {0, 1, 2})
    CHECK(fs::exists(dir / "spectra" / ("block" + std::to_string(b) + ".csv")));

  json s = load_json(dir / "summary.json");
  CHECK(s.at("exit_code") == 0);
  CHECK(s.at("optimizer") == "euler");
  CHECK(s.at("loss") == "logistic");
  CHECK(s.at("steps") == 2000);
  REQUIRE(s.at("checks").size() == 5);
  for (const json& c : s.at("checks")) {
    CHECK(c.at("verdict") == "invariant");
    CHECK(c.at("matched") == true);
    CHECK(c.at("max_abs").get<double>() <=
          c.at("tol").get<double>() * c.at("norm_scale").get<double>());
  }
  // Risk must have gone down under gradient flow on a separable problem.
  CHECK(s.at("risk_final").get<double>() < s.at("risk_initial").get<double>());
}

TEST_CASE("run subcommand: drifting full-Gram probe exits 1 and says which check") {
  fs::path dir = fresh_dir("run_drift");
  auto r = run_cli("run -c " + config_path("relu_probe_drift.json"),
                   "PATHFLOW_OUTPUT_DIR=" + dir.string());
  REQUIRE(r.code == 1);
  CHECK_THAT(r.out, ContainsSubstring("gram_full: drifting"));

  json s = load_json(dir / "summary.json");
  CHECK(s.at("exit_code") == 1);
  REQUIRE(s.at("checks").size() == 2);
  for (const json& c : s.at("checks")) {
    if (c.at("id") == "gram_active") {
      CHECK(c.at("verdict") == "invariant");
      CHECK(c.at("matched") == true);
    } else {
      CHECK(c.at("id") == "gram_full");
      CHECK(c.at("verdict") == "drifting");
      CHECK(c.at("matched") == false);
      // The full-Gram defect dwarfs the active-pattern tolerance.
      CHECK(c.at("detail").at("contrast") == true);
    }
  }
}

TEST_CASE("cli: malformed json and bad references exit 2 with pointed messages") {
  fs::path dir = fresh_dir("cfg_errors");
  fs::path broken = dir / "broken.json";
  std::ofstream(broken) << "{ this is not json";
  auto r1 = run_cli("run -c " + broken.string());
  CHECK(r1.code == 2);
  CHECK_THAT(r1.err, ContainsSubstring("parse"));

  json j = load_json(config_path("euler_chain_invariance.json"));
  j["checks"][0]["vertex"] = 99;
  fs::path badref = dir / "badref.json";
  std::ofstream(badref) << j.dump(2) << "\n";
  auto r2 = run_cli("run -c " + badref.string(),
                    "PATHFLOW_OUTPUT_DIR=" + (dir / "out").string());
  CHECK(r2.code == 2);
  CHECK_THAT(r2.err, ContainsSubstring("checks[0].vertex"));

  auto r3 = run_cli("report " + (dir / "nothing_here").string());
  CHECK(r3.code == 2);
  CHECK_THAT(r3.err, ContainsSubstring("missing artifact"));
}

TEST_CASE("determinism: two runs of the same config agree byte for byte") {
  fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  const std::string c = config_path("linear_fc3_lowrank.json");
  auto ra = run_cli("run -c " + c, "PATHFLOW_OUTPUT_DIR=" + a.string());
  auto rb = run_cli("run -c " + c, "PATHFLOW_OUTPUT_DIR=" + b.string());
  REQUIRE(ra.code == 0);
  REQUIRE(rb.code == 0);
  CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
  CHECK(slurp(a / "trajectory.bin") == slurp(b / "trajectory.bin"));

  // The adaptive run on this config lands deep in the rich-regime spectrum.
  json s = load_json(a / "summary.json");
  for (const json& blk : s.at("spectra").at("blocks"))
    CHECK(blk.at("ratio_last").get<double>() >= 0.99);
  CHECK(s.at("checks")[0].at("id") == "gd_update_ledger");
  CHECK(s.at("checks")[0].at("verdict") == "invariant");
}

TEST_CASE("subcommands compose: train then check-invariants then spectra equals run") {
  fs::path piece = fresh_dir("compose_pieces"), whole = fresh_dir("compose_whole");
  const std::string c = config_path("euler_chain_invariance.json");
  const std::string env = "PATHFLOW_OUTPUT_DIR=" + piece.string();

  auto rt = run_cli("train -c " + c, env);
  REQUIRE(rt.code == 0);
  CHECK(fs::exists(piece / "trajectory.bin"));
  CHECK_FALSE(fs::exists(piece / "checks.json"));

  auto rc = run_cli("check-invariants -c " + c, env);
  REQUIRE(rc.code == 0);
  auto rs = run_cli("spectra -c " + c, env);
  REQUIRE(rs.code == 0);

  auto rw = run_cli("run -c " + c, "PATHFLOW_OUTPUT_DIR=" + whole.string());
  REQUIRE(rw.code == 0);

  // The standalone passes reload the trajectory bit-exactly, so the derived
  // artifacts must match the composite run's.
  CHECK(load_json(piece / "checks.json") == load_json(whole / "checks.json"));
  CHECK(load_json(piece / "spectra.json") == load_json(whole / "spectra.json"));
}

TEST_CASE("decompose subcommand: tree artifacts and equivalence stats") {
  fs::path dir = fresh_dir("decompose");
  auto r = run_cli("decompose -c " + config_path("euler_chain_invariance.json") +
                       " --samples 32",
                   "PATHFLOW_OUTPUT_DIR=" + dir.string());
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "graph.json"));
  CHECK(fs::exists(dir / "tree.json"));

  json eq = load_json(dir / "equivalence.json");
  CHECK(eq.at("samples") == 32);
  CHECK(eq.at("paths").get<long long>() > 0);
  CHECK(eq.at("form") == "signed");
  CHECK(eq.at("zero_weight") == false);
  CHECK(eq.at("max_rel_err").get<double>() <= 1e-9);

  json tree = load_json(dir / "tree.json");
  CHECK(tree.at("nodes").size() > 0);
}

TEST_CASE("cli flags: config wins with a warning, silent fields accept the flag") {
  fs::path dir = fresh_dir("flags");
  auto r = run_cli("train -c " + config_path("euler_chain_invariance.json") +
                       " --steps 7 --export-weights",
                   "PATHFLOW_OUTPUT_DIR=" + dir.string());
  REQUIRE(r.code == 0);
  CHECK_THAT(r.err, ContainsSubstring("warning: --steps=7 ignored"));
  CHECK_THAT(r.err, ContainsSubstring("/optimizer/steps"));

  // Config said 2000 steps; the flag must not have shortened the run.
  Trajectory t = load_trajectory((dir / "trajectory.bin").string());
  CHECK(t.steps == 2000);

  // export_weights was absent from the config, so the flag applies.
  std::ifstream csv(dir / "trajectory.csv");
  std::string header;
  std::getline(csv, header);
  CHECK_THAT(header, ContainsSubstring("step,eta,risk,w0"));
}

TEST_CASE("cli env: PATHFLOW_OUTPUT_DIR beats the --output-dir flag") {
  fs::path flag_dir = fresh_dir("env_flag"), env_dir = fresh_dir("env_env");
  auto r = run_cli("train -c " + config_path("relu_probe_drift.json") +
                       " --output-dir " + flag_dir.string(),
                   "PATHFLOW_OUTPUT_DIR=" + env_dir.string());
  REQUIRE(r.code == 0);
  CHECK(fs::exists(env_dir / "trajectory.bin"));
  CHECK_FALSE(fs::exists(flag_dir / "trajectory.bin"));
}

TEST_CASE("report subcommand: deterministic markdown with one row per check") {
  fs::path dir = fresh_dir("report");
  const std::string c = config_path("euler_chain_invariance.json");
  const std::string env = "PATHFLOW_OUTPUT_DIR=" + dir.string();
  REQUIRE(run_cli("run -c " + c, env).code == 0);

  auto r1 = run_cli("report " + dir.string());
  REQUIRE(r1.code == 0);
  std::string md1 = slurp(dir / "report.md");
  CHECK_THAT(md1, ContainsSubstring("# pathflow run report"));
  CHECK_THAT(md1, ContainsSubstring("## Checks"));
  CHECK_THAT(md1, ContainsSubstring("## Spectra"));
  for (const char* id : {"hidden_vertex_balance", "hidden_pair_balance", "layer_balance_01",
                         "gram_balance_01", "gram_balance_12"}) {
    auto first = md1.find("| " + std::string(id) + " |");
    REQUIRE(first != std::string::npos);
    CHECK(md1.find("| " + std::string(id) + " |", first + 1) == std::string::npos);
  }

  auto r2 = run_cli("report " + dir.string());
  REQUIRE(r2.code == 0);
  CHECK(slurp(dir / "report.md") == md1);
  CHECK(r1.out == r2.out);
}

TEST_CASE("empty manifest: run succeeds and the report keeps a header-only table") {
  fs::path dir = fresh_dir("empty_manifest");
  json j = base_config();
  j["optimizer"]["steps"] = 50;
  j["init"] = {{"seed", 2}, {"scale", 0.5}};
  fs::path cfgfile = dir / "minimal.json";
  std::ofstream(cfgfile) << j.dump(2) << "\n";

  auto r = run_cli("run -c " + cfgfile.string(),
                   "PATHFLOW_OUTPUT_DIR=" + (dir / "out").string());
  REQUIRE(r.code == 0);
  json s = load_json(dir / "out" / "summary.json");
  CHECK(s.at("checks").empty());
  CHECK(s.at("exit_code") == 0);

  auto rr = run_cli("report " + (dir / "out").string());
  REQUIRE(rr.code == 0);
  std::string md = slurp(dir / "out" / "report.md");
  auto checks_at = md.find("## Checks");
  REQUIRE(checks_at != std::string::npos);
  // Two table lines (header + separator) and nothing else before EOF.
  std::istringstream rest(md.substr(checks_at));
  std::string line;
  int rows = 0;
  while (std::getline(rest, line))
    if (!line.empty() && line.front() == '|') ++rows;
  CHECK(rows == 2);
}

TEST_CASE("library round trip: run_experiment equals the cli artifacts") {
  json j = load_json(config_path("euler_chain_invariance.json"));
  auto cfg = parse_experiment_config(j);
  fs::path dir = fresh_dir("lib_roundtrip");
  cfg.output_dir = (dir / "lib").string();

  auto res = run_experiment(cfg);
  CHECK(res.exit_code == 0);
  write_run_artifacts(cfg, res, cfg.output_dir);

  auto rc = run_cli("run -c " + config_path("euler_chain_invariance.json"),
                    "PATHFLOW_OUTPUT_DIR=" + (dir / "cli").string());
  REQUIRE(rc.code == 0);
  CHECK(slurp(dir / "lib" / "summary.json") == slurp(dir / "cli" / "summary.json"));
}
