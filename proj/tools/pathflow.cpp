// SPDX-License-Identifier: Apache-2.0
//
// pathflow: decompose feedforward networks into path values plus a signed
// tree, train them, and audit conservation laws and spectral bounds.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pathflow/experiment.hpp"

namespace fs = std::filesystem;
using pathflow::json;

namespace {

struct CliValues {
  std::string config;
  std::string output_dir;
  std::string loss;
  long long steps = 0;
  long long log_stride = 0;
  double eta = 0.0;
  std::uint64_t data_seed = 0;
  std::uint64_t init_seed = 0;
  double init_scale = 0.0;
  bool export_weights = false;
  int samples = 100;
  std::string run_dir;
};

json load_config_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw pathflow::ConfigError(path + ": cannot open config file");
  return json::parse(is);
}

// Mirrored flags fill config gaps; explicit config values win (with a
// warning), and PATHFLOW_OUTPUT_DIR overrides the output directory last.
void add_config_options(CLI::App* sub, CliValues& v) {
  sub->add_option("-c,--config", v.config, "experiment config (JSON)")->required();
  sub->add_option("--output-dir", v.output_dir, "artifact directory");
  sub->add_option("--steps", v.steps, "optimizer steps");
  sub->add_option("--eta", v.eta, "fixed step size (euler only)");
  sub->add_option("--loss", v.loss, "logistic | exponential | squared");
  sub->add_option("--log-stride", v.log_stride, "snapshot stride");
  sub->add_option("--data-seed", v.data_seed, "dataset seed");
  sub->add_option("--init-seed", v.init_seed, "init weight seed");
  sub->add_option("--init-scale", v.init_scale, "init weight scale");
  sub->add_flag("--export-weights", v.export_weights, "weight columns in trajectory.csv");
}

json merged_config(const CLI::App* sub, const CliValues& v) {
  json cfg = load_config_json(v.config);
  if (sub->count("--output-dir")) pathflow::apply_flag(cfg, "/output_dir", v.output_dir, "--output-dir");
  if (sub->count("--steps")) pathflow::apply_flag(cfg, "/optimizer/steps", v.steps, "--steps");
  if (sub->count("--eta")) pathflow::apply_flag(cfg, "/optimizer/eta", v.eta, "--eta");
  if (sub->count("--loss")) pathflow::apply_flag(cfg, "/loss", v.loss, "--loss");
  if (sub->count("--log-stride")) pathflow::apply_flag(cfg, "/log_stride", v.log_stride, "--log-stride");
  if (sub->count("--data-seed")) pathflow::apply_flag(cfg, "/dataset/seed", v.data_seed, "--data-seed");
  if (sub->count("--init-seed")) pathflow::apply_flag(cfg, "/init/seed", v.init_seed, "--init-seed");
  if (sub->count("--init-scale")) pathflow::apply_flag(cfg, "/init/scale", v.init_scale, "--init-scale");
  if (sub->count("--export-weights")) pathflow::apply_flag(cfg, "/export_weights", true, "--export-weights");
  pathflow::apply_output_env(cfg);
  return cfg;
}

void print_check_lines(const std::vector<pathflow::CheckOutcome>& checks) {
  for (const auto& c : checks) {
    std::cout << c.req.id << ": " << pathflow::to_string(c.series.verdict);
    if (!c.matched) std::cout << " (expected " << c.req.expect << ")";
    std::cout << "\n";
  }
}

int cmd_run(const pathflow::ExperimentConfig& cfg) {
  pathflow::ExperimentResult r = pathflow::run_experiment(cfg);
  pathflow::write_run_artifacts(cfg, r, cfg.output_dir);
  std::cout << "risk " << pathflow::format_double(r.traj.risk0()) << " -> "
            << pathflow::format_double(r.traj.risks.back()) << " over " << r.traj.steps
            << " steps\n";
  print_check_lines(r.checks);
  std::cout << "wrote " << (fs::path(cfg.output_dir) / "summary.json").string() << "\n";
  return r.exit_code;
}

int cmd_train(const pathflow::ExperimentConfig& cfg) {
  pathflow::ComputationGraph g = pathflow::build_architecture(cfg.architecture);
  pathflow::validate_references(cfg, g);
  pathflow::Dataset data = pathflow::build_dataset(cfg);
  pathflow::WeightVector w0 = pathflow::build_init(cfg, g);
  pathflow::Trajectory traj = pathflow::run_training(cfg, g, w0, data);
  pathflow::write_training_artifacts(cfg, g, traj, cfg.output_dir);
  std::cout << "risk " << pathflow::format_double(traj.risk0()) << " -> "
            << pathflow::format_double(traj.risks.back()) << " over " << traj.steps
            << " steps\nwrote " << (fs::path(cfg.output_dir) / "trajectory.bin").string()
            << "\n";
  return 0;
}

int cmd_check_invariants(const pathflow::ExperimentConfig& cfg) {
  pathflow::ComputationGraph g = pathflow::load_graph_artifact(cfg.output_dir);
  pathflow::Trajectory traj = pathflow::load_trajectory_artifact(cfg.output_dir);
  pathflow::validate_references(cfg, g);
  pathflow::Dataset data = pathflow::build_dataset(cfg);
  auto checks = pathflow::run_manifest_checks(g, data, cfg.loss, traj, cfg.checks);
  pathflow::write_check_artifacts(checks, cfg.output_dir);
  print_check_lines(checks);
  return pathflow::manifest_exit_code(checks);
}

int cmd_spectra(const pathflow::ExperimentConfig& cfg) {
  pathflow::ComputationGraph g = pathflow::load_graph_artifact(cfg.output_dir);
  pathflow::Trajectory traj = pathflow::load_trajectory_artifact(cfg.output_dir);
  pathflow::validate_references(cfg, g);
  pathflow::SpectraRequest req = cfg.spectra;
  req.enabled = true;  // asking for the subcommand is asking for the series
  pathflow::SpectraResult r = pathflow::run_spectra(g, traj, req);
  pathflow::write_spectra_artifacts(r, cfg.output_dir);
  for (const auto& s : r.series)
    std::cout << "block " << s.block << " (" << s.label
              << "): ratio " << pathflow::detail::report_num(s.ratio.back()) << "\n";
  if (r.alignment_requested)
    std::cout << "alignment bound: "
              << (r.alignment_applicable
                      ? (r.alignment.all_hold ? "holds" : "VIOLATED")
                      : "not applicable (" + r.alignment_reason + ")")
              << "\n";
  if (r.sf_requested)
    std::cout << "shuffle/flatten: " << (r.sf.all_hold ? "holds" : "VIOLATED") << "\n";
  return 0;
}

int cmd_decompose(const pathflow::ExperimentConfig& cfg, int samples) {
  pathflow::DecomposeResult r = pathflow::run_decompose(cfg, samples);
  pathflow::write_decompose_artifacts(r, cfg.output_dir);
  std::cout << "paths " << r.tree.rho << ", tree nodes " << r.tree.nodes.size()
            << ", max rel err " << pathflow::format_double(r.max_rel_err) << "\nwrote "
            << (fs::path(cfg.output_dir) / "tree.json").string() << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir) {
  json summary = pathflow::load_summary_artifact(run_dir);
  std::string text = pathflow::render_report(summary);
  pathflow::detail::write_text(fs::path(run_dir) / "report.md", text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"path decomposition, invariance and spectral-bound toolkit"};
  app.require_subcommand(1);
  CliValues v;

  CLI::App* run = app.add_subcommand("run", "train, run all checks and spectra, write summary");
  add_config_options(run, v);
  CLI::App* train = app.add_subcommand("train", "train and write trajectory artifacts");
  add_config_options(train, v);
  CLI::App* checks =
      app.add_subcommand("check-invariants", "evaluate the check manifest on a saved trajectory");
  add_config_options(checks, v);
  CLI::App* spectra =
      app.add_subcommand("spectra", "spectral series and bounds on a saved trajectory");
  add_config_options(spectra, v);
  CLI::App* decompose =
      app.add_subcommand("decompose", "emit the signed tree and an equivalence report");
  add_config_options(decompose, v);
  decompose->add_option("--samples", v.samples, "equivalence sample count")
      ->check(CLI::PositiveNumber);
  CLI::App* report = app.add_subcommand("report", "render a run directory as markdown");
  report->add_option("run_dir", v.run_dir, "directory written by `pathflow run`")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) return cmd_report(v.run_dir);
    const CLI::App* sub = app.get_subcommands().front();
    pathflow::ExperimentConfig cfg =
        pathflow::parse_experiment_config(merged_config(sub, v));
    if (run->parsed()) return cmd_run(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (checks->parsed()) return cmd_check_invariants(cfg);
    if (spectra->parsed()) return cmd_spectra(cfg);
    if (decompose->parsed()) return cmd_decompose(cfg, v.samples);
  } catch (const json::exception& e) {
    std::cerr << "error: config parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
