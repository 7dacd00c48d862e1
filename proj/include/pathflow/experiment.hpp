// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathflow/blocks.hpp"
#include "pathflow/data.hpp"
#include "pathflow/invariants.hpp"
#include "pathflow/io.hpp"
#include "pathflow/loss.hpp"
#include "pathflow/paths.hpp"
#include "pathflow/spectral.hpp"
#include "pathflow/train.hpp"
#include "pathflow/tree.hpp"

namespace pathflow {

// Config or artifact problem; the message starts with the offending field
// path or file so the caller can point at the exact culprit.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

[[noreturn]] inline void cfg_fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

inline const json& cfg_at(const json& j, const std::string& path, const char* key) {
  if (!j.is_object()) cfg_fail(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) cfg_fail(path + "." + key, "missing required field");
  return *it;
}

template <typename T>
T cfg_as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    cfg_fail(path, "wrong type (" + j.dump() + ")");
  }
}

template <typename T>
T cfg_get(const json& j, const std::string& path, const char* key) {
  return cfg_as<T>(cfg_at(j, path, key), path + "." + key);
}

template <typename T>
T cfg_get_or(const json& j, const std::string& path, const char* key, T def) {
  if (!j.is_object()) cfg_fail(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) return def;
  return cfg_as<T>(*it, path + "." + key);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Configuration schema.

struct CheckRequest {
  std::string id;
  std::string kind;  // vertex | pair | layer | matrix | matrix_full | gd_ledger
  int vertex = -1;                         // vertex
  int u = -1, v = -1;                      // pair
  std::string first_layer, second_layer;   // layer
  MatrixPairSpec mspec;                    // matrix / matrix_full
  bool full_pairs = false;                 // gd_ledger
  double tol = 1e-3;
  std::string expect = "invariant";  // invariant | drifting | any
};

struct SpectraRequest {
  bool enabled = false;
  std::vector<int> blocks;  // empty means every block
  bool alignment = false;
  bool shuffle_flatten = false;
};

struct ExperimentConfig {
  std::vector<BlockSpec> architecture;

  bool has_dataset = false;
  bool dataset_explicit = false;
  int data_n = 0, data_d = 0;
  double data_margin = 0.0;
  std::uint64_t data_seed = 0;
  Dataset dataset;  // explicit form only

  LossKind loss = LossKind::Logistic;

  bool has_optimizer = false;
  OptimizerKind optimizer = OptimizerKind::EulerFlow;
  double eta = 0.0;
  long long steps = 0;
  long long log_stride = 1;

  bool has_init = false;
  bool init_explicit = false;
  std::uint64_t init_seed = 0;
  double init_scale = 1.0;
  WeightVector init_weights;  // explicit form only

  std::vector<CheckRequest> checks;
  SpectraRequest spectra;

  std::string output_dir = "pathflow_out";
  bool export_weights = false;
};

inline ActivationKind parse_activation(const json& j, const std::string& path) {
  if (j.is_string()) {
    std::string name = j.get<std::string>();
    if (name == "linear") return ActivationKind::linear();
    if (name == "relu") return ActivationKind::relu();
    if (name == "leaky_relu") return ActivationKind::leaky_relu(0.01);
    detail::cfg_fail(path, "unknown activation '" + name + "'");
  }
  if (j.is_object() && j.contains("alpha"))
    return ActivationKind::leaky_relu(detail::cfg_get<double>(j, path, "alpha"));
  detail::cfg_fail(path, "expected \"linear\", \"relu\", \"leaky_relu\" or {\"alpha\": ...}");
}

inline std::vector<BlockSpec> parse_architecture(const json& j) {
  if (!j.is_array() || j.empty())
    detail::cfg_fail("architecture", "expected a nonempty array of blocks");
  std::vector<BlockSpec> specs;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string path = "architecture[" + std::to_string(i) + "]";
    const json& b = j[i];
    std::string type = detail::cfg_get<std::string>(b, path, "type");
    ActivationKind act = b.contains("activation")
                             ? parse_activation(b.at("activation"), path + ".activation")
                             : ActivationKind::linear();
    if (type == "fc") {
      FullyConnectedSpec s;
      s.n_in = detail::cfg_get<int>(b, path, "in");
      s.n_out = detail::cfg_get<int>(b, path, "out");
      s.activation = act;
      specs.emplace_back(s);
    } else if (type == "conv1d") {
      Conv1DSpec s;
      s.in_channels = detail::cfg_get<int>(b, path, "in_channels");
      s.kernel = detail::cfg_get<int>(b, path, "kernel");
      s.out_channels = detail::cfg_get<int>(b, path, "out_channels");
      s.stride = detail::cfg_get_or<int>(b, path, "stride", 1);
      s.input_len = detail::cfg_get_or<int>(b, path, "input_len", 0);
      s.activation = act;
      specs.emplace_back(s);
    } else if (type == "resnet") {
      ResNetSpec s;
      s.a = detail::cfg_get<int>(b, path, "a");
      s.b = detail::cfg_get<int>(b, path, "b");
      s.c = detail::cfg_get<int>(b, path, "c");
      s.activation = act;
      if (b.contains("skip")) {
        const json& sk = b.at("skip");
        if (sk.is_string() && sk.get<std::string>() == "free") {
          s.skip = ResNetSpec::Skip::Free;
        } else if (sk.is_string() && sk.get<std::string>() == "identity") {
          s.skip = ResNetSpec::Skip::Identity;
        } else if (sk.is_object() && sk.contains("diagonal")) {
          s.skip = ResNetSpec::Skip::Diagonal;
          s.diagonal =
              detail::cfg_as<std::vector<double>>(sk.at("diagonal"), path + ".skip.diagonal");
        } else {
          detail::cfg_fail(path + ".skip",
                           "expected \"free\", \"identity\" or {\"diagonal\": [...]}");
        }
      }
      specs.emplace_back(s);
    } else {
      detail::cfg_fail(path + ".type", "unknown block type '" + type + "'");
    }
  }
  return specs;
}

inline CheckRequest parse_check(const json& j, const std::string& path) {
  CheckRequest c;
  c.id = detail::cfg_get<std::string>(j, path, "id");
  if (c.id.empty()) detail::cfg_fail(path + ".id", "must be nonempty");
  c.kind = detail::cfg_get<std::string>(j, path, "kind");
  c.tol = detail::cfg_get_or<double>(j, path, "tol", 1e-3);
  if (!(c.tol > 0.0)) detail::cfg_fail(path + ".tol", "must be positive");
  c.expect = detail::cfg_get_or<std::string>(j, path, "expect", "invariant");
  if (c.expect != "invariant" && c.expect != "drifting" && c.expect != "any")
    detail::cfg_fail(path + ".expect", "expected \"invariant\", \"drifting\" or \"any\"");
  if (c.kind == "vertex") {
    c.vertex = detail::cfg_get<int>(j, path, "vertex");
  } else if (c.kind == "pair") {
    c.u = detail::cfg_get<int>(j, path, "u");
    c.v = detail::cfg_get<int>(j, path, "v");
  } else if (c.kind == "layer") {
    c.first_layer = detail::cfg_get<std::string>(j, path, "first");
    c.second_layer = detail::cfg_get<std::string>(j, path, "second");
  } else if (c.kind == "matrix" || c.kind == "matrix_full") {
    c.mspec.first_block = detail::cfg_get<int>(j, path, "first_block");
    c.mspec.within_resnet = detail::cfg_get_or<bool>(j, path, "within_resnet", false);
    if (!c.mspec.within_resnet)
      c.mspec.second_block = detail::cfg_get<int>(j, path, "second_block");
  } else if (c.kind == "gd_ledger") {
    c.full_pairs = detail::cfg_get_or<bool>(j, path, "full_pairs", false);
  } else {
    detail::cfg_fail(path + ".kind", "unknown check kind '" + c.kind + "'");
  }
  return c;
}

inline ExperimentConfig parse_experiment_config(const json& j) {
  if (!j.is_object()) detail::cfg_fail("config", "top level must be an object");
  static const std::set<std::string> known = {
      "architecture", "dataset", "loss",       "optimizer",      "log_stride", "init",
      "checks",       "spectra", "output_dir", "export_weights",
  };
  for (const auto& item : j.items())
    if (!known.count(item.key())) detail::cfg_fail(item.key(), "unknown field");

  ExperimentConfig cfg;
  cfg.architecture = parse_architecture(detail::cfg_at(j, "config", "architecture"));

  if (j.contains("dataset")) {
    cfg.has_dataset = true;
    const json& d = j.at("dataset");
    if (d.is_object() && d.contains("xs")) {
      cfg.dataset_explicit = true;
      cfg.dataset.xs =
          detail::cfg_get<std::vector<std::vector<double>>>(d, "dataset", "xs");
      cfg.dataset.ys = detail::cfg_get<std::vector<double>>(d, "dataset", "ys");
    } else {
      cfg.data_n = detail::cfg_get<int>(d, "dataset", "n");
      cfg.data_d = detail::cfg_get<int>(d, "dataset", "d");
      cfg.data_margin = detail::cfg_get<double>(d, "dataset", "margin");
      cfg.data_seed = detail::cfg_get<std::uint64_t>(d, "dataset", "seed");
    }
  }

  if (j.contains("loss")) {
    std::string name = detail::cfg_as<std::string>(j.at("loss"), "loss");
    try {
      cfg.loss = loss_from_name(name);
    } catch (const std::exception&) {
      detail::cfg_fail("loss", "unknown loss '" + name + "'");
    }
  }

  if (j.contains("optimizer")) {
    cfg.has_optimizer = true;
    const json& o = j.at("optimizer");
    std::string kind = detail::cfg_get<std::string>(o, "optimizer", "kind");
    cfg.steps = detail::cfg_get<long long>(o, "optimizer", "steps");
    if (cfg.steps < 0) detail::cfg_fail("optimizer.steps", "must be nonnegative");
    if (kind == "euler") {
      cfg.optimizer = OptimizerKind::EulerFlow;
      cfg.eta = detail::cfg_get<double>(o, "optimizer", "eta");
      if (!(cfg.eta > 0.0)) detail::cfg_fail("optimizer.eta", "must be positive");
    } else if (kind == "gd_adaptive") {
      cfg.optimizer = OptimizerKind::AdaptiveGd;
      if (o.contains("eta")) detail::cfg_fail("optimizer.eta", "gd_adaptive chooses its own eta");
    } else {
      detail::cfg_fail("optimizer.kind", "expected \"euler\" or \"gd_adaptive\"");
    }
  }

  cfg.log_stride = detail::cfg_get_or<long long>(j, "config", "log_stride", 1);
  if (cfg.log_stride < 1) detail::cfg_fail("log_stride", "must be at least 1");

  if (j.contains("init")) {
    cfg.has_init = true;
    const json& in = j.at("init");
    if (in.is_object() && in.contains("weights")) {
      cfg.init_explicit = true;
      cfg.init_weights = detail::cfg_get<std::vector<double>>(in, "init", "weights");
    } else {
      cfg.init_seed = detail::cfg_get<std::uint64_t>(in, "init", "seed");
      cfg.init_scale = detail::cfg_get_or<double>(in, "init", "scale", 1.0);
      if (!(cfg.init_scale > 0.0)) detail::cfg_fail("init.scale", "must be positive");
    }
  }

  if (j.contains("checks")) {
    const json& cs = j.at("checks");
    if (!cs.is_array()) detail::cfg_fail("checks", "expected an array");
    for (std::size_t i = 0; i < cs.size(); ++i)
      cfg.checks.push_back(parse_check(cs[i], "checks[" + std::to_string(i) + "]"));
  }

  if (j.contains("spectra")) {
    cfg.spectra.enabled = true;
    const json& sp = j.at("spectra");
    if (!sp.is_object()) detail::cfg_fail("spectra", "expected an object");
    if (sp.contains("blocks") && !(sp.at("blocks").is_string() &&
                                   sp.at("blocks").get<std::string>() == "all"))
      cfg.spectra.blocks =
          detail::cfg_as<std::vector<int>>(sp.at("blocks"), "spectra.blocks");
    cfg.spectra.alignment = detail::cfg_get_or<bool>(sp, "spectra", "alignment", false);
    cfg.spectra.shuffle_flatten =
        detail::cfg_get_or<bool>(sp, "spectra", "shuffle_flatten", false);
  }

  cfg.output_dir = detail::cfg_get_or<std::string>(j, "config", "output_dir", "pathflow_out");
  cfg.export_weights = detail::cfg_get_or<bool>(j, "config", "export_weights", false);
  return cfg;
}

// Every id referenced by the manifest must exist in the built graph; bad
// references are config errors, not NotApplicable verdicts.
inline void validate_references(const ExperimentConfig& cfg, const ComputationGraph& g) {
  std::set<std::string> ids;
  int nb = static_cast<int>(g.blocks.size());
  for (std::size_t i = 0; i < cfg.checks.size(); ++i) {
    const CheckRequest& c = cfg.checks[i];
    const std::string path = "checks[" + std::to_string(i) + "]";
    if (!ids.insert(c.id).second)
      detail::cfg_fail(path + ".id", "duplicate check id '" + c.id + "'");
    if (c.kind == "vertex") {
      if (c.vertex < 0 || c.vertex >= g.num_vertices())
        detail::cfg_fail(path + ".vertex", "no vertex " + std::to_string(c.vertex));
    } else if (c.kind == "pair") {
      for (int x : {c.u, c.v})
        if (x < 0 || x >= g.num_vertices())
          detail::cfg_fail(path, "no vertex " + std::to_string(x));
      if (c.u == c.v) detail::cfg_fail(path, "u and v must differ");
    } else if (c.kind == "layer") {
      if (g.find_layer(c.first_layer) < 0)
        detail::cfg_fail(path + ".first", "no declared layer '" + c.first_layer + "'");
      if (g.find_layer(c.second_layer) < 0)
        detail::cfg_fail(path + ".second", "no declared layer '" + c.second_layer + "'");
    } else if (c.kind == "matrix" || c.kind == "matrix_full") {
      if (c.mspec.first_block < 0 || c.mspec.first_block >= nb)
        detail::cfg_fail(path + ".first_block",
                         "no block " + std::to_string(c.mspec.first_block));
      if (!c.mspec.within_resnet &&
          (c.mspec.second_block < 0 || c.mspec.second_block >= nb))
        detail::cfg_fail(path + ".second_block",
                         "no block " + std::to_string(c.mspec.second_block));
    }
  }
  for (std::size_t k = 0; k < cfg.spectra.blocks.size(); ++k)
    if (cfg.spectra.blocks[k] < 0 || cfg.spectra.blocks[k] >= nb)
      detail::cfg_fail("spectra.blocks[" + std::to_string(k) + "]",
                       "no block " + std::to_string(cfg.spectra.blocks[k]));
}

// ---------------------------------------------------------------------------
// Orchestration.

inline Dataset build_dataset(const ExperimentConfig& cfg) {
  if (!cfg.has_dataset) detail::cfg_fail("dataset", "required for this command");
  if (cfg.dataset_explicit) {
    Dataset d = cfg.dataset;
    try {
      d.validate();
    } catch (const std::exception& e) {
      detail::cfg_fail("dataset", e.what());
    }
    return d;
  }
  return make_separable_dataset(cfg.data_n, cfg.data_d, cfg.data_margin, cfg.data_seed);
}

// Frozen slots always take the graph's frozen values, also for explicit
// weight lists.
inline WeightVector build_init(const ExperimentConfig& cfg, const ComputationGraph& g) {
  if (!cfg.has_init) detail::cfg_fail("init", "required for this command");
  if (cfg.init_explicit) {
    if (static_cast<int>(cfg.init_weights.size()) != g.num_slots)
      detail::cfg_fail("init.weights",
                       "expected " + std::to_string(g.num_slots) + " entries, got " +
                           std::to_string(cfg.init_weights.size()));
    WeightVector w = cfg.init_weights;
    for (int s = 0; s < g.num_slots; ++s)
      if (!g.learnable[static_cast<std::size_t>(s)])
        w[static_cast<std::size_t>(s)] = g.frozen_value[static_cast<std::size_t>(s)];
    return w;
  }
  return make_init_weights(g, cfg.init_seed, cfg.init_scale);
}

inline Trajectory run_training(const ExperimentConfig& cfg, const ComputationGraph& g,
                               const WeightVector& w0, const Dataset& data) {
  if (!cfg.has_optimizer) detail::cfg_fail("optimizer", "required for this command");
  if (data.dim() != static_cast<int>(g.inputs.size()))
    detail::cfg_fail("dataset", "dimension " + std::to_string(data.dim()) +
                                    " does not match the architecture's input width " +
                                    std::to_string(g.inputs.size()));
  if (cfg.optimizer == OptimizerKind::EulerFlow)
    return run_euler_flow(g, w0, data, cfg.loss, cfg.eta, cfg.steps, cfg.log_stride);
  return run_gd_adaptive(g, w0, data, cfg.loss, cfg.steps, cfg.log_stride);
}

struct CheckOutcome {
  CheckRequest req;
  DefectSeries series;
  json extra;            // kind-specific numbers beyond the series
  bool matched = false;  // verdict equals the expectation ("any" always matches)
  bool hard_fail = false;  // expected invariant, got drifting
};

inline CheckOutcome run_check(const ComputationGraph& g, const Dataset& data, LossKind loss,
                              const Trajectory& traj, const CheckRequest& req) {
  CheckOutcome out;
  out.req = req;
  if (req.kind == "vertex") {
    out.series = vertex_defect(g, traj, req.vertex, req.tol);
  } else if (req.kind == "pair") {
    out.series = pair_defect(g, traj, req.u, req.v, req.tol);
  } else if (req.kind == "layer") {
    out.series = layer_defect(g, traj, req.first_layer, req.second_layer, req.tol);
  } else if (req.kind == "matrix") {
    out.series = matrix_defect(g, traj, req.mspec, req.tol);
  } else if (req.kind == "matrix_full") {
    NoninvarianceReport rep = noninvariance_probe(g, traj, req.mspec, data, loss, req.tol);
    out.series = rep.full;
    out.extra["active_verdict"] = to_string(rep.active.verdict);
    out.extra["active_max_abs"] = rep.active.max_abs();
    out.extra["max_rate_gap"] = rep.max_rate_gap;
    out.extra["contrast"] = rep.contrast;
  } else {  // gd_ledger
    try {
      GdLedger led = gd_ledger(g, traj, req.full_pairs);
      out.series.check_id = "gd_ledger";
      out.series.tol = req.tol;
      out.series.norm_scale = 1.0;
      out.series.values = {led.max_vertex_residual, led.max_pair_residual};
      bool ok = led.max_vertex_residual <= req.tol && led.max_pair_residual <= req.tol &&
                led.slack_ok;
      out.series.verdict = ok ? Verdict::Invariant : Verdict::Drifting;
      out.extra["vertex_identities"] = led.vertices.size();
      out.extra["pair_identities"] = led.pairs.size();
      out.extra["max_vertex_residual"] = led.max_vertex_residual;
      out.extra["max_pair_residual"] = led.max_pair_residual;
      out.extra["tracked_slot_pairs"] = led.tracked_slot_pairs;
      out.extra["max_abs_slack"] = led.max_abs_slack;
      out.extra["slack_bound"] = led.slack_bound;
      out.extra["slack_ok"] = led.slack_ok;
    } catch (const ValidationError& e) {
      out.series = detail::na_series("gd_ledger", e.what(), req.tol);
    }
  }
  out.matched = req.expect == "any" || req.expect == to_string(out.series.verdict);
  out.hard_fail = req.expect == "invariant" && out.series.verdict == Verdict::Drifting;
  return out;
}

// Checks are pure in (g, data, traj); run them concurrently, collect in
// manifest order.
inline std::vector<CheckOutcome> run_manifest_checks(const ComputationGraph& g,
                                                     const Dataset& data, LossKind loss,
                                                     const Trajectory& traj,
                                                     const std::vector<CheckRequest>& checks) {
  std::vector<std::future<CheckOutcome>> futs;
  futs.reserve(checks.size());
  for (const CheckRequest& req : checks)
    futs.push_back(std::async(std::launch::async,
                              [&, req] { return run_check(g, data, loss, traj, req); }));
  std::vector<CheckOutcome> out;
  out.reserve(checks.size());
  for (auto& f : futs) out.push_back(f.get());
  return out;
}

inline int manifest_exit_code(const std::vector<CheckOutcome>& outcomes) {
  for (const CheckOutcome& c : outcomes)
    if (c.hard_fail) return 1;
  return 0;
}

struct SpectraResult {
  bool enabled = false;
  std::vector<SpectralSeries> series;
  bool alignment_requested = false;
  bool alignment_applicable = false;
  std::string alignment_reason;
  AlignmentReport alignment;
  bool sf_requested = false;
  ShuffleFlattenReport sf;
};

inline SpectraResult run_spectra(const ComputationGraph& g, const Trajectory& traj,
                                 const SpectraRequest& req) {
  SpectraResult r;
  r.enabled = req.enabled;
  if (!req.enabled) return r;
  std::vector<int> blocks = req.blocks;
  if (blocks.empty())
    for (int b = 0; b < static_cast<int>(g.blocks.size()); ++b) blocks.push_back(b);

  auto fser = std::async(std::launch::async,
                         [&] { return lowrank_and_alignment_series(g, traj, blocks); });
  std::future<ShuffleFlattenReport> fsf;
  if (req.shuffle_flatten)
    fsf = std::async(std::launch::async, [&] { return shuffle_and_flatten_checks(g, traj); });
  if (req.alignment) {
    r.alignment_requested = true;
    try {
      r.alignment = reduced_alignment_check(g, traj);
      r.alignment_applicable = true;
    } catch (const ValidationError& e) {
      r.alignment_reason = e.what();
    }
  }
  r.series = fser.get();
  if (req.shuffle_flatten) {
    r.sf_requested = true;
    r.sf = fsf.get();
  }
  return r;
}

struct ExperimentResult {
  ComputationGraph graph;
  Dataset data;
  WeightVector w0;
  Trajectory traj;
  std::vector<CheckOutcome> checks;
  SpectraResult spectra;
  int exit_code = 0;
};

// build -> data -> train -> checks -> spectra. Training is single-threaded;
// the analysis passes run concurrently once the trajectory is fixed.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult r;
  r.graph = build_architecture(cfg.architecture);
  validate_references(cfg, r.graph);
  r.data = build_dataset(cfg);
  r.w0 = build_init(cfg, r.graph);
  r.traj = run_training(cfg, r.graph, r.w0, r.data);
  auto fchecks = std::async(std::launch::async, [&] {
    return run_manifest_checks(r.graph, r.data, cfg.loss, r.traj, cfg.checks);
  });
  auto fspec =
      std::async(std::launch::async, [&] { return run_spectra(r.graph, r.traj, cfg.spectra); });
  r.checks = fchecks.get();
  r.spectra = fspec.get();
  r.exit_code = manifest_exit_code(r.checks);
  return r;
}

// ---------------------------------------------------------------------------
// Artifact emission.

namespace detail {

inline std::string sanitize_filename(const std::string& id) {
  std::string out;
  for (char c : id)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')
               ? c
               : '_';
  return out;
}

inline void write_text(const std::filesystem::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary);
  check(static_cast<bool>(os), "cannot open " + p.string() + " for writing");
  os << content;
  check(static_cast<bool>(os), "failed writing " + p.string());
}

}  // namespace detail

inline json check_to_json(const CheckOutcome& c) {
  json j;
  j["id"] = c.req.id;
  j["kind"] = c.req.kind;
  j["verdict"] = to_string(c.series.verdict);
  j["expected"] = c.req.expect;
  j["matched"] = c.matched;
  j["tol"] = c.series.tol;
  j["norm_scale"] = c.series.norm_scale;
  j["max_abs"] = c.series.max_abs();
  j["baseline"] = c.series.baseline;
  if (!c.series.reason.empty()) j["reason"] = c.series.reason;
  if (!c.extra.is_null()) j["detail"] = c.extra;
  return j;
}

inline json checks_to_json(const std::vector<CheckOutcome>& outcomes) {
  json j;
  json arr = json::array();
  for (const CheckOutcome& c : outcomes) arr.push_back(check_to_json(c));
  j["checks"] = arr;
  j["exit_code"] = manifest_exit_code(outcomes);
  return j;
}

inline json spectra_to_json(const SpectraResult& r) {
  json sp;
  json blocks = json::array();
  for (const SpectralSeries& s : r.series) {
    json b;
    b["block"] = s.block;
    b["label"] = s.label;
    b["frob2_first"] = s.frob2.front();
    b["frob2_last"] = s.frob2.back();
    b["sigma1_2_last"] = s.sigma1_2.back();
    b["ratio_last"] = s.ratio.back();
    b["rank1_residual_last"] = s.rank1_residual.back();
    b["alignment_next_last"] = s.alignment_next.back();
    blocks.push_back(b);
  }
  sp["blocks"] = blocks;
  if (r.alignment_requested) {
    json al;
    al["applicable"] = r.alignment_applicable;
    if (!r.alignment_applicable) {
      al["reason"] = r.alignment_reason;
    } else {
      al["all_hold"] = r.alignment.all_hold;
      json layers = json::array();
      for (const AlignmentLayerReport& l : r.alignment.layers) {
        json lj;
        lj["layer"] = l.constants.layer;
        lj["block"] = l.constants.block;
        lj["n_r"] = l.constants.n_r;
        lj["v_c"] = l.constants.v_c;
        lj["bound_const"] = l.constants.bound_const;
        lj["d"] = l.constants.d;
        lj["max_violation"] = l.max_violation;
        lj["holds"] = l.holds;
        layers.push_back(lj);
      }
      al["layers"] = layers;
    }
    sp["alignment"] = al;
  }
  if (r.sf_requested) {
    json sf;
    sf["all_hold"] = r.sf.all_hold;
    json fl = json::array();
    for (const FlattenSeries& f : r.sf.flatten) {
      json fj;
      fj["block"] = f.block;
      fj["a"] = f.a;
      fj["b"] = f.b;
      fj["c"] = f.c;
      fj["min_margin"] = f.min_margin;
      fj["holds"] = f.holds;
      fl.push_back(fj);
    }
    sf["flatten"] = fl;
    json sh = json::array();
    for (const ShuffleCheck& s : r.sf.shuffle) {
      json sj;
      sj["block"] = s.block;
      sj["applicable"] = s.applicable;
      if (!s.applicable) sj["reason"] = s.reason;
      sj["d_prime"] = s.d_prime;
      sj["min_margin"] = s.applicable ? json(s.min_margin) : json();
      sj["holds"] = s.holds;
      sh.push_back(sj);
    }
    sf["shuffle"] = sh;
    sp["shuffle_flatten"] = sf;
  }
  return sp;
}

inline json summary_to_json(const ExperimentConfig& cfg, const ExperimentResult& r) {
  json j;
  j["optimizer"] = cfg.optimizer == OptimizerKind::EulerFlow ? "euler" : "gd_adaptive";
  j["loss"] = to_string(cfg.loss);
  j["steps"] = r.traj.steps;
  j["logged"] = r.traj.logged();
  j["log_stride"] = r.traj.stride;
  j["risk_initial"] = r.traj.risk0();
  j["risk_final"] = r.traj.risks.back();
  j["signs_stable_from"] = r.traj.signs_stable_from;
  json arr = json::array();
  for (const CheckOutcome& c : r.checks) arr.push_back(check_to_json(c));
  j["checks"] = arr;
  if (r.spectra.enabled) j["spectra"] = spectra_to_json(r.spectra);
  j["exit_code"] = r.exit_code;
  return j;
}

inline void write_check_csv(const std::filesystem::path& dir, const CheckOutcome& c) {
  std::ofstream os(dir / (detail::sanitize_filename(c.req.id) + ".csv"));
  detail::check(static_cast<bool>(os), "cannot open check csv for " + c.req.id);
  os << "step,defect\n";
  for (std::size_t i = 0; i < c.series.times.size(); ++i)
    os << format_double(c.series.times[i]) << "," << format_double(c.series.values[i]) << "\n";
}

inline void write_spectra_csv(const std::filesystem::path& dir, const SpectralSeries& s) {
  std::ofstream os(dir / ("block" + std::to_string(s.block) + ".csv"));
  detail::check(static_cast<bool>(os), "cannot open spectra csv for block " +
                                           std::to_string(s.block));
  os << "step,frob2,sigma1_2,ratio,rank1_residual,alignment_next\n";
  for (std::size_t i = 0; i < s.times.size(); ++i)
    os << s.times[i] << "," << format_double(s.frob2[i]) << "," << format_double(s.sigma1_2[i])
       << "," << format_double(s.ratio[i]) << "," << format_double(s.rank1_residual[i]) << ","
       << format_double(s.alignment_next[i]) << "\n";
}

inline void write_training_artifacts(const ExperimentConfig& cfg, const ComputationGraph& g,
                                     const Trajectory& traj,
                                     const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  detail::write_text(out / "graph.json", graph_to_json(g).dump(2) + "\n");
  trajectory_csv(traj, (out / "trajectory.csv").string(), cfg.export_weights);
  save_trajectory(traj, (out / "trajectory.bin").string());
}

inline void write_check_artifacts(const std::vector<CheckOutcome>& outcomes,
                                  const std::filesystem::path& out) {
  std::filesystem::create_directories(out / "checks");
  for (const CheckOutcome& c : outcomes) write_check_csv(out / "checks", c);
  detail::write_text(out / "checks.json", checks_to_json(outcomes).dump(2) + "\n");
}

inline void write_spectra_artifacts(const SpectraResult& r, const std::filesystem::path& out) {
  std::filesystem::create_directories(out / "spectra");
  for (const SpectralSeries& s : r.series) write_spectra_csv(out / "spectra", s);
  detail::write_text(out / "spectra.json", spectra_to_json(r).dump(2) + "\n");
}

inline void write_run_artifacts(const ExperimentConfig& cfg, const ExperimentResult& r,
                                const std::filesystem::path& out) {
  write_training_artifacts(cfg, r.graph, r.traj, out);
  write_check_artifacts(r.checks, out);
  if (r.spectra.enabled) write_spectra_artifacts(r.spectra, out);
  detail::write_text(out / "summary.json", summary_to_json(cfg, r).dump(2) + "\n");
}

inline ComputationGraph load_graph_artifact(const std::filesystem::path& out) {
  auto p = out / "graph.json";
  if (!std::filesystem::exists(p))
    throw ConfigError(p.string() + ": missing artifact (run `pathflow train` first)");
  std::ifstream is(p);
  return graph_from_json(json::parse(is));
}

inline Trajectory load_trajectory_artifact(const std::filesystem::path& out) {
  auto p = out / "trajectory.bin";
  if (!std::filesystem::exists(p))
    throw ConfigError(p.string() + ": missing artifact (run `pathflow train` first)");
  return load_trajectory(p.string());
}

// ---------------------------------------------------------------------------
// Decomposition artifact: tree plus a sampled network-vs-tree equivalence
// report.

struct DecomposeResult {
  ComputationGraph graph;
  WeightVector w;
  TreeNetwork tree;
  int samples = 0;
  std::uint64_t seed = 0;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;  // |nu - mu| / (1 + |nu|)
};

inline DecomposeResult run_decompose(const ExperimentConfig& cfg, int samples) {
  DecomposeResult r;
  r.graph = build_architecture(cfg.architecture);
  r.w = build_init(cfg, r.graph);
  PathSet ps = enumerate_paths(r.graph);
  r.tree = decompose(r.graph, ps, r.w, TreeForm::Signed);
  r.samples = samples;
  r.seed = cfg.has_init && !cfg.init_explicit ? cfg.init_seed : 1;
  std::mt19937_64 rng(r.seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  int d = static_cast<int>(r.graph.inputs.size());
  double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> x(static_cast<std::size_t>(d));
  for (int k = 0; k < samples; ++k) {
    for (double& xi : x) xi = uni(rng) * scale;
    double nu = forward(r.graph, r.w, x).output;
    std::vector<double> h =
        path_enumeration(r.graph, ps, r.w, x, r.tree.form == TreeForm::Absolute);
    double mu = evaluate_tree(r.tree, h);
    double abs_err = std::fabs(nu - mu);
    r.max_abs_err = std::max(r.max_abs_err, abs_err);
    r.max_rel_err = std::max(r.max_rel_err, abs_err / (1.0 + std::fabs(nu)));
  }
  return r;
}

inline void write_decompose_artifacts(const DecomposeResult& r,
                                      const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  detail::write_text(out / "graph.json", graph_to_json(r.graph).dump(2) + "\n");
  detail::write_text(out / "tree.json", tree_to_json(r.tree).dump(2) + "\n");
  json eq;
  eq["paths"] = r.tree.rho;
  eq["tree_nodes"] = r.tree.nodes.size();
  eq["form"] = r.tree.form == TreeForm::Signed ? "signed" : "absolute";
  eq["samples"] = r.samples;
  eq["seed"] = r.seed;
  eq["max_abs_err"] = r.max_abs_err;
  eq["max_rel_err"] = r.max_rel_err;
  eq["zero_weight"] = r.tree.zero_weight;
  detail::write_text(out / "equivalence.json", eq.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Report rendering. Works off summary.json alone so it is reproducible from
// artifacts.

namespace detail {

inline std::string report_num(double x) {
  char b[40];
  std::snprintf(b, sizeof(b), "%.6g", x);
  return b;
}

inline std::string report_cell(const json& j) {
  if (j.is_null()) return "-";
  if (j.is_boolean()) return j.get<bool>() ? "yes" : "no";
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  if (j.is_number()) return report_num(j.get<double>());
  if (j.is_string()) return j.get<std::string>();
  return j.dump();
}

}  // namespace detail

inline std::string render_report(const json& s) {
  std::ostringstream os;
  os << "# pathflow run report\n\n";
  os << "| quantity | value |\n|---|---|\n";
  const std::pair<const char*, const char*> rows[] = {
      {"optimizer", "optimizer"},
      {"loss", "loss"},
      {"steps", "steps"},
      {"logged snapshots", "logged"},
      {"log stride", "log_stride"},
      {"initial risk", "risk_initial"},
      {"final risk", "risk_final"},
      {"signs stable from step", "signs_stable_from"},
      {"exit code", "exit_code"},
  };
  for (const auto& [label, key] : rows)
    if (s.contains(key)) os << "| " << label << " | " << detail::report_cell(s.at(key)) << " |\n";

  os << "\n## Checks\n\n";
  os << "| id | kind | verdict | expected | max defect | threshold | note |\n";
  os << "|---|---|---|---|---|---|---|\n";
  for (const json& c : s.value("checks", json::array())) {
    double thr = c.value("tol", 0.0) * c.value("norm_scale", 1.0);
    os << "| " << detail::report_cell(c.at("id")) << " | " << detail::report_cell(c.at("kind"))
       << " | " << detail::report_cell(c.at("verdict")) << " | "
       << detail::report_cell(c.at("expected")) << " | " << detail::report_cell(c.at("max_abs"))
       << " | " << detail::report_num(thr) << " | " << c.value("reason", "") << " |\n";
  }

  if (s.contains("spectra")) {
    const json& sp = s.at("spectra");
    os << "\n## Spectra\n\n";
    os << "| block | label | frob2 start | frob2 end | top ratio | rank-1 residual | "
          "alignment to next |\n";
    os << "|---|---|---|---|---|---|---|\n";
    for (const json& b : sp.value("blocks", json::array()))
      os << "| " << detail::report_cell(b.at("block")) << " | "
         << detail::report_cell(b.at("label")) << " | "
         << detail::report_cell(b.at("frob2_first")) << " | "
         << detail::report_cell(b.at("frob2_last")) << " | "
         << detail::report_cell(b.at("ratio_last")) << " | "
         << detail::report_cell(b.at("rank1_residual_last")) << " | "
         << detail::report_cell(b.at("alignment_next_last")) << " |\n";

    if (sp.contains("alignment")) {
      const json& al = sp.at("alignment");
      os << "\n### Reduced-alignment bound\n\n";
      if (!al.value("applicable", false)) {
        os << "not applicable: " << al.value("reason", "") << "\n";
      } else {
        os << "| layer | block | residual blocks | conv cost | bound const | offset D | "
              "max violation | holds |\n";
        os << "|---|---|---|---|---|---|---|---|\n";
        for (const json& l : al.value("layers", json::array()))
          os << "| " << detail::report_cell(l.at("layer")) << " | "
             << detail::report_cell(l.at("block")) << " | " << detail::report_cell(l.at("n_r"))
             << " | " << detail::report_cell(l.at("v_c")) << " | "
             << detail::report_cell(l.at("bound_const")) << " | "
             << detail::report_cell(l.at("d")) << " | "
             << detail::report_cell(l.at("max_violation")) << " | "
             << detail::report_cell(l.at("holds")) << " |\n";
      }
    }

    if (sp.contains("shuffle_flatten")) {
      const json& sf = sp.at("shuffle_flatten");
      os << "\n### Shuffle and flattening\n\n";
      os << "| check | block | min margin | holds | note |\n|---|---|---|---|---|\n";
      for (const json& f : sf.value("flatten", json::array()))
        os << "| flatten | " << detail::report_cell(f.at("block")) << " | "
           << detail::report_cell(f.at("min_margin")) << " | "
           << detail::report_cell(f.at("holds")) << " | " << detail::report_cell(f.at("a"))
           << "x" << detail::report_cell(f.at("b")) << "x" << detail::report_cell(f.at("c"))
           << " |\n";
      for (const json& h : sf.value("shuffle", json::array()))
        os << "| shuffle | " << detail::report_cell(h.at("block")) << " | "
           << detail::report_cell(h.at("min_margin")) << " | "
           << detail::report_cell(h.at("holds")) << " | " << h.value("reason", "") << " |\n";
    }
  }
  return os.str();
}

inline json load_summary_artifact(const std::filesystem::path& run_dir) {
  auto p = run_dir / "summary.json";
  if (!std::filesystem::exists(p))
    throw ConfigError(p.string() + ": missing artifact (run `pathflow run` first)");
  std::ifstream is(p);
  return json::parse(is);
}

// ---------------------------------------------------------------------------
// Flag/config merging: a command-line value applies only where the config is
// silent; an explicit config value wins with a warning.

inline void apply_flag(json& cfg, const std::string& pointer, const json& value,
                       const std::string& flag) {
  json::json_pointer p(pointer);
  if (cfg.contains(p)) {
    if (cfg.at(p) != value)
      std::cerr << "warning: " << flag << "=" << value.dump() << " ignored; config sets "
                << pointer << "=" << cfg.at(p).dump() << "\n";
    return;
  }
  cfg[p] = value;
}

// The only environment knob: redirect artifacts without touching the config.
inline void apply_output_env(json& cfg) {
  if (const char* e = std::getenv("PATHFLOW_OUTPUT_DIR")) cfg["output_dir"] = std::string(e);
}

}  // namespace pathflow
