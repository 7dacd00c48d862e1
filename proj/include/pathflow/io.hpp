// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathflow/graph.hpp"
#include "pathflow/train.hpp"
#include "pathflow/tree.hpp"

namespace pathflow {

using nlohmann::json;

// %.17g always round-trips a double through decimal.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline json activation_to_json(const ActivationKind& a) {
  switch (a.tag) {
    case ActivationKind::Tag::Linear:
      return "linear";
    case ActivationKind::Tag::ReLU:
      return "relu";
    case ActivationKind::Tag::LeakyReLU:
      return json{{"kind", "leaky_relu"}, {"alpha", a.alpha}};
  }
  return "linear";
}

inline ActivationKind activation_from_json(const json& j) {
  if (j.is_string()) return activation_from_name(j.get<std::string>());
  return ActivationKind::leaky_relu(j.at("alpha").get<double>());
}

inline json block_to_json(const BlockInfo& b) {
  json j;
  switch (b.kind) {
    case BlockInfo::Kind::FullyConnected:
      j["kind"] = "fully_connected";
      j["n_in"] = b.n_in;
      j["n_out"] = b.n_out;
      break;
    case BlockInfo::Kind::Conv1D:
      j["kind"] = "conv1d";
      j["a"] = b.a;
      j["b"] = b.b;
      j["c"] = b.c;
      j["stride"] = b.stride;
      j["len_in"] = b.len_in;
      j["len_out"] = b.len_out;
      break;
    case BlockInfo::Kind::ResNetFree:
      j["kind"] = "resnet";
      j["a"] = b.a;
      j["b"] = b.b;
      j["c"] = b.c;
      j["y_base"] = b.y_base;
      j["u_base"] = b.u_base;
      j["z_base"] = b.z_base;
      j["z_diagonal"] = b.z_diagonal;
      j["z_frozen"] = b.z_frozen;
      j["hidden_vertices"] = b.hidden_vertices;
      break;
  }
  j["activation"] = activation_to_json(b.activation);
  j["slot_base"] = b.slot_base;
  j["slot_count"] = b.slot_count;
  j["in_vertices"] = b.in_vertices;
  j["out_vertices"] = b.out_vertices;
  return j;
}

inline BlockInfo block_from_json(const json& j) {
  BlockInfo b;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "fully_connected") {
    b.kind = BlockInfo::Kind::FullyConnected;
    b.n_in = j.at("n_in").get<int>();
    b.n_out = j.at("n_out").get<int>();
  } else if (kind == "conv1d") {
    b.kind = BlockInfo::Kind::Conv1D;
    b.a = j.at("a").get<int>();
    b.b = j.at("b").get<int>();
    b.c = j.at("c").get<int>();
    b.stride = j.at("stride").get<int>();
    b.len_in = j.at("len_in").get<int>();
    b.len_out = j.at("len_out").get<int>();
  } else if (kind == "resnet") {
    b.kind = BlockInfo::Kind::ResNetFree;
    b.a = j.at("a").get<int>();
    b.b = j.at("b").get<int>();
    b.c = j.at("c").get<int>();
    b.y_base = j.at("y_base").get<int>();
    b.u_base = j.at("u_base").get<int>();
    b.z_base = j.at("z_base").get<int>();
    b.z_diagonal = j.at("z_diagonal").get<bool>();
    b.z_frozen = j.at("z_frozen").get<bool>();
    b.hidden_vertices = j.at("hidden_vertices").get<std::vector<int>>();
  } else {
    throw ValidationError("unknown block kind: " + kind);
  }
  b.activation = activation_from_json(j.at("activation"));
  b.slot_base = j.at("slot_base").get<int>();
  b.slot_count = j.at("slot_count").get<int>();
  b.in_vertices = j.at("in_vertices").get<std::vector<int>>();
  b.out_vertices = j.at("out_vertices").get<std::vector<int>>();
  return b;
}

inline json graph_to_json(const ComputationGraph& g) {
  json j;
  json verts = json::array();
  for (int v = 0; v < g.num_vertices(); ++v)
    verts.push_back(json{{"id", v}, {"activation", activation_to_json(g.act[v])}});
  j["vertices"] = verts;
  j["inputs"] = g.inputs;
  j["output"] = g.output;
  json edges = json::array();
  for (const Edge& e : g.edges)
    edges.push_back(json{{"src", e.src}, {"dst", e.dst}, {"slot", e.slot}});
  j["edges"] = edges;
  j["num_slots"] = g.num_slots;
  json frozen = json::array();
  for (int s = 0; s < g.num_slots; ++s)
    if (!g.learnable[s])
      frozen.push_back(json{
          {"slot", s}, {"value", g.frozen_value.empty() ? 0.0 : g.frozen_value[s]}});
  j["frozen_slots"] = frozen;
  json layers = json::array();
  for (const DeclaredLayer& l : g.layers)
    layers.push_back(json{{"name", l.name}, {"slots", l.slots}});
  j["layers"] = layers;
  json blocks = json::array();
  for (const BlockInfo& b : g.blocks) blocks.push_back(block_to_json(b));
  j["blocks"] = blocks;
  return j;
}

// Accepts arbitrary DAGs; declared layers and blocks are optional. The graph
// is validated and finalized before returning.
inline ComputationGraph graph_from_json(const json& j) {
  ComputationGraph g;
  const auto& verts = j.at("vertices");
  g.act.resize(verts.size());
  for (const auto& v : verts) {
    int id = v.at("id").get<int>();
    detail::check(id >= 0 && id < static_cast<int>(verts.size()), "vertex id out of range");
    g.act[id] = activation_from_json(v.at("activation"));
  }
  g.inputs = j.at("inputs").get<std::vector<int>>();
  g.output = j.at("output").get<int>();
  for (const auto& e : j.at("edges"))
    g.edges.push_back(
        {e.at("src").get<int>(), e.at("dst").get<int>(), e.at("slot").get<int>()});
  g.num_slots = j.at("num_slots").get<int>();
  g.learnable.assign(g.num_slots, 1);
  g.frozen_value.assign(g.num_slots, 0.0);
  if (j.contains("frozen_slots")) {
    for (const auto& f : j.at("frozen_slots")) {
      int s = f.at("slot").get<int>();
      detail::check(s >= 0 && s < g.num_slots, "frozen slot out of range");
      g.learnable[s] = 0;
      g.frozen_value[s] = f.at("value").get<double>();
    }
  }
  if (j.contains("layers"))
    for (const auto& l : j.at("layers"))
      g.layers.push_back(
          {l.at("name").get<std::string>(), l.at("slots").get<std::vector<int>>()});
  if (j.contains("blocks"))
    for (const auto& b : j.at("blocks")) g.blocks.push_back(block_from_json(b));
  g.finalize();
  return g;
}

inline json tree_to_json(const TreeNetwork& t) {
  json j;
  j["root"] = t.root;
  j["rho"] = t.rho;
  j["form"] = t.form == TreeForm::Signed ? "signed" : "absolute";
  j["zero_weight"] = t.zero_weight;
  json nodes = json::array();
  for (int i = 0; i < static_cast<int>(t.nodes.size()); ++i) {
    const TreeNode& n = t.nodes[i];
    json nj{{"id", i},
            {"parent", n.parent},
            {"sign", n.sign},
            {"activation", activation_to_json(n.act)},
            {"leaf_index", n.leaf_index}};
    if (!n.suffix.empty()) nj["suffix"] = n.suffix;
    nodes.push_back(std::move(nj));
  }
  j["nodes"] = nodes;
  return j;
}

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("trajectory file truncated");
  return v;
}

}  // namespace detail

// Compact binary trajectory dump; full double fidelity, native byte order.
inline void save_trajectory(const Trajectory& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  detail::check(static_cast<bool>(os), "cannot open " + path + " for writing");
  os.write("PFTJ", 4);
  detail::write_pod<std::uint32_t>(os, 1);
  detail::write_pod<std::uint32_t>(os, t.optimizer == OptimizerKind::EulerFlow ? 0u : 1u);
  detail::write_pod<std::int64_t>(os, t.steps);
  detail::write_pod<std::int64_t>(os, t.stride);
  detail::write_pod<std::int64_t>(os, t.signs_stable_from);
  std::int64_t n_log = t.logged();
  std::int64_t n_slots = t.weights.empty() ? 0 : static_cast<std::int64_t>(t.weights[0].size());
  std::int64_t n_ex = t.patterns.empty() ? 0 : static_cast<std::int64_t>(t.patterns[0].size());
  std::int64_t n_vert =
      (n_ex == 0 || t.patterns[0].empty()) ? 0
                                           : static_cast<std::int64_t>(t.patterns[0][0].size());
  detail::write_pod(os, n_log);
  detail::write_pod(os, n_slots);
  detail::write_pod(os, n_ex);
  detail::write_pod(os, n_vert);
  for (long long x : t.times) detail::write_pod<std::int64_t>(os, x);
  for (const auto& w : t.weights)
    os.write(reinterpret_cast<const char*>(w.data()), w.size() * sizeof(double));
  for (const auto& snap : t.patterns)
    for (const auto& p : snap)
      os.write(reinterpret_cast<const char*>(p.data()), p.size());
  for (double e : t.etas) detail::write_pod(os, e);
  for (const auto& d : t.grads)
    os.write(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
  for (double r : t.risks) detail::write_pod(os, r);
  detail::check(static_cast<bool>(os), "failed writing " + path);
}

inline Trajectory load_trajectory(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  detail::check(static_cast<bool>(is), "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  detail::check(is && std::string(magic, 4) == "PFTJ", path + " is not a trajectory file");
  detail::check(detail::read_pod<std::uint32_t>(is) == 1, "unsupported trajectory version");
  Trajectory t;
  t.optimizer = detail::read_pod<std::uint32_t>(is) == 0 ? OptimizerKind::EulerFlow
                                                         : OptimizerKind::AdaptiveGd;
  t.steps = detail::read_pod<std::int64_t>(is);
  t.stride = detail::read_pod<std::int64_t>(is);
  t.signs_stable_from = detail::read_pod<std::int64_t>(is);
  auto n_log = detail::read_pod<std::int64_t>(is);
  auto n_slots = detail::read_pod<std::int64_t>(is);
  auto n_ex = detail::read_pod<std::int64_t>(is);
  auto n_vert = detail::read_pod<std::int64_t>(is);
  t.times.resize(n_log);
  for (auto& x : t.times) x = detail::read_pod<std::int64_t>(is);
  t.weights.assign(n_log, WeightVector(n_slots));
  for (auto& w : t.weights) {
    is.read(reinterpret_cast<char*>(w.data()), n_slots * sizeof(double));
  }
  t.patterns.assign(n_log, std::vector<std::vector<std::uint8_t>>(
                               n_ex, std::vector<std::uint8_t>(n_vert)));
  for (auto& snap : t.patterns)
    for (auto& p : snap) is.read(reinterpret_cast<char*>(p.data()), n_vert);
  t.etas.resize(t.steps);
  for (auto& e : t.etas) e = detail::read_pod<double>(is);
  t.grads.assign(t.steps, std::vector<double>(n_slots));
  for (auto& d : t.grads) is.read(reinterpret_cast<char*>(d.data()), n_slots * sizeof(double));
  t.risks.resize(t.steps + 1);
  for (auto& r : t.risks) r = detail::read_pod<double>(is);
  detail::check(static_cast<bool>(is), path + " is truncated");
  return t;
}

// One row per logged step. The final row has no step to take, so its eta
// field is empty.
inline void trajectory_csv(const Trajectory& t, const std::string& path,
                           bool include_weights) {
  std::ofstream os(path);
  detail::check(static_cast<bool>(os), "cannot open " + path + " for writing");
  os << "step,eta,risk";
  if (include_weights && !t.weights.empty())
    for (std::size_t s = 0; s < t.weights[0].size(); ++s) os << ",w" << s;
  os << "\n";
  for (int k = 0; k < t.logged(); ++k) {
    long long step = t.times[k];
    os << step << ",";
    if (step < t.steps) os << format_double(t.etas[step]);
    os << "," << format_double(t.risks[step]);
    if (include_weights)
      for (double w : t.weights[k]) os << "," << format_double(w);
    os << "\n";
  }
}

}  // namespace pathflow
