// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathflow/activation.hpp"

namespace pathflow {

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Directed edge src -> dst reading its weight from parameter slot `slot`.
// Distinct edges may share a slot (weight sharing); the builder only does this
// for convolutional blocks, but raw graphs may do as they please.
struct Edge {
  int src = -1;
  int dst = -1;
  int slot = -1;
};

// A declared layer: a set of parameter slots whose edges cut every
// input-to-output path exactly once. Builders declare one per weight matrix,
// per convolution tensor, and two per residual block (the two stackings).
struct DeclaredLayer {
  std::string name;
  std::vector<int> slots;
};

// Builder metadata for one architectural block. Raw (hand-assembled) graphs
// carry no blocks; everything that needs a matrix view of the parameters
// requires them.
struct BlockInfo {
  enum class Kind { FullyConnected, Conv1D, ResNetFree };

  Kind kind = Kind::FullyConnected;
  ActivationKind activation;

  // FullyConnected: rows n_out, cols n_in, slot (t,s) = slot_base + t*n_in + s.
  int n_in = 0, n_out = 0;

  // Conv1D: in channels a, kernel width b, out channels c.
  // slot (ch,q,k) = slot_base + k*a*b + ch*b + q.
  // Interface vectors are position-major: flat index = pos*channels + ch.
  int a = 0, b = 0, c = 0, stride = 1, len_in = 0, len_out = 0;

  // ResNetFree: x in R^a, hidden R^b, out R^c; Y (b x a) at y_base,
  // U (c x b) at u_base, Z (c x a) at z_base, all row-major.
  // Frozen-skip variants (identity/diagonal) keep only diagonal Z slots.
  int y_base = 0, u_base = 0, z_base = 0;
  bool z_diagonal = false;
  bool z_frozen = false;

  int slot_base = 0, slot_count = 0;

  std::vector<int> in_vertices;
  std::vector<int> out_vertices;
  std::vector<int> hidden_vertices;  // ResNet only
};

struct ComputationGraph {
  std::vector<ActivationKind> act;  // per vertex (input entries present, linear)
  std::vector<int> inputs;          // ordered input vertex ids
  int output = -1;
  std::vector<Edge> edges;
  int num_slots = 0;
  std::vector<std::uint8_t> learnable;  // per slot
  std::vector<double> frozen_value;     // per slot, read where learnable == 0; may be empty
  std::vector<DeclaredLayer> layers;
  std::vector<BlockInfo> blocks;

  // Derived, filled by finalize().
  std::vector<std::vector<int>> in_edges;   // edge ids, sorted by src id
  std::vector<std::vector<int>> out_edges;  // edge ids, sorted by dst id
  std::vector<int> topo;                    // topological vertex order
  std::vector<int> input_pos;               // vertex id -> index in inputs, else -1

  int num_vertices() const { return static_cast<int>(act.size()); }
  bool is_input(int v) const { return input_pos[v] >= 0; }

  int edge_between(int src, int dst) const {
    for (int e : out_edges[src])
      if (edges[e].dst == dst) return e;
    return -1;
  }

  std::vector<int> layer_edges(int layer_index) const {
    const auto& slots = layers.at(layer_index).slots;
    std::set<int> in_layer(slots.begin(), slots.end());
    std::vector<int> result;
    for (int e = 0; e < static_cast<int>(edges.size()); ++e)
      if (in_layer.count(edges[e].slot)) result.push_back(e);
    return result;
  }

  int find_layer(const std::string& name) const {
    for (int i = 0; i < static_cast<int>(layers.size()); ++i)
      if (layers[i].name == name) return i;
    return -1;
  }

  void finalize();
};

namespace detail {

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

}  // namespace detail

inline void ComputationGraph::finalize() {
  const int n = num_vertices();
  detail::check(n > 0, "graph has no vertices");
  detail::check(output >= 0 && output < n, "output vertex out of range");
  detail::check(!inputs.empty(), "graph has no inputs");

  input_pos.assign(n, -1);
  for (int i = 0; i < static_cast<int>(inputs.size()); ++i) {
    int v = inputs[i];
    detail::check(v >= 0 && v < n, "input vertex out of range");
    detail::check(input_pos[v] < 0, "duplicate input vertex");
    input_pos[v] = i;
  }

  in_edges.assign(n, {});
  out_edges.assign(n, {});
  std::set<std::pair<int, int>> seen;
  for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
    const Edge& ed = edges[e];
    detail::check(ed.src >= 0 && ed.src < n && ed.dst >= 0 && ed.dst < n,
                  "edge endpoint out of range");
    detail::check(ed.src != ed.dst, "self loop");
    detail::check(seen.insert({ed.src, ed.dst}).second, "parallel edge");
    detail::check(ed.slot >= 0 && ed.slot < num_slots, "edge slot out of range");
    in_edges[ed.dst].push_back(e);
    out_edges[ed.src].push_back(e);
  }
  for (int v = 0; v < n; ++v) {
    auto by_src = [&](int x, int y) { return edges[x].src < edges[y].src; };
    auto by_dst = [&](int x, int y) { return edges[x].dst < edges[y].dst; };
    std::sort(in_edges[v].begin(), in_edges[v].end(), by_src);
    std::sort(out_edges[v].begin(), out_edges[v].end(), by_dst);
  }

  for (int v : inputs) detail::check(in_edges[v].empty(), "input vertex has in-edges");
  detail::check(out_edges[output].empty(), "output vertex has out-edges");

  detail::check(static_cast<int>(learnable.size()) == num_slots,
                "learnable flags do not match slot count");
  detail::check(frozen_value.empty() || static_cast<int>(frozen_value.size()) == num_slots,
                "frozen values do not match slot count");
  for (const auto& layer : layers)
    for (int s : layer.slots)
      detail::check(s >= 0 && s < num_slots, "layer slot out of range");

  // Kahn with smallest-id-first tie break; order is deterministic.
  topo.clear();
  std::vector<int> indeg(n, 0);
  for (const Edge& ed : edges) ++indeg[ed.dst];
  std::set<int> ready;
  for (int v = 0; v < n; ++v)
    if (indeg[v] == 0) ready.insert(v);
  while (!ready.empty()) {
    int v = *ready.begin();
    ready.erase(ready.begin());
    topo.push_back(v);
    for (int e : out_edges[v])
      if (--indeg[edges[e].dst] == 0) ready.insert(edges[e].dst);
  }
  detail::check(static_cast<int>(topo.size()) == n, "graph has a cycle");

  // Every vertex must lie on some input-to-output path.
  std::vector<std::uint8_t> fwd(n, 0), bwd(n, 0);
  for (int v : inputs) fwd[v] = 1;
  for (int v : topo)
    if (fwd[v])
      for (int e : out_edges[v]) fwd[edges[e].dst] = 1;
  bwd[output] = 1;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it)
    if (bwd[*it])
      for (int e : in_edges[*it]) bwd[edges[e].src] = 1;
  for (int v = 0; v < n; ++v)
    detail::check(fwd[v] && bwd[v],
                  "vertex " + std::to_string(v) + " is not on any input-output path");
}

using WeightVector = std::vector<double>;

struct ForwardTrace {
  std::vector<double> pre;
  std::vector<double> post;
  double output = 0.0;
};

// Evaluates the network. Inputs are read in the order of graph.inputs; no
// activation is applied at input vertices.
inline ForwardTrace forward(const ComputationGraph& g, const WeightVector& w,
                            const std::vector<double>& x) {
  detail::check(static_cast<int>(w.size()) == g.num_slots, "weight vector size mismatch");
  detail::check(x.size() == g.inputs.size(), "input size mismatch");
  ForwardTrace t;
  const int n = g.num_vertices();
  t.pre.assign(n, 0.0);
  t.post.assign(n, 0.0);
  for (int v : g.topo) {
    if (g.is_input(v)) {
      t.pre[v] = t.post[v] = x[g.input_pos[v]];
      continue;
    }
    double s = 0.0;
    for (int e : g.in_edges[v]) s += w[g.edges[e].slot] * t.post[g.edges[e].src];
    t.pre[v] = s;
    t.post[v] = g.act[v].apply(s);
  }
  t.output = t.post[g.output];
  return t;
}

// Pattern bit per vertex: 1 for linear vertices and for rectifiers with
// nonnegative preactivation. Input vertices count as 1.
inline std::vector<std::uint8_t> activation_pattern(const ComputationGraph& g,
                                                    const ForwardTrace& t) {
  std::vector<std::uint8_t> p(g.num_vertices(), 0);
  for (int v = 0; v < g.num_vertices(); ++v)
    p[v] = (g.is_input(v) || g.act[v].active(t.pre[v])) ? 1 : 0;
  return p;
}

}  // namespace pathflow
