// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the test binaries: independent oracles and generators.
// Nothing in here may call the library routine it is used to check.
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "pathflow/blocks.hpp"
#include "pathflow/graph.hpp"

namespace support {

using namespace pathflow;

// Plain recursive path counter, the oracle for the library's DP count.
inline std::uint64_t dfs_count_paths(const ComputationGraph& g, int v) {
  if (v == g.output) return 1;
  std::uint64_t n = 0;
  for (int e : g.out_edges[v]) n += dfs_count_paths(g, g.edges[e].dst);
  return n;
}

inline std::uint64_t dfs_count_paths(const ComputationGraph& g) {
  std::uint64_t n = 0;
  for (int v : g.inputs) n += dfs_count_paths(g, v);
  return n;
}

// Random DAG with at most max_vertices vertices, every vertex on some
// input-to-output path, one slot per edge, mixed activations. Vertex ids are
// already a topological order.
inline ComputationGraph random_dag(std::mt19937_64& rng, int max_vertices = 12,
                                   bool allow_leaky = true) {
  std::uniform_int_distribution<int> vcount(3, max_vertices);
  int n = vcount(rng);
  int d = std::uniform_int_distribution<int>(1, std::min(3, n - 2))(rng);

  ComputationGraph g;
  for (int v = 0; v < n; ++v) {
    double roll = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    ActivationKind a = ActivationKind::linear();
    if (roll < 0.4)
      a = ActivationKind::relu();
    else if (allow_leaky && roll < 0.55)
      a = ActivationKind::leaky_relu(0.1);
    g.act.push_back(a);
  }
  for (int v = 0; v < d; ++v) {
    g.act[v] = ActivationKind::linear();
    g.inputs.push_back(v);
  }
  g.output = n - 1;

  std::vector<std::vector<std::uint8_t>> adj(n, std::vector<std::uint8_t>(n, 0));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int v = d; v < n; ++v) {
    bool any = false;
    for (int u = 0; u < v; ++u)
      if (coin(rng) < 0.45) {
        adj[u][v] = 1;
        any = true;
      }
    if (!any) {
      int u = std::uniform_int_distribution<int>(0, v - 1)(rng);
      adj[u][v] = 1;
    }
  }
  // every non-output vertex needs a way forward (never into an input)
  for (int v = 0; v < n - 1; ++v) {
    bool any = false;
    for (int u = v + 1; u < n; ++u) any = any || adj[v][u];
    if (!any) {
      int u = std::uniform_int_distribution<int>(std::max(v + 1, d), n - 1)(rng);
      adj[v][u] = 1;
    }
  }
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v)
      if (adj[u][v]) {
        g.edges.push_back({u, v, g.num_slots});
        ++g.num_slots;
      }
  g.learnable.assign(g.num_slots, 1);
  g.frozen_value.assign(g.num_slots, 0.0);
  g.finalize();
  return g;
}

// Nonzero weights bounded away from 0 so sign bookkeeping stays exact.
inline WeightVector random_weights(const ComputationGraph& g, std::mt19937_64& rng,
                                   double lo = 0.1, double hi = 1.5) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::uniform_int_distribution<int> flip(0, 1);
  WeightVector w(g.num_slots);
  for (int s = 0; s < g.num_slots; ++s) w[s] = (flip(rng) ? 1.0 : -1.0) * mag(rng);
  return w;
}

inline std::vector<double> random_input(std::size_t d, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> x(d);
  for (double& v : x) v = u(rng);
  return x;
}

// Clone with weight sharing removed: every edge gets its own slot, learnable,
// initialized from the shared slot's value. Summing the clone's gradient over
// the edges tied to one original slot must reproduce the shared gradient.
struct UntiedClone {
  ComputationGraph graph;
  WeightVector weights;
  std::vector<int> slot_of_edge;  // original slot per clone slot
};

inline UntiedClone untie_slots(const ComputationGraph& g, const WeightVector& w) {
  UntiedClone c;
  c.graph.act = g.act;
  c.graph.inputs = g.inputs;
  c.graph.output = g.output;
  for (const Edge& e : g.edges) {
    int s = static_cast<int>(c.slot_of_edge.size());
    c.graph.edges.push_back({e.src, e.dst, s});
    c.slot_of_edge.push_back(e.slot);
    c.weights.push_back(w[e.slot]);
    c.graph.learnable.push_back(g.learnable[e.slot]);
    c.graph.frozen_value.push_back(
        g.frozen_value.empty() ? 0.0 : g.frozen_value[e.slot]);
  }
  c.graph.num_slots = static_cast<int>(c.graph.edges.size());
  c.graph.finalize();
  return c;
}

}  // namespace support
