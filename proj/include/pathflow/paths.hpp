// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pathflow/graph.hpp"

namespace pathflow {

struct PathExplosionError : std::runtime_error {
  std::uint64_t count;
  explicit PathExplosionError(std::uint64_t n)
      : std::runtime_error("path count " + std::to_string(n) + " exceeds cap"), count(n) {}
};

constexpr std::uint64_t kDefaultPathCap = 1'000'000;

// A full input-to-output path, stored both as vertex ids and edge ids.
struct Path {
  std::vector<int> vertices;
  std::vector<int> edges;
  int input_index = -1;  // position of vertices.front() in graph.inputs
};

struct PathSet {
  std::vector<Path> paths;
  std::size_t size() const { return paths.size(); }
};

// Saturating count of input-to-output paths, no enumeration.
inline std::uint64_t count_paths(const ComputationGraph& g) {
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::uint64_t> ways(g.num_vertices(), 0);
  ways[g.output] = 1;
  for (auto it = g.topo.rbegin(); it != g.topo.rend(); ++it) {
    int v = *it;
    if (v == g.output) continue;
    std::uint64_t total = 0;
    for (int e : g.out_edges[v]) {
      std::uint64_t add = ways[g.edges[e].dst];
      total = (total > kMax - add) ? kMax : total + add;
    }
    ways[v] = total;
  }
  std::uint64_t total = 0;
  for (int v : g.inputs) {
    total = (total > kMax - ways[v]) ? kMax : total + ways[v];
  }
  return total;
}

// Enumerates all input-to-output paths in lexicographic vertex-sequence order.
inline PathSet enumerate_paths(const ComputationGraph& g,
                               std::uint64_t cap = kDefaultPathCap) {
  std::uint64_t n = count_paths(g);
  if (n > cap) throw PathExplosionError(n);

  PathSet ps;
  ps.paths.reserve(static_cast<std::size_t>(n));
  std::vector<int> vstack, estack;
  auto dfs = [&](auto&& self, int v) -> void {
    vstack.push_back(v);
    if (v == g.output) {
      Path p;
      p.vertices = vstack;
      p.edges = estack;
      p.input_index = g.input_pos[p.vertices.front()];
      ps.paths.push_back(std::move(p));
    } else {
      for (int e : g.out_edges[v]) {  // sorted by dst id
        estack.push_back(e);
        self(self, g.edges[e].dst);
        estack.pop_back();
      }
    }
    vstack.pop_back();
  };
  std::vector<int> starts = g.inputs;
  std::sort(starts.begin(), starts.end());
  for (int v : starts) dfs(dfs, v);
  return ps;
}

// h(x): one coordinate per path, x at the path's input times the product of
// the path's edge weights. absolute=true takes |w_e| instead.
inline std::vector<double> path_enumeration(const ComputationGraph& g, const PathSet& ps,
                                            const WeightVector& w,
                                            const std::vector<double>& x,
                                            bool absolute = false) {
  detail::check(static_cast<int>(w.size()) == g.num_slots, "weight vector size mismatch");
  detail::check(x.size() == g.inputs.size(), "input size mismatch");
  std::vector<double> h;
  h.reserve(ps.size());
  for (const Path& p : ps.paths) {
    double v = x[p.input_index];
    for (int e : p.edges) {
      double we = w[g.edges[e].slot];
      v *= absolute ? std::fabs(we) : we;
    }
    h.push_back(v);
  }
  return h;
}

// Per-path activity bit: 1 iff every non-input vertex on the path is active
// in the given trace. Summing Z_p * h_p over paths recovers the network
// output for linear/ReLU vertices.
inline std::vector<std::uint8_t> zp_indicator(const ComputationGraph& g, const PathSet& ps,
                                              const ForwardTrace& trace) {
  std::vector<std::uint8_t> pattern = activation_pattern(g, trace);
  std::vector<std::uint8_t> z;
  z.reserve(ps.size());
  for (const Path& p : ps.paths) {
    std::uint8_t on = 1;
    for (int v : p.vertices)
      if (!g.is_input(v) && !pattern[v]) {
        on = 0;
        break;
      }
    z.push_back(on);
  }
  return z;
}

}  // namespace pathflow
