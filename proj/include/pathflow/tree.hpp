// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "pathflow/paths.hpp"

namespace pathflow {

// The unrolled form of a graph: one node per suffix path (any vertex to the
// output, the trivial path {o} included), an edge from p to q when p extends
// q by one edge at the far end. That containment order makes a tree rooted at
// {o}; leaves are exactly the full input-to-output paths.
struct UnrolledNode {
  std::vector<int> suffix;  // vertex sequence, furthest vertex first, output last
  int graph_vertex = -1;    // suffix.front()
  ActivationKind act;       // activation of graph_vertex
  int parent = -1;
  int parent_slot = -1;  // slot of the suffix's furthest edge
  std::vector<int> children;
  int leaf_index = -1;  // index into the PathSet when the suffix is a full path
};

struct UnrolledTree {
  int root = 0;
  std::vector<UnrolledNode> nodes;  // BFS order, parents precede children
  int rho = 0;
};

inline UnrolledTree unroll(const ComputationGraph& g, const PathSet& ps) {
  std::map<std::vector<int>, int> path_index;
  for (int i = 0; i < static_cast<int>(ps.paths.size()); ++i)
    path_index[ps.paths[i].vertices] = i;

  UnrolledTree t;
  UnrolledNode root;
  root.suffix = {g.output};
  root.graph_vertex = g.output;
  root.act = g.act[g.output];
  t.nodes.push_back(std::move(root));

  for (int i = 0; i < static_cast<int>(t.nodes.size()); ++i) {
    int v = t.nodes[i].graph_vertex;
    if (g.is_input(v)) {
      t.nodes[i].leaf_index = path_index.at(t.nodes[i].suffix);
      ++t.rho;
      continue;
    }
    for (int e : g.in_edges[v]) {  // sorted by src id
      UnrolledNode child;
      child.suffix.reserve(t.nodes[i].suffix.size() + 1);
      child.suffix.push_back(g.edges[e].src);
      child.suffix.insert(child.suffix.end(), t.nodes[i].suffix.begin(),
                          t.nodes[i].suffix.end());
      child.graph_vertex = g.edges[e].src;
      child.act = g.act[child.graph_vertex];
      child.parent = i;
      child.parent_slot = g.edges[e].slot;
      t.nodes[i].children.push_back(static_cast<int>(t.nodes.size()));
      t.nodes.push_back(std::move(child));
    }
  }
  return t;
}

// Evaluates the unrolled tree on a raw input; must agree with forward().
inline double evaluate_unrolled(const ComputationGraph& g, const UnrolledTree& t,
                                const WeightVector& w, const std::vector<double>& x) {
  std::vector<double> val(t.nodes.size(), 0.0);
  for (int i = static_cast<int>(t.nodes.size()) - 1; i >= 0; --i) {
    const UnrolledNode& n = t.nodes[i];
    if (n.children.empty()) {
      val[i] = x[g.input_pos[n.graph_vertex]];
    } else {
      double s = 0.0;
      for (int c : n.children) s += w[t.nodes[c].parent_slot] * val[c];
      val[i] = n.act.apply(s);
    }
  }
  return val[t.root];
}

enum class TreeForm {
  Signed,    // leaves read signed path values h
  Absolute,  // leaves read absolute path values h'
};

// The pulled-back tree: every edge carries only a sign, magnitudes having
// been pushed into the leaf inputs. In the Signed form each leaf hangs off an
// extra linear node whose edge carries the product of the path's weight
// signs, so the leaf can read the signed path value directly.
struct TreeNode {
  ActivationKind act;
  int parent = -1;
  double sign = 1.0;  // on the edge to parent; root keeps 1
  std::vector<int> children;
  int leaf_index = -1;
  std::vector<int> suffix;  // originating suffix path; empty for inserted nodes
};

struct TreeNetwork {
  int root = 0;
  std::vector<TreeNode> nodes;
  int rho = 0;
  TreeForm form = TreeForm::Signed;
  bool zero_weight = false;  // some edge weight was exactly 0; its sign was taken as +1
};

namespace detail {

inline double sign_of(double x, bool* zero_seen) {
  if (x == 0.0 && zero_seen) *zero_seen = true;
  return x >= 0.0 ? 1.0 : -1.0;
}

}  // namespace detail

// Pushes weight magnitudes leafward through the tree, top down. After the
// pass every internal edge carries sgn of its original weight and the value
// accumulated at a leaf equals the absolute path value h'.
inline TreeNetwork pull_back(const ComputationGraph& g, const UnrolledTree& t,
                             const WeightVector& w, TreeForm form = TreeForm::Signed) {
  detail::check(static_cast<int>(w.size()) == g.num_slots, "weight vector size mismatch");

  TreeNetwork out;
  out.form = form;
  out.rho = t.rho;
  out.nodes.resize(t.nodes.size());

  std::vector<double> pulled(t.nodes.size(), 0.0);
  for (int i = 1; i < static_cast<int>(t.nodes.size()); ++i)
    pulled[i] = w[t.nodes[i].parent_slot];

  for (int i = 0; i < static_cast<int>(t.nodes.size()); ++i) {
    const UnrolledNode& n = t.nodes[i];
    TreeNode& m = out.nodes[i];
    m.act = n.act;
    m.parent = n.parent;
    m.children = n.children;
    m.leaf_index = n.leaf_index;
    m.suffix = n.suffix;
    if (i == t.root) continue;
    double pw = pulled[i];
    m.sign = detail::sign_of(pw, &out.zero_weight);
    for (int c : n.children) pulled[c] *= std::fabs(pw);
  }

  if (form == TreeForm::Signed) {
    // Subdivide each leaf edge with a linear node carrying the path sign, so
    // the leaf consumes the signed path value and the original edge keeps the
    // sign of the path's furthest weight.
    for (int i = 0; i < static_cast<int>(t.nodes.size()); ++i) {
      if (t.nodes[i].leaf_index < 0) continue;
      double path_sign = 1.0;
      for (int p = i; p != t.root; p = t.nodes[p].parent)
        path_sign *= detail::sign_of(w[t.nodes[p].parent_slot], nullptr);
      TreeNode sub;
      sub.act = ActivationKind::linear();
      sub.parent = out.nodes[i].parent;
      sub.sign = out.nodes[i].sign;
      sub.children = {i};
      int sub_id = static_cast<int>(out.nodes.size());
      auto& siblings = out.nodes[sub.parent].children;
      std::replace(siblings.begin(), siblings.end(), i, sub_id);
      out.nodes[i].parent = sub_id;
      out.nodes[i].sign = path_sign;
      out.nodes.push_back(std::move(sub));
    }
  }
  return out;
}

// Evaluates the tree on a vector of path values (h for the Signed form, h'
// for the Absolute form).
inline double evaluate_tree(const TreeNetwork& t, const std::vector<double>& h) {
  detail::check(static_cast<int>(h.size()) == t.rho, "path value size mismatch");
  auto eval = [&](auto&& self, int i) -> double {
    const TreeNode& n = t.nodes[i];
    if (n.leaf_index >= 0) return h[n.leaf_index];
    double s = 0.0;
    for (int c : n.children) s += t.nodes[c].sign * self(self, c);
    return n.act.apply(s);
  };
  return eval(eval, t.root);
}

// Full decomposition: the network output equals the tree applied to the path
// values, for every input.
inline TreeNetwork decompose(const ComputationGraph& g, const PathSet& ps,
                             const WeightVector& w, TreeForm form = TreeForm::Signed) {
  return pull_back(g, unroll(g, ps), w, form);
}

}  // namespace pathflow
