// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pathflow/graph.hpp"
#include "pathflow/matrix.hpp"
#include "pathflow/represent.hpp"
#include "pathflow/train.hpp"

// Conserved-quantity checks over training trajectories. All defects are
// measured against their value at step 0, so a series starts at exactly 0 and
// the verdict compares the worst drift against tol * (1 + |w(0)|^2).

namespace pathflow {

enum class Verdict { Invariant, Drifting, NotApplicable };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Invariant: return "invariant";
    case Verdict::Drifting: return "drifting";
    default: return "not_applicable";
  }
}

struct DefectSeries {
  std::string check_id;
  Verdict verdict = Verdict::NotApplicable;
  std::string reason;          // set when NotApplicable
  double tol = 1e-3;           // relative; absolute threshold is tol * norm_scale
  double norm_scale = 1.0;     // 1 + squared norm of the initial weights
  double baseline = 0.0;       // tracked quantity at step 0 (scalar checks only)
  std::vector<double> times;
  std::vector<double> values;

  double max_abs() const {
    double m = 0;
    for (double x : values) m = std::max(m, std::fabs(x));
    return m;
  }
};

namespace detail {

inline DefectSeries na_series(std::string id, std::string reason, double tol) {
  DefectSeries s;
  s.check_id = std::move(id);
  s.verdict = Verdict::NotApplicable;
  s.reason = std::move(reason);
  s.tol = tol;
  return s;
}

inline double weight_norm_scale(const Trajectory& traj) {
  double n2 = 0;
  for (double x : traj.initial()) n2 += x * x;
  return 1.0 + n2;
}

inline void finish_verdict(DefectSeries& s) {
  s.verdict = s.max_abs() <= s.tol * s.norm_scale ? Verdict::Invariant : Verdict::Drifting;
}

inline std::vector<int> slot_use_count(const ComputationGraph& g) {
  std::vector<int> n(static_cast<std::size_t>(g.num_slots), 0);
  for (const Edge& e : g.edges) ++n[static_cast<std::size_t>(e.slot)];
  return n;
}

// The single-vertex conservation law needs every weight touching v to be
// learnable and private to its edge.
inline bool incident_slots_free(const ComputationGraph& g, const std::vector<int>& use, int v,
                                std::string* why) {
  for (const auto* adj : {&g.in_edges[v], &g.out_edges[v]}) {
    for (int e : *adj) {
      int slot = g.edges[static_cast<std::size_t>(e)].slot;
      if (!g.learnable[static_cast<std::size_t>(slot)]) {
        if (why) *why = "incident slot " + std::to_string(slot) + " is frozen";
        return false;
      }
      if (use[static_cast<std::size_t>(slot)] != 1) {
        if (why) *why = "incident slot " + std::to_string(slot) + " is shared";
        return false;
      }
    }
  }
  return true;
}

inline std::vector<int> in_sources(const ComputationGraph& g, int v) {
  std::vector<int> n;
  for (int e : g.in_edges[v]) n.push_back(g.edges[static_cast<std::size_t>(e)].src);
  return n;  // sorted by src (finalize orders in_edges that way)
}

inline std::vector<int> out_targets(const ComputationGraph& g, int v) {
  std::vector<int> n;
  for (int e : g.out_edges[v]) n.push_back(g.edges[static_cast<std::size_t>(e)].dst);
  return n;
}

}  // namespace detail

// Drift of sum-in(w^2) - sum-out(w^2) at vertex v.
inline DefectSeries vertex_defect(const ComputationGraph& g, const Trajectory& traj, int v,
                                  double tol = 1e-3) {
  std::string id = "vertex_defect(v=" + std::to_string(v) + ")";
  if (v < 0 || v >= g.num_vertices()) return detail::na_series(id, "no such vertex", tol);
  if (g.is_input(v) || v == g.output)
    return detail::na_series(id, "vertex is an input or the output", tol);
  std::string why;
  if (!detail::incident_slots_free(g, detail::slot_use_count(g), v, &why))
    return detail::na_series(id, why, tol);

  DefectSeries s;
  s.check_id = std::move(id);
  s.tol = tol;
  s.norm_scale = detail::weight_norm_scale(traj);
  auto balance = [&](const WeightVector& w) {
    double q = 0;
    for (int e : g.in_edges[v]) {
      double x = w[static_cast<std::size_t>(g.edges[static_cast<std::size_t>(e)].slot)];
      q += x * x;
    }
    for (int e : g.out_edges[v]) {
      double x = w[static_cast<std::size_t>(g.edges[static_cast<std::size_t>(e)].slot)];
      q -= x * x;
    }
    return q;
  };
  s.baseline = balance(traj.initial());
  for (int i = 0; i < traj.logged(); ++i) {
    s.times.push_back(static_cast<double>(traj.times[static_cast<std::size_t>(i)]));
    s.values.push_back(balance(traj.weights[static_cast<std::size_t>(i)]) - s.baseline);
  }
  detail::finish_verdict(s);
  return s;
}

// Drift of sum-in(w_au w_av) - sum-out(w_ub w_vb) for two vertices with the
// same in/out neighbourhoods; requires their activation patterns to agree on
// every example at every logged step.
inline DefectSeries pair_defect(const ComputationGraph& g, const Trajectory& traj, int u, int v,
                                double tol = 1e-3) {
  std::string id = "pair_defect(u=" + std::to_string(u) + ",v=" + std::to_string(v) + ")";
  if (u < 0 || v < 0 || u >= g.num_vertices() || v >= g.num_vertices() || u == v)
    return detail::na_series(id, "invalid vertex pair", tol);
  for (int x : {u, v})
    if (g.is_input(x) || x == g.output)
      return detail::na_series(id, "vertex is an input or the output", tol);
  auto use = detail::slot_use_count(g);
  std::string why;
  for (int x : {u, v})
    if (!detail::incident_slots_free(g, use, x, &why)) return detail::na_series(id, why, tol);

  if (detail::in_sources(g, u) != detail::in_sources(g, v) ||
      detail::out_targets(g, u) != detail::out_targets(g, v))
    return detail::na_series(id, "in/out neighbourhoods differ", tol);

  for (int i = 0; i < traj.logged(); ++i)
    for (const auto& pat : traj.patterns[static_cast<std::size_t>(i)])
      if (pat[static_cast<std::size_t>(u)] != pat[static_cast<std::size_t>(v)])
        return detail::na_series(
            id,
            "activation patterns diverge at step " +
                std::to_string(traj.times[static_cast<std::size_t>(i)]),
            tol);

  DefectSeries s;
  s.check_id = std::move(id);
  s.tol = tol;
  s.norm_scale = detail::weight_norm_scale(traj);
  auto slot_at = [&](const std::vector<int>& edge_list, std::size_t k) {
    return static_cast<std::size_t>(g.edges[static_cast<std::size_t>(edge_list[k])].slot);
  };
  auto balance = [&](const WeightVector& w) {
    double q = 0;
    for (std::size_t k = 0; k < g.in_edges[u].size(); ++k)
      q += w[slot_at(g.in_edges[u], k)] * w[slot_at(g.in_edges[v], k)];
    for (std::size_t k = 0; k < g.out_edges[u].size(); ++k)
      q -= w[slot_at(g.out_edges[u], k)] * w[slot_at(g.out_edges[v], k)];
    return q;
  };
  s.baseline = balance(traj.initial());
  for (int i = 0; i < traj.logged(); ++i) {
    s.times.push_back(static_cast<double>(traj.times[static_cast<std::size_t>(i)]));
    s.values.push_back(balance(traj.weights[static_cast<std::size_t>(i)]) - s.baseline);
  }
  detail::finish_verdict(s);
  return s;
}

namespace detail {

inline unsigned long long sat_add(unsigned long long a, unsigned long long b) {
  unsigned long long s = a + b;
  return s < a ? ~0ull : s;
}
inline unsigned long long sat_mul(unsigned long long a, unsigned long long b) {
  if (a == 0 || b == 0) return 0;
  unsigned long long p = a * b;
  return p / a != b ? ~0ull : p;
}

// Paths-from-any-input / paths-to-output counts per vertex, with an optional
// set of removed slots.
struct PathCounts {
  std::vector<unsigned long long> from_in, to_out;
  unsigned long long total = 0;
};

inline PathCounts path_counts(const ComputationGraph& g, const std::set<int>* removed_slots) {
  PathCounts pc;
  auto n = static_cast<std::size_t>(g.num_vertices());
  pc.from_in.assign(n, 0);
  pc.to_out.assign(n, 0);
  auto keep = [&](int e) {
    return !removed_slots || !removed_slots->count(g.edges[static_cast<std::size_t>(e)].slot);
  };
  for (int v : g.topo) {
    if (g.is_input(v)) pc.from_in[static_cast<std::size_t>(v)] = 1;
    for (int e : g.in_edges[v])
      if (keep(e))
        pc.from_in[static_cast<std::size_t>(v)] =
            sat_add(pc.from_in[static_cast<std::size_t>(v)],
                    pc.from_in[static_cast<std::size_t>(g.edges[static_cast<std::size_t>(e)].src)]);
  }
  for (auto it = g.topo.rbegin(); it != g.topo.rend(); ++it) {
    int v = *it;
    if (v == g.output) pc.to_out[static_cast<std::size_t>(v)] = 1;
    for (int e : g.out_edges[v])
      if (keep(e))
        pc.to_out[static_cast<std::size_t>(v)] =
            sat_add(pc.to_out[static_cast<std::size_t>(v)],
                    pc.to_out[static_cast<std::size_t>(g.edges[static_cast<std::size_t>(e)].dst)]);
  }
  for (int v : g.inputs) pc.total = sat_add(pc.total, pc.to_out[static_cast<std::size_t>(v)]);
  return pc;
}

// A slot set is a valid cut layer when every input-output path crosses it
// exactly once.
inline bool crosses_every_path_once(const ComputationGraph& g, const std::set<int>& slots,
                                    std::string* why) {
  PathCounts pc = path_counts(g, nullptr);
  unsigned long long crossings = 0;
  for (const Edge& e : g.edges)
    if (slots.count(e.slot))
      crossings = sat_add(crossings, sat_mul(pc.from_in[static_cast<std::size_t>(e.src)],
                                             pc.to_out[static_cast<std::size_t>(e.dst)]));
  if (crossings > pc.total) {
    if (why) *why = "some path crosses the layer more than once";
    return false;
  }
  if (crossings < pc.total || path_counts(g, &slots).total != 0) {
    if (why) *why = "some path avoids the layer";
    return false;
  }
  return true;
}

}  // namespace detail

// Drift of the difference of squared layer norms (distinct slots summed once).
inline DefectSeries layer_defect(const ComputationGraph& g, const Trajectory& traj,
                                 const std::string& first, const std::string& second,
                                 double tol = 1e-3) {
  std::string id = "layer_defect(" + first + "," + second + ")";
  int fi = g.find_layer(first), si = g.find_layer(second);
  if (fi < 0 || si < 0) return detail::na_series(id, "no such declared layer", tol);
  const DeclaredLayer& f = g.layers[static_cast<std::size_t>(fi)];
  const DeclaredLayer& fp = g.layers[static_cast<std::size_t>(si)];
  for (const DeclaredLayer* layer : {&f, &fp}) {
    for (int slot : layer->slots)
      if (!g.learnable[static_cast<std::size_t>(slot)])
        return detail::na_series(id, "layer " + layer->name + " has frozen slots", tol);
    std::set<int> slots(layer->slots.begin(), layer->slots.end());
    std::string why;
    if (!detail::crosses_every_path_once(g, slots, &why))
      return detail::na_series(id, "layer " + layer->name + ": " + why, tol);
  }

  DefectSeries s;
  s.check_id = std::move(id);
  s.tol = tol;
  s.norm_scale = detail::weight_norm_scale(traj);
  auto balance = [&](const WeightVector& w) { return layer_frob2(g, f, w) - layer_frob2(g, fp, w); };
  s.baseline = balance(traj.initial());
  for (int i = 0; i < traj.logged(); ++i) {
    s.times.push_back(static_cast<double>(traj.times[static_cast<std::size_t>(i)]));
    s.values.push_back(balance(traj.weights[static_cast<std::size_t>(i)]) - s.baseline);
  }
  detail::finish_verdict(s);
  return s;
}

// ---------------------------------------------------------------------------
// Matrix-level conservation across adjacent blocks.

struct MatrixPairSpec {
  int first_block = -1;
  int second_block = -1;  // ignored when within_resnet
  bool within_resnet = false;
};

namespace detail {

// Everything needed to evaluate the tracked Gram difference at one snapshot.
struct GramPlan {
  // Vertices realizing each shared index (one per index for plain layers; a
  // channel's whole position grid for conv outputs).
  std::vector<std::vector<int>> index_vertices;
  std::function<Mat(const WeightVector&)> first;   // rows indexed by shared index
  std::function<Mat(const WeightVector&)> second;  // cols indexed by shared index
  std::string label;
};

inline bool block_slots_learnable(const ComputationGraph& g, int base, int count) {
  for (int s = base; s < base + count; ++s)
    if (!g.learnable[static_cast<std::size_t>(s)]) return false;
  return true;
}

// Builds the W1/W2 extractors for an adjacent block pair, or explains why the
// pairing is not covered.
inline bool make_gram_plan(const ComputationGraph& g, const MatrixPairSpec& spec, GramPlan& plan,
                           std::string& why) {
  using Kind = BlockInfo::Kind;
  auto nb = static_cast<int>(g.blocks.size());
  if (spec.first_block < 0 || spec.first_block >= nb) {
    why = "no such block";
    return false;
  }
  const BlockInfo& b1 = g.blocks[static_cast<std::size_t>(spec.first_block)];

  if (spec.within_resnet) {
    if (b1.kind != Kind::ResNetFree) {
      why = "within-block pairing needs a residual block";
      return false;
    }
    if (!block_slots_learnable(g, b1.y_base, b1.b * b1.a) ||
        !block_slots_learnable(g, b1.u_base, b1.c * b1.b)) {
      why = "frozen slots in Y or U";
      return false;
    }
    for (int r = 0; r < b1.b; ++r)
      plan.index_vertices.push_back({b1.hidden_vertices[static_cast<std::size_t>(r)]});
    plan.first = [p = &b1](const WeightVector& w) { return resnet_y(*p, w); };
    plan.second = [p = &b1](const WeightVector& w) { return resnet_u(*p, w); };
    plan.label = "within block " + std::to_string(spec.first_block);
    return true;
  }

  if (spec.second_block < 0 || spec.second_block >= nb) {
    why = "no such block";
    return false;
  }
  const BlockInfo& b2 = g.blocks[static_cast<std::size_t>(spec.second_block)];
  if (b1.out_vertices != b2.in_vertices) {
    why = "blocks are not adjacent";
    return false;
  }

  auto resnet_stack_ok = [&](const BlockInfo& b) {
    return b.kind == Kind::ResNetFree && !b.z_frozen && !b.z_diagonal &&
           block_slots_learnable(g, b.slot_base, b.slot_count);
  };
  auto learnable_whole = [&](const BlockInfo& b) {
    return block_slots_learnable(g, b.slot_base, b.slot_count);
  };

  // Shared index: conv outputs share by channel, everything else per vertex.
  if (b1.kind == Kind::Conv1D) {
    for (int k = 0; k < b1.c; ++k) {
      std::vector<int> grid;
      for (int j = 0; j < b1.len_out; ++j)
        grid.push_back(b1.out_vertices[static_cast<std::size_t>(j * b1.c + k)]);
      plan.index_vertices.push_back(std::move(grid));
    }
  } else {
    for (int v : b1.out_vertices) plan.index_vertices.push_back({v});
  }

  if (b1.kind == Kind::FullyConnected) {
    if (!learnable_whole(b1)) {
      why = "frozen slots in first block";
      return false;
    }
    plan.first = [p = &b1](const WeightVector& w) { return fc_matrix(*p, w); };
  } else if (b1.kind == Kind::Conv1D) {
    if (!learnable_whole(b1)) {
      why = "frozen slots in first block";
      return false;
    }
    plan.first = [p = &b1](const WeightVector& w) { return conv_t1(*p, w); };
  } else {
    if (!resnet_stack_ok(b1)) {
      why = "first block's stacked form needs a free learnable skip";
      return false;
    }
    plan.first = [p = &b1](const WeightVector& w) { return resnet_a(*p, w); };
  }

  bool after_conv = b1.kind == Kind::Conv1D;
  int positions = b1.len_out, channels = b1.c;
  if (b2.kind == Kind::FullyConnected) {
    if (!learnable_whole(b2)) {
      why = "frozen slots in second block";
      return false;
    }
    if (after_conv)
      plan.second = [p = &b2, positions, channels](const WeightVector& w) {
        return rearrange_after_conv(fc_matrix(*p, w), positions, channels);
      };
    else
      plan.second = [p = &b2](const WeightVector& w) { return fc_matrix(*p, w); };
  } else if (b2.kind == Kind::Conv1D) {
    if (!learnable_whole(b2)) {
      why = "frozen slots in second block";
      return false;
    }
    if (!after_conv) {
      why = "pairing into a conv block is only covered after another conv";
      return false;
    }
    plan.second = [p = &b2](const WeightVector& w) { return conv_t2(*p, w); };
  } else {
    if (!resnet_stack_ok(b2)) {
      why = "second block's stacked form needs a free learnable skip";
      return false;
    }
    if (after_conv)
      plan.second = [p = &b2, positions, channels](const WeightVector& w) {
        return rearrange_after_conv(resnet_b(*p, w), positions, channels);
      };
    else
      plan.second = [p = &b2](const WeightVector& w) { return resnet_b(*p, w); };
  }
  plan.label = "blocks " + std::to_string(spec.first_block) + "," +
               std::to_string(spec.second_block);
  return true;
}

// Shared indices whose realizing vertices are active on every example at
// every logged step.
inline std::vector<int> stable_active_indices(const Trajectory& traj, const GramPlan& plan) {
  std::vector<int> active;
  for (std::size_t i = 0; i < plan.index_vertices.size(); ++i) {
    bool ok = true;
    for (int s = 0; ok && s < traj.logged(); ++s)
      for (const auto& pat : traj.patterns[static_cast<std::size_t>(s)]) {
        for (int v : plan.index_vertices[i])
          if (!pat[static_cast<std::size_t>(v)]) {
            ok = false;
            break;
          }
        if (!ok) break;
      }
    if (ok) active.push_back(static_cast<int>(i));
  }
  return active;
}

inline Mat restricted_gap(const GramPlan& plan, const WeightVector& w,
                          const std::vector<int>& idx) {
  Mat g1 = gram_rows(plan.first(w));
  Mat g2 = gram_cols(plan.second(w));
  return subtract(select_both(g2, idx), select_both(g1, idx));
}

}  // namespace detail

// Drift of [W2^T W2 - W1 W1^T] restricted to stably-active shared indices,
// in Frobenius norm.
inline DefectSeries matrix_defect(const ComputationGraph& g, const Trajectory& traj,
                                  const MatrixPairSpec& spec, double tol = 1e-3) {
  detail::GramPlan plan;
  std::string why;
  if (!detail::make_gram_plan(g, spec, plan, why))
    return detail::na_series("matrix_defect(?)", why, tol);
  std::string id = "matrix_defect(" + plan.label + ")";
  std::vector<int> active = detail::stable_active_indices(traj, plan);
  if (active.empty()) return detail::na_series(id, "no stably active shared index", tol);

  DefectSeries s;
  s.check_id = std::move(id);
  s.tol = tol;
  s.norm_scale = detail::weight_norm_scale(traj);
  Mat base = detail::restricted_gap(plan, traj.initial(), active);
  s.baseline = frob(base);
  for (int i = 0; i < traj.logged(); ++i) {
    s.times.push_back(static_cast<double>(traj.times[static_cast<std::size_t>(i)]));
    s.values.push_back(frob(subtract(
        detail::restricted_gap(plan, traj.weights[static_cast<std::size_t>(i)], active), base)));
  }
  detail::finish_verdict(s);
  return s;
}

// ---------------------------------------------------------------------------
// Gradient-descent ledger: telescoped update algebra and slack bounds.

struct GdLedger {
  struct VertexIdentity {
    int v = -1;
    double lhs = 0, rhs = 0;  // in-side / out-side telescoped sums
    double residual_rel = 0;  // |lhs-rhs| / scale
  };
  struct PairIdentity {
    int u = -1, v = -1;
    bool applicable = false;
    std::string reason;
    double lhs = 0, rhs = 0;
    double residual_rel = 0;
  };

  double risk0 = 0;
  std::vector<VertexIdentity> vertices;
  std::vector<PairIdentity> pairs;
  double max_vertex_residual = 0;
  double max_pair_residual = 0;

  long long tracked_slot_pairs = 0;
  double max_abs_slack = 0;  // max over tracked pairs of |sum eta^2 d_e d_f|
  double slack_bound = 0;    // 2 * risk0
  bool slack_ok = false;
};

namespace detail {

// sum over steps of eta^2 d_e d_f for one slot pair.
inline double slack_sum(const Trajectory& traj, int e, int f) {
  double s = 0;
  for (std::size_t t = 0; t < traj.etas.size(); ++t) {
    double eta = traj.etas[t];
    s += eta * eta * traj.grads[t][static_cast<std::size_t>(e)] *
         traj.grads[t][static_cast<std::size_t>(f)];
  }
  return s;
}

struct TelescopedTerm {
  double value = 0;  // w(T) w(T) - w(0) w(0) - sum eta^2 d d over the slot pair
  double scale = 0;  // sum of absolute magnitudes, for relative residuals
};

inline TelescopedTerm telescoped(const Trajectory& traj, int slot_a, int slot_b) {
  const WeightVector& w0 = traj.initial();
  const WeightVector& wf = traj.final_weights();
  double head = wf[static_cast<std::size_t>(slot_a)] * wf[static_cast<std::size_t>(slot_b)] -
                w0[static_cast<std::size_t>(slot_a)] * w0[static_cast<std::size_t>(slot_b)];
  double cross = slack_sum(traj, slot_a, slot_b);
  TelescopedTerm t;
  t.value = head - cross;
  t.scale = std::fabs(wf[static_cast<std::size_t>(slot_a)] * wf[static_cast<std::size_t>(slot_b)]) +
            std::fabs(w0[static_cast<std::size_t>(slot_a)] * w0[static_cast<std::size_t>(slot_b)]) +
            std::fabs(cross);
  return t;
}

}  // namespace detail

// Verifies the discrete counterparts of the conservation laws on a run with
// per-step grads and etas: after removing the second-order update terms, the
// in-side and out-side telescoped sums must agree to rounding. Also bounds
// every tracked cross term by twice the initial risk (descent telescoping).
inline GdLedger gd_ledger(const ComputationGraph& g, const Trajectory& traj,
                          bool full_pairs = false) {
  if (traj.etas.empty() || traj.grads.empty())
    throw ValidationError("gd_ledger: trajectory has no per-step grads/etas");
  GdLedger ledger;
  ledger.risk0 = traj.risk0();
  ledger.slack_bound = 2.0 * ledger.risk0;

  auto use = detail::slot_use_count(g);
  auto slot_of = [&](int e) { return g.edges[static_cast<std::size_t>(e)].slot; };

  // Vertex identities.
  for (int v = 0; v < g.num_vertices(); ++v) {
    if (g.is_input(v) || v == g.output) continue;
    if (!detail::incident_slots_free(g, use, v, nullptr)) continue;
    GdLedger::VertexIdentity vid;
    vid.v = v;
    double scale = 1.0;
    for (int e : g.in_edges[v]) {
      auto t = detail::telescoped(traj, slot_of(e), slot_of(e));
      vid.lhs += t.value;
      scale += t.scale;
    }
    for (int e : g.out_edges[v]) {
      auto t = detail::telescoped(traj, slot_of(e), slot_of(e));
      vid.rhs += t.value;
      scale += t.scale;
    }
    vid.residual_rel = std::fabs(vid.lhs - vid.rhs) / scale;
    ledger.max_vertex_residual = std::max(ledger.max_vertex_residual, vid.residual_rel);
    ledger.vertices.push_back(std::move(vid));
  }

  // Pair identities for vertices with matching neighbourhoods.
  for (int u = 0; u < g.num_vertices(); ++u) {
    if (g.is_input(u) || u == g.output) continue;
    if (!detail::incident_slots_free(g, use, u, nullptr)) continue;
    for (int v = u + 1; v < g.num_vertices(); ++v) {
      if (g.is_input(v) || v == g.output) continue;
      if (!detail::incident_slots_free(g, use, v, nullptr)) continue;
      if (detail::in_sources(g, u) != detail::in_sources(g, v)) continue;
      if (detail::out_targets(g, u) != detail::out_targets(g, v)) continue;
      GdLedger::PairIdentity pid;
      pid.u = u;
      pid.v = v;
      bool patterns_agree = true;
      long long bad_step = -1;
      for (int i = 0; patterns_agree && i < traj.logged(); ++i)
        for (const auto& pat : traj.patterns[static_cast<std::size_t>(i)])
          if (pat[static_cast<std::size_t>(u)] != pat[static_cast<std::size_t>(v)]) {
            patterns_agree = false;
            bad_step = traj.times[static_cast<std::size_t>(i)];
            break;
          }
      if (!patterns_agree) {
        pid.applicable = false;
        pid.reason = "activation patterns diverge at step " + std::to_string(bad_step);
        ledger.pairs.push_back(std::move(pid));
        continue;
      }
      pid.applicable = true;
      double scale = 1.0;
      for (std::size_t k = 0; k < g.in_edges[u].size(); ++k) {
        auto t =
            detail::telescoped(traj, slot_of(g.in_edges[u][k]), slot_of(g.in_edges[v][k]));
        pid.lhs += t.value;
        scale += t.scale;
      }
      for (std::size_t k = 0; k < g.out_edges[u].size(); ++k) {
        auto t =
            detail::telescoped(traj, slot_of(g.out_edges[u][k]), slot_of(g.out_edges[v][k]));
        pid.rhs += t.value;
        scale += t.scale;
      }
      pid.residual_rel = std::fabs(pid.lhs - pid.rhs) / scale;
      ledger.max_pair_residual = std::max(ledger.max_pair_residual, pid.residual_rel);
      ledger.pairs.push_back(std::move(pid));
    }
  }

  // Slack terms: vertex-incident slot pairs by default, all pairs on request
  // (kept behind a flag; quadratic in slot count).
  std::set<std::pair<int, int>> tracked;
  if (full_pairs && g.num_slots <= 50) {
    for (int e = 0; e < g.num_slots; ++e)
      for (int f = e; f < g.num_slots; ++f) tracked.insert({e, f});
  } else {
    for (int v = 0; v < g.num_vertices(); ++v) {
      std::vector<int> slots;
      for (int e : g.in_edges[v]) slots.push_back(slot_of(e));
      for (int e : g.out_edges[v]) slots.push_back(slot_of(e));
      for (std::size_t i = 0; i < slots.size(); ++i)
        for (std::size_t j = i; j < slots.size(); ++j)
          tracked.insert({std::min(slots[i], slots[j]), std::max(slots[i], slots[j])});
    }
  }
  for (const auto& [e, f] : tracked)
    ledger.max_abs_slack = std::max(ledger.max_abs_slack, std::fabs(detail::slack_sum(traj, e, f)));
  ledger.tracked_slot_pairs = static_cast<long long>(tracked.size());
  ledger.slack_ok = ledger.max_abs_slack <= ledger.slack_bound + 1e-12 * (1.0 + ledger.slack_bound);
  return ledger;
}

// ---------------------------------------------------------------------------
// Noninvariance probe: the same Gram difference, tracked over the full index
// set, with its per-entry drift rates as a derivative witness.

struct NoninvarianceReport {
  DefectSeries active;      // restricted to stably active shared indices
  DefectSeries full;        // all shared indices
  double max_rate_gap = 0;  // worst |in-rate - out-rate| over logged steps
  bool contrast = false;    // full drifts >= 10x the tolerance the active meets
};

namespace detail {

// Closed-form d/dt of in-Gram and out-Gram entries at the current weights,
// one backward sweep per example. Shared indices must be plain vertices.
inline void gram_rates(const ComputationGraph& g, const WeightVector& w, const Dataset& data,
                       LossKind loss, const std::vector<int>& shared, Mat& in_rate,
                       Mat& out_rate) {
  int m = static_cast<int>(shared.size());
  in_rate = Mat(m, m);
  out_rate = Mat(m, m);
  int n = static_cast<int>(data.xs.size());
  for (int j = 0; j < n; ++j) {
    ForwardTrace tr = forward(g, w, data.xs[static_cast<std::size_t>(j)]);
    double z = data.ys[static_cast<std::size_t>(j)] * tr.output;
    double coef = -(1.0 / n) * loss_deriv(loss, z) * data.ys[static_cast<std::size_t>(j)];
    // gv(v): sensitivity of the network value to post(v); adj = slope * gv.
    std::vector<double> gv(static_cast<std::size_t>(g.num_vertices()), 0.0);
    std::vector<double> adj(static_cast<std::size_t>(g.num_vertices()), 0.0);
    for (auto it = g.topo.rbegin(); it != g.topo.rend(); ++it) {
      int v = *it;
      double acc = v == g.output ? 1.0 : 0.0;
      for (int e : g.out_edges[v]) {
        const Edge& ed = g.edges[static_cast<std::size_t>(e)];
        acc += w[static_cast<std::size_t>(ed.slot)] * adj[static_cast<std::size_t>(ed.dst)];
      }
      gv[static_cast<std::size_t>(v)] = acc;
      adj[static_cast<std::size_t>(v)] =
          g.is_input(v) ? acc : g.act[v].slope(tr.pre[static_cast<std::size_t>(v)]) * acc;
    }
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        auto u = static_cast<std::size_t>(shared[static_cast<std::size_t>(a)]);
        auto v = static_cast<std::size_t>(shared[static_cast<std::size_t>(b)]);
        in_rate(a, b) += coef * (tr.pre[v] * adj[u] + tr.pre[u] * adj[v]);
        out_rate(a, b) += coef * (tr.post[u] * gv[v] + tr.post[v] * gv[u]);
      }
  }
}

}  // namespace detail

inline NoninvarianceReport noninvariance_probe(const ComputationGraph& g, const Trajectory& traj,
                                               const MatrixPairSpec& spec, const Dataset& data,
                                               LossKind loss, double tol = 1e-3) {
  NoninvarianceReport rep;
  detail::GramPlan plan;
  std::string why;
  if (!detail::make_gram_plan(g, spec, plan, why)) {
    rep.active = detail::na_series("noninvariance(?)", why, tol);
    rep.full = rep.active;
    return rep;
  }
  std::string id = "noninvariance(" + plan.label + ")";
  std::vector<int> all_idx(plan.index_vertices.size());
  for (std::size_t i = 0; i < all_idx.size(); ++i) all_idx[i] = static_cast<int>(i);
  std::vector<int> active_idx = detail::stable_active_indices(traj, plan);

  rep.active = matrix_defect(g, traj, spec, tol);
  if (active_idx.size() == all_idx.size()) {
    rep.full = detail::na_series(id + ":full", "patterns never differ; no inactive index", tol);
    return rep;
  }

  DefectSeries full;
  full.check_id = id + ":full";
  full.tol = tol;
  full.norm_scale = detail::weight_norm_scale(traj);
  Mat base = detail::restricted_gap(plan, traj.initial(), all_idx);
  full.baseline = frob(base);
  for (int i = 0; i < traj.logged(); ++i) {
    full.times.push_back(static_cast<double>(traj.times[static_cast<std::size_t>(i)]));
    full.values.push_back(frob(subtract(
        detail::restricted_gap(plan, traj.weights[static_cast<std::size_t>(i)], all_idx), base)));
  }
  detail::finish_verdict(full);
  rep.full = full;

  // Derivative witness on plain vertex-shared indices only.
  bool plain = true;
  for (const auto& grid : plan.index_vertices) plain = plain && grid.size() == 1;
  if (plain) {
    std::vector<int> shared;
    for (const auto& grid : plan.index_vertices) shared.push_back(grid.front());
    for (int i = 0; i < traj.logged(); ++i) {
      Mat in_rate, out_rate;
      detail::gram_rates(g, traj.weights[static_cast<std::size_t>(i)], data, loss, shared, in_rate,
                         out_rate);
      for (std::size_t k = 0; k < in_rate.a.size(); ++k)
        rep.max_rate_gap = std::max(rep.max_rate_gap, std::fabs(in_rate.a[k] - out_rate.a[k]));
    }
  }

  double tol_abs = tol * rep.active.norm_scale;
  rep.contrast = rep.active.verdict == Verdict::Invariant && rep.full.max_abs() >= 10.0 * tol_abs;
  return rep;
}

}  // namespace pathflow
