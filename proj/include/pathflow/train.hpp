// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pathflow/data.hpp"
#include "pathflow/graph.hpp"
#include "pathflow/loss.hpp"

namespace pathflow {

struct NonFiniteError : std::runtime_error {
  long long step;
  explicit NonFiniteError(long long s)
      : std::runtime_error("non-finite value at step " + std::to_string(s)), step(s) {}
};

struct StalledError : std::runtime_error {
  long long step;
  double beta;
  StalledError(long long s, double b)
      : std::runtime_error("backtracking stalled at step " + std::to_string(s)),
        step(s),
        beta(b) {}
};

inline double risk(const ComputationGraph& g, const WeightVector& w, const Dataset& data,
                   LossKind loss) {
  double sum = 0.0;
  for (int i = 0; i < data.size(); ++i)
    sum += loss_value(loss, data.ys[i] * forward(g, w, data.xs[i]).output);
  return sum / data.size();
}

// Reverse-mode gradient of the empirical risk. Shared slots accumulate over
// their tied edges; frozen slots report 0. If risk_out/patterns_out are
// given they are filled from the same pass.
inline std::vector<double> gradient(const ComputationGraph& g, const WeightVector& w,
                                    const Dataset& data, LossKind loss,
                                    double* risk_out = nullptr,
                                    std::vector<std::vector<std::uint8_t>>* patterns_out =
                                        nullptr) {
  std::vector<double> grad(g.num_slots, 0.0);
  std::vector<double> adj(g.num_vertices(), 0.0);
  double rsum = 0.0;
  if (patterns_out) patterns_out->clear();
  for (int i = 0; i < data.size(); ++i) {
    ForwardTrace t = forward(g, w, data.xs[i]);
    if (patterns_out) patterns_out->push_back(activation_pattern(g, t));
    double z = data.ys[i] * t.output;
    rsum += loss_value(loss, z);
    double scale = loss_deriv(loss, z) * data.ys[i] / data.size();

    // adj[v] = d(output)/d(pre v); traverse reverse topological order.
    std::fill(adj.begin(), adj.end(), 0.0);
    for (auto it = g.topo.rbegin(); it != g.topo.rend(); ++it) {
      int v = *it;
      if (g.is_input(v)) continue;
      double up = 0.0;
      if (v == g.output) {
        up = 1.0;
      } else {
        for (int e : g.out_edges[v]) up += w[g.edges[e].slot] * adj[g.edges[e].dst];
      }
      adj[v] = g.act[v].slope(t.pre[v]) * up;
    }
    for (const Edge& e : g.edges) {
      if (!g.learnable[e.slot]) continue;
      grad[e.slot] += scale * t.post[e.src] * adj[e.dst];
    }
  }
  if (risk_out) *risk_out = rsum / data.size();
  return grad;
}

// Central finite differences on learnable slots; the reference the analytic
// gradient is tested against.
inline std::vector<double> finite_diff_gradient(const ComputationGraph& g,
                                                const WeightVector& w, const Dataset& data,
                                                LossKind loss, double h = 1e-5) {
  std::vector<double> grad(g.num_slots, 0.0);
  WeightVector wp = w;
  for (int s = 0; s < g.num_slots; ++s) {
    if (!g.learnable[s]) continue;
    wp[s] = w[s] + h;
    double rp = risk(g, wp, data, loss);
    wp[s] = w[s] - h;
    double rm = risk(g, wp, data, loss);
    wp[s] = w[s];
    grad[s] = (rp - rm) / (2.0 * h);
  }
  return grad;
}

enum class OptimizerKind { EulerFlow, AdaptiveGd };

// A training run. etas/grads cover every step; weights, patterns and times
// only the logged steps (step 0 and the final step always included).
// Reapplying w <- w - eta*grad between consecutive snapshots reproduces the
// next snapshot bit for bit.
struct Trajectory {
  OptimizerKind optimizer = OptimizerKind::EulerFlow;
  long long steps = 0;
  long long stride = 1;
  std::vector<long long> times;
  std::vector<WeightVector> weights;
  std::vector<std::vector<std::vector<std::uint8_t>>> patterns;  // [log][example][vertex]
  std::vector<double> etas;
  std::vector<std::vector<double>> grads;
  std::vector<double> risks;  // per step, size steps + 1
  long long signs_stable_from = 0;

  int logged() const { return static_cast<int>(times.size()); }
  double risk0() const { return risks.front(); }
  const WeightVector& initial() const { return weights.front(); }
  const WeightVector& final_weights() const { return weights.back(); }
};

namespace detail {

constexpr long long kDenseSnapshotLimit = 10000;

inline long long effective_stride(long long steps, long long requested) {
  long long s = requested < 1 ? 1 : requested;
  long long min_stride = (steps + kDenseSnapshotLimit - 1) / kDenseSnapshotLimit;
  return s < min_stride ? min_stride : s;
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double sgn(double x) { return x >= 0.0 ? 1.0 : -1.0; }

template <typename StepFn>
Trajectory run_loop(const ComputationGraph& g, const WeightVector& w0, const Dataset& data,
                    LossKind loss, long long steps, long long log_stride,
                    OptimizerKind kind, StepFn&& choose_eta) {
  detail::check(static_cast<int>(w0.size()) == g.num_slots, "weight vector size mismatch");
  data.validate();
  detail::check(data.dim() == static_cast<int>(g.inputs.size()),
                "dataset dimension does not match graph inputs");
  detail::check(steps >= 0, "negative step count");

  Trajectory traj;
  traj.optimizer = kind;
  traj.steps = steps;
  traj.stride = effective_stride(steps, log_stride);
  traj.etas.reserve(steps);
  traj.grads.reserve(steps);
  traj.risks.reserve(steps + 1);

  WeightVector w = w0;
  long long last_sign_change = -1;

  auto snapshot = [&](long long t, const std::vector<std::vector<std::uint8_t>>& pats) {
    traj.times.push_back(t);
    traj.weights.push_back(w);
    traj.patterns.push_back(pats);
  };

  std::vector<std::vector<std::uint8_t>> pats;
  for (long long t = 0; t <= steps; ++t) {
    double r = 0.0;
    std::vector<double> d = gradient(g, w, data, loss, &r, &pats);
    if (!std::isfinite(r) || !all_finite(d) || !all_finite(w)) throw NonFiniteError(t);
    traj.risks.push_back(r);
    if (t % traj.stride == 0 || t == steps) snapshot(t, pats);
    if (t == steps) break;

    double eta = choose_eta(t, w, d, r);
    traj.etas.push_back(eta);
    traj.grads.push_back(d);
    for (int s = 0; s < g.num_slots; ++s) {
      if (!g.learnable[s]) continue;
      double before = w[s];
      w[s] = before - eta * d[s];
      if (sgn(w[s]) != sgn(before)) last_sign_change = t;
    }
  }
  traj.signs_stable_from = last_sign_change + 1;
  return traj;
}

}  // namespace detail

// Explicit Euler discretization of the gradient flow at fixed step size.
inline Trajectory run_euler_flow(const ComputationGraph& g, const WeightVector& w0,
                                 const Dataset& data, LossKind loss, double eta,
                                 long long steps, long long log_stride = 1) {
  detail::check(eta > 0.0, "step size must be positive");
  return detail::run_loop(g, w0, data, loss, steps, log_stride, OptimizerKind::EulerFlow,
                          [&](long long, const WeightVector&, const std::vector<double>&,
                              double) { return eta; });
}

// Gradient descent with adaptive step eta = min(1, 1/beta). beta warm-starts
// from the previous step and doubles until the quadratic descent test
//   R(w - eta d) - R(w) <= -(eta/2) ||d||^2
// holds, so the risk never increases. Once the demanded decrease drops below
// floating-point resolution (interpolated minima) the test can no longer be
// met literally; such steps are accepted as long as the risk does not grow.
inline Trajectory run_gd_adaptive(const ComputationGraph& g, const WeightVector& w0,
                                  const Dataset& data, LossKind loss, long long steps,
                                  long long log_stride = 1, double beta_cap = 1e12) {
  double beta = 1.0;
  return detail::run_loop(
      g, w0, data, loss, steps, log_stride, OptimizerKind::AdaptiveGd,
      [&, beta](long long t, const WeightVector& w, const std::vector<double>& d,
                double r) mutable -> double {
        double d2 = 0.0;
        for (int s = 0; s < g.num_slots; ++s)
          if (g.learnable[s]) d2 += d[s] * d[s];
        const double noise = 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + r);
        for (;;) {
          double eta = std::min(1.0, 1.0 / beta);
          WeightVector wt = w;
          for (int s = 0; s < g.num_slots; ++s)
            if (g.learnable[s]) wt[s] = w[s] - eta * d[s];
          double rt = risk(g, wt, data, loss);
          if (std::isfinite(rt)) {
            if (rt - r <= -0.5 * eta * d2) return eta;
            if (0.5 * eta * d2 <= noise && rt <= r) return eta;
          }
          beta *= 2.0;
          if (beta > beta_cap) throw StalledError(t, beta);
        }
      });
}

}  // namespace pathflow
