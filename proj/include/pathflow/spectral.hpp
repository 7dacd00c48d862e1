// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pathflow/graph.hpp"
#include "pathflow/matrix.hpp"
#include "pathflow/represent.hpp"
#include "pathflow/svd.hpp"
#include "pathflow/train.hpp"

namespace pathflow {

// Singular-value consequences of the balance laws: a chain of linear conv /
// fully-connected / free-skip residual blocks feeding a linear row layer keeps
//   frob2(W_j) / bound_const(j) - sigma1(W_j)^2 <= D(j)
// where bound_const and D are fixed by the architecture and the initial
// weights.  Everything here reconstructs block matrices from weight snapshots;
// nothing touches the trajectory beyond reading it.

// ---------------------------------------------------------------------------
// Eligible suffix: arbitrary prefix, then K linear conv blocks, then M linear
// fully-connected or free-skip residual blocks, then the learnable linear row
// layer.  Detection is greedy from the back; the prefix is whatever remains.

struct AlignmentShape {
  std::vector<int> chain;  // block ids, convs first; excludes the row layer
  int fin = -1;            // block id of the final row layer
  int k_conv = 0;          // chain[0..k_conv) are conv blocks

  int depth() const { return static_cast<int>(chain.size()); }
};

namespace detail {

inline bool block_learnable(const ComputationGraph& g, const BlockInfo& b) {
  for (int s = b.slot_base; s < b.slot_base + b.slot_count; ++s)
    if (!g.learnable[s]) return false;
  return true;
}

inline bool linear_block(const BlockInfo& b) {
  return b.activation.tag == ActivationKind::Tag::Linear;
}

inline bool chainable_matrix_block(const ComputationGraph& g, const BlockInfo& b) {
  if (!linear_block(b) || !block_learnable(g, b)) return false;
  if (b.kind == BlockInfo::Kind::FullyConnected) return true;
  return b.kind == BlockInfo::Kind::ResNetFree && !b.z_frozen && !b.z_diagonal;
}

inline bool chainable_conv_block(const ComputationGraph& g, const BlockInfo& b) {
  return b.kind == BlockInfo::Kind::Conv1D && linear_block(b) && block_learnable(g, b);
}

}  // namespace detail

inline AlignmentShape alignment_shape(const ComputationGraph& g) {
  if (g.blocks.empty())
    throw ValidationError("alignment_shape: graph carries no block structure");
  const BlockInfo& last = g.blocks.back();
  if (last.kind != BlockInfo::Kind::FullyConnected || last.n_out != 1 ||
      !detail::linear_block(last) || !detail::block_learnable(g, last))
    throw ValidationError("alignment_shape: final block must be a learnable linear row layer");

  AlignmentShape shape;
  shape.fin = static_cast<int>(g.blocks.size()) - 1;
  std::vector<int> rev;
  int i = shape.fin - 1;
  while (i >= 0 && detail::chainable_matrix_block(g, g.blocks[i])) rev.push_back(i--);
  const int matrix_count = static_cast<int>(rev.size());
  while (i >= 0 && detail::chainable_conv_block(g, g.blocks[i])) rev.push_back(i--);
  shape.k_conv = static_cast<int>(rev.size()) - matrix_count;
  shape.chain.assign(rev.rbegin(), rev.rend());
  return shape;
}

namespace detail {

// Form a block presents to its successor / predecessor while chaining norms.
inline Mat out_form(const BlockInfo& b, const WeightVector& w) {
  switch (b.kind) {
    case BlockInfo::Kind::FullyConnected: return fc_matrix(b, w);
    case BlockInfo::Kind::Conv1D: return conv_t1(b, w);
    case BlockInfo::Kind::ResNetFree: return resnet_a(b, w);
  }
  return Mat();
}

inline Mat in_form(const BlockInfo& b, const WeightVector& w) {
  switch (b.kind) {
    case BlockInfo::Kind::FullyConnected: return fc_matrix(b, w);
    case BlockInfo::Kind::Conv1D: return conv_t2(b, w);
    case BlockInfo::Kind::ResNetFree: return resnet_b(b, w);
  }
  return Mat();
}

// Largest dimension of the block's named representation; shape only.
inline int rep_maxdim(const BlockInfo& b) {
  switch (b.kind) {
    case BlockInfo::Kind::FullyConnected: return std::max(b.n_out, b.n_in);
    case BlockInfo::Kind::Conv1D: return std::max(b.a, b.b * b.c);
    case BlockInfo::Kind::ResNetFree: return std::max(b.c, b.b + b.a);
  }
  return 1;
}

// Gram gap between adjacent chained blocks at the given weights.  With every
// vertex linear the restriction to active indices is the whole matrix.
inline Mat chain_gap(const BlockInfo& lo, const BlockInfo& hi, const WeightVector& w) {
  Mat first = out_form(lo, w);
  Mat second = in_form(hi, w);
  if (lo.kind == BlockInfo::Kind::Conv1D && hi.kind != BlockInfo::Kind::Conv1D)
    second = rearrange_after_conv(second, lo.len_out, lo.c);
  return subtract(gram_cols(second), gram_rows(first));
}

inline double resnet_gram_gap_norm(const BlockInfo& b, const WeightVector& w) {
  return spectral_norm(subtract(gram_cols(resnet_u(b, w)), gram_rows(resnet_y(b, w))));
}

// Representation the suffix bound is stated for.  A residual layer is bounded
// in its input-facing form [Y; Z] (its own switch is charged into the
// constants); everything else is bounded facing the output.
inline Mat bound_form(const BlockInfo& b, const WeightVector& w) {
  return b.kind == BlockInfo::Kind::ResNetFree ? in_form(b, w) : out_form(b, w);
}

inline std::string block_label(const BlockInfo& b) {
  switch (b.kind) {
    case BlockInfo::Kind::FullyConnected:
      return "fc " + std::to_string(b.n_out) + "x" + std::to_string(b.n_in);
    case BlockInfo::Kind::Conv1D:
      return "conv " + std::to_string(b.a) + "x" + std::to_string(b.b) + "x" +
             std::to_string(b.c);
    case BlockInfo::Kind::ResNetFree:
      return "resnet " + std::to_string(b.a) + "-" + std::to_string(b.b) + "-" +
             std::to_string(b.c);
  }
  return "block";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Per-layer constants of the suffix bound.

struct AlignmentConstants {
  int layer = 0;             // 1-based position within the chained suffix
  int block = -1;            // block id in the graph
  int n_r = 0;               // residual blocks between layer and row; a
                             // residual layer counts itself
  double v_c = 1.0;          // conv-induced representation cost
  double bound_const = 1.0;  // 8^n_r * v_c
  double d = 0.0;            // offset fixed at initialization, clamped to >= 0
};

// Chains ||X||_2^2 >= factor * ||row||_2^2 - acc downward from the row layer.
// Each step is a true inequality at any weights, so the additive costs can be
// measured once at w0 and stay valid along the whole run:
//   - adjacent blocks: Gram invariance plus an eigenvalue shift bound,
//     cost ||gap(w0)||_2, factor 1;
//   - inside a residual block, switching [U Z] -> [Y; Z]: factor 1/8 and cost
//     ||U'U(0) - YY'(0)||_2 / 2;
//   - inside a conv block, switching flattenings: factor 1/min(a,b), no cost;
//   - conv-to-matrix boundary rearrangement: factor 1/maxdim of the successor
//     representation, no cost.
// A residual target layer is bounded in its input-facing form, so its own
// switch is charged as a final step; conv target layers stay output-facing
// (the v_c product runs strictly above the layer).  The row layer has one
// row, so its squared operator and Frobenius norms agree and the Frobenius
// balance across block cuts closes the bound; both residual forms are cuts,
// each conserved on its own.
inline AlignmentConstants reduced_alignment_constants(const ComputationGraph& g,
                                                      const AlignmentShape& shape, int layer,
                                                      const WeightVector& w0) {
  if (layer < 1 || layer > shape.depth())
    throw ValidationError("reduced_alignment_constants: layer index out of range");
  AlignmentConstants out;
  out.layer = layer;
  out.block = shape.chain[layer - 1];

  double factor = 1.0, acc = 0.0;
  for (int l = shape.depth(); l >= layer; --l) {
    const BlockInfo* hi = l == shape.depth() ? &g.blocks[shape.fin] : &g.blocks[shape.chain[l]];
    if (l < shape.depth()) {
      if (hi->kind == BlockInfo::Kind::ResNetFree) {
        factor /= 8.0;
        acc = acc / 8.0 + detail::resnet_gram_gap_norm(*hi, w0) / 2.0;
        ++out.n_r;
      } else if (hi->kind == BlockInfo::Kind::Conv1D) {
        const double mab = std::min(hi->a, hi->b);
        factor /= mab;
        acc /= mab;
        out.v_c *= mab;
      }
    }
    const BlockInfo& lo = g.blocks[shape.chain[l - 1]];
    if (lo.kind == BlockInfo::Kind::Conv1D && hi->kind != BlockInfo::Kind::Conv1D) {
      const double md = detail::rep_maxdim(*hi);
      factor /= md;
      acc /= md;
      out.v_c *= md;
    }
    acc += spectral_norm(detail::chain_gap(lo, *hi, w0));
  }
  const BlockInfo& target = g.blocks[out.block];
  if (target.kind == BlockInfo::Kind::ResNetFree) {
    factor /= 8.0;
    acc = acc / 8.0 + detail::resnet_gram_gap_norm(target, w0) / 2.0;
    ++out.n_r;
  }
  out.bound_const = std::pow(8.0, out.n_r) * out.v_c;

  const double d0 = frob2(detail::bound_form(target, w0)) -
                    frob2(fc_matrix(g.blocks[shape.fin], w0));
  out.d = std::max(0.0, factor * d0 + acc);
  return out;
}

inline AlignmentConstants reduced_alignment_constants(const ComputationGraph& g, int layer,
                                                      const WeightVector& w0) {
  return reduced_alignment_constants(g, alignment_shape(g), layer, w0);
}

// ---------------------------------------------------------------------------
// Bound verification along a trajectory.

struct AlignmentLayerReport {
  AlignmentConstants constants;
  std::vector<double> lhs;  // frob2 / bound_const - sigma1^2, per logged step
  double max_violation = -std::numeric_limits<double>::infinity();  // max of lhs - d
  bool holds = true;
};

struct AlignmentReport {
  AlignmentShape shape;
  std::vector<long long> times;
  std::vector<AlignmentLayerReport> layers;
  bool all_hold = true;
};

inline AlignmentReport reduced_alignment_check(const ComputationGraph& g, const Trajectory& traj,
                                               double tol_rel = 1e-6) {
  if (traj.weights.empty())
    throw ValidationError("reduced_alignment_check: trajectory has no snapshots");
  AlignmentReport rep;
  rep.shape = alignment_shape(g);
  rep.times = traj.times;
  for (int j = 1; j <= rep.shape.depth(); ++j) {
    AlignmentLayerReport lr;
    lr.constants = reduced_alignment_constants(g, rep.shape, j, traj.initial());
    const BlockInfo& blk = g.blocks[lr.constants.block];
    for (int i = 0; i < traj.logged(); ++i) {
      const Mat m = detail::bound_form(blk, traj.weights[i]);
      const double f2 = frob2(m);
      const double s = spectral_norm(m);
      const double lhs = f2 / lr.constants.bound_const - s * s;
      lr.lhs.push_back(lhs);
      const double violation = lhs - lr.constants.d;
      lr.max_violation = std::max(lr.max_violation, violation);
      if (violation > tol_rel * (1.0 + f2 + lr.constants.d)) lr.holds = false;
    }
    rep.all_hold = rep.all_hold && lr.holds;
    rep.layers.push_back(std::move(lr));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Low-rank / alignment diagnostics per block along a trajectory.  Reports
// trends; asserts nothing.

struct SpectralSeries {
  int block = -1;
  std::string label;
  std::vector<long long> times;
  std::vector<double> frob2;
  std::vector<double> sigma1_2;
  std::vector<double> ratio;           // sigma1_2 / frob2
  std::vector<double> rank1_residual;  // ||W/||W||_F - u1 v1'||_F
  std::vector<double> alignment_next;  // |<v1 of next listed block, u1>|
  std::vector<std::vector<double>> u1;
  std::vector<std::vector<double>> v1;
};

namespace detail {

// Representation used for the spectra: conv blocks report the in-channel
// flattening, whose operator norm matches the (b*c)-by-a form by transpose.
inline Mat series_form(const BlockInfo& b, const WeightVector& w) {
  if (b.kind == BlockInfo::Kind::Conv1D) return transpose(conv_t2(b, w));
  return out_form(b, w);
}

}  // namespace detail

inline std::vector<SpectralSeries> lowrank_and_alignment_series(const ComputationGraph& g,
                                                                const Trajectory& traj,
                                                                const std::vector<int>& blocks) {
  if (traj.weights.empty())
    throw ValidationError("lowrank_and_alignment_series: trajectory has no snapshots");
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<SpectralSeries> out;
  for (int id : blocks) {
    if (id < 0 || id >= static_cast<int>(g.blocks.size()))
      throw ValidationError("lowrank_and_alignment_series: block id out of range");
    const BlockInfo& blk = g.blocks[id];
    SpectralSeries s;
    s.block = id;
    s.label = detail::block_label(blk);
    s.times = traj.times;
    for (int i = 0; i < traj.logged(); ++i) {
      const Mat m = detail::series_form(blk, traj.weights[i]);
      const SingularTriplet t = top_singular_triplet(m);
      const double f2 = frob2(m);
      s.frob2.push_back(f2);
      s.sigma1_2.push_back(t.sigma * t.sigma);
      s.ratio.push_back(f2 > 0.0 ? t.sigma * t.sigma / f2 : nan);
      if (f2 > 0.0) {
        const double fn = std::sqrt(f2);
        double res2 = 0.0;
        for (int r = 0; r < m.rows; ++r)
          for (int c = 0; c < m.cols; ++c) {
            const double dd = m(r, c) / fn - t.u[r] * t.v[c];
            res2 += dd * dd;
          }
        s.rank1_residual.push_back(std::sqrt(res2));
      } else {
        s.rank1_residual.push_back(nan);
      }
      s.u1.push_back(t.u);
      s.v1.push_back(t.v);
    }
    out.push_back(std::move(s));
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    SpectralSeries& s = out[k];
    for (std::size_t i = 0; i < s.times.size(); ++i) {
      double a = nan;
      if (k + 1 < out.size() && out[k + 1].v1[i].size() == s.u1[i].size())
        a = std::fabs(vec_dot(out[k + 1].v1[i], s.u1[i]));
      s.alignment_next.push_back(a);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flattening inequality for order-3 tensors: the two standard flattenings of
// the same entries satisfy ||T1||_2^2 / min(a,b) <= ||T2||_2^2, always.
// Entry (ch, q, k) sits at t[(ch*b + q)*c + k], matching the conv slot order.

inline Mat flatten_t1(int a, int b, int c, const std::vector<double>& t) {
  if (static_cast<int>(t.size()) != a * b * c)
    throw ValidationError("flatten_t1: entry count does not match dimensions");
  Mat m(c, a * b);
  for (int ch = 0; ch < a; ++ch)
    for (int q = 0; q < b; ++q)
      for (int k = 0; k < c; ++k) m(k, ch * b + q) = t[(ch * b + q) * c + k];
  return m;
}

inline Mat flatten_t2(int a, int b, int c, const std::vector<double>& t) {
  if (static_cast<int>(t.size()) != a * b * c)
    throw ValidationError("flatten_t2: entry count does not match dimensions");
  Mat m(b * c, a);
  for (int ch = 0; ch < a; ++ch)
    for (int q = 0; q < b; ++q)
      for (int k = 0; k < c; ++k) m(q * c + k, ch) = t[(ch * b + q) * c + k];
  return m;
}

struct FlattenCheck {
  int a = 0, b = 0, c = 0;
  double lhs = 0.0;  // ||T1||_2^2 / min(a,b)
  double rhs = 0.0;  // ||T2||_2^2
  bool holds = false;
};

inline FlattenCheck flatten_inequality(int a, int b, int c, const std::vector<double>& t) {
  FlattenCheck f;
  f.a = a;
  f.b = b;
  f.c = c;
  const double s1 = spectral_norm(flatten_t1(a, b, c, t));
  const double s2 = spectral_norm(flatten_t2(a, b, c, t));
  f.lhs = s1 * s1 / std::min(a, b);
  f.rhs = s2 * s2;
  f.holds = f.lhs <= f.rhs + 1e-9 * (1.0 + f.rhs);
  return f;
}

struct FlattenSeries {
  int block = -1;
  int a = 0, b = 0, c = 0;
  std::vector<long long> times;
  std::vector<double> lhs;  // ||T1||_2^2 / min(a,b) per logged step
  std::vector<double> rhs;  // ||T2||_2^2 per logged step
  double min_margin = std::numeric_limits<double>::infinity();
  bool holds = true;
};

// ---------------------------------------------------------------------------
// Residual shuffle inequality ||B||_2^2 >= ||A||_2^2 / 8 - d_prime along a
// trajectory, A = [U Z], B = [Y; Z], d_prime = ||U'U(0) - YY'(0)||_2 / 2.
// Needs a linear block with a free learnable skip so the hidden Gram balance
// integrates to an exact conservation law.

struct ShuffleCheck {
  int block = -1;
  bool applicable = false;
  std::string reason;
  double d_prime = 0.0;
  std::vector<long long> times;
  std::vector<double> a_norm2;  // ||A||_2^2
  std::vector<double> b_norm2;  // ||B||_2^2
  std::vector<double> margin;   // b_norm2 - a_norm2 / 8 + d_prime
  double min_margin = std::numeric_limits<double>::infinity();
  bool holds = true;
};

inline ShuffleCheck resnet_shuffle_check(const ComputationGraph& g, const Trajectory& traj,
                                         int block, double tol_rel = 1e-6) {
  if (traj.weights.empty())
    throw ValidationError("resnet_shuffle_check: trajectory has no snapshots");
  ShuffleCheck sc;
  sc.block = block;
  if (block < 0 || block >= static_cast<int>(g.blocks.size())) {
    sc.reason = "no such block";
    return sc;
  }
  const BlockInfo& blk = g.blocks[block];
  if (blk.kind != BlockInfo::Kind::ResNetFree) {
    sc.reason = "not a residual block";
    return sc;
  }
  if (blk.z_frozen) {
    sc.reason = "skip weights are frozen";
    return sc;
  }
  if (!detail::linear_block(blk)) {
    sc.reason = "activation is not linear";
    return sc;
  }
  sc.applicable = true;
  sc.times = traj.times;
  sc.d_prime = detail::resnet_gram_gap_norm(blk, traj.initial()) / 2.0;
  for (int i = 0; i < traj.logged(); ++i) {
    const double a2 = std::pow(spectral_norm(resnet_a(blk, traj.weights[i])), 2);
    const double b2 = std::pow(spectral_norm(resnet_b(blk, traj.weights[i])), 2);
    const double margin = b2 - a2 / 8.0 + sc.d_prime;
    sc.a_norm2.push_back(a2);
    sc.b_norm2.push_back(b2);
    sc.margin.push_back(margin);
    sc.min_margin = std::min(sc.min_margin, margin);
    if (margin < -tol_rel * (1.0 + a2)) sc.holds = false;
  }
  return sc;
}

struct ShuffleFlattenReport {
  std::vector<FlattenSeries> flatten;  // one per conv block
  std::vector<ShuffleCheck> shuffle;   // one per residual block
  bool all_hold = true;                // over applicable checks
};

inline ShuffleFlattenReport shuffle_and_flatten_checks(const ComputationGraph& g,
                                                       const Trajectory& traj) {
  if (traj.weights.empty())
    throw ValidationError("shuffle_and_flatten_checks: trajectory has no snapshots");
  ShuffleFlattenReport rep;
  for (int id = 0; id < static_cast<int>(g.blocks.size()); ++id) {
    const BlockInfo& blk = g.blocks[id];
    if (blk.kind == BlockInfo::Kind::Conv1D) {
      FlattenSeries fs;
      fs.block = id;
      fs.a = blk.a;
      fs.b = blk.b;
      fs.c = blk.c;
      fs.times = traj.times;
      for (int i = 0; i < traj.logged(); ++i) {
        const double s1 = spectral_norm(conv_t1(blk, traj.weights[i]));
        const double s2 = spectral_norm(conv_t2(blk, traj.weights[i]));
        const double lhs = s1 * s1 / std::min(blk.a, blk.b);
        const double rhs = s2 * s2;
        fs.lhs.push_back(lhs);
        fs.rhs.push_back(rhs);
        fs.min_margin = std::min(fs.min_margin, rhs - lhs);
        if (lhs > rhs + 1e-9 * (1.0 + rhs)) fs.holds = false;
      }
      rep.all_hold = rep.all_hold && fs.holds;
      rep.flatten.push_back(std::move(fs));
    } else if (blk.kind == BlockInfo::Kind::ResNetFree) {
      ShuffleCheck sc = resnet_shuffle_check(g, traj, id);
      if (sc.applicable) rep.all_hold = rep.all_hold && sc.holds;
      rep.shuffle.push_back(std::move(sc));
    }
  }
  return rep;
}

}  // namespace pathflow
