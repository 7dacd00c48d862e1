// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

#include "pathflow/blocks.hpp"
#include "pathflow/matrix.hpp"

// Canonical matrix forms of blocks. Index conventions follow the builders in
// blocks.hpp; all forms of one block hold the same slot values, so their
// Frobenius norms agree exactly.

namespace pathflow {

inline Mat fc_matrix(const BlockInfo& blk, const WeightVector& w) {
  if (blk.kind != BlockInfo::Kind::FullyConnected)
    throw std::invalid_argument("fc_matrix: not a fully-connected block");
  Mat m(blk.n_out, blk.n_in);
  for (int t = 0; t < blk.n_out; ++t)
    for (int s = 0; s < blk.n_in; ++s)
      m(t, s) = w[static_cast<std::size_t>(blk.slot_base + t * blk.n_in + s)];
  return m;
}

// Flattening c x (ab); column index ch*b + q.
inline Mat conv_t1(const BlockInfo& blk, const WeightVector& w) {
  if (blk.kind != BlockInfo::Kind::Conv1D)
    throw std::invalid_argument("conv_t1: not a conv block");
  Mat m(blk.c, blk.a * blk.b);
  for (int k = 0; k < blk.c; ++k)
    for (int ch = 0; ch < blk.a; ++ch)
      for (int q = 0; q < blk.b; ++q)
        m(k, ch * blk.b + q) =
            w[static_cast<std::size_t>(blk.slot_base + k * blk.a * blk.b + ch * blk.b + q)];
  return m;
}

// Flattening (bc) x a; row index q*c + k, column index ch.
inline Mat conv_t2(const BlockInfo& blk, const WeightVector& w) {
  if (blk.kind != BlockInfo::Kind::Conv1D)
    throw std::invalid_argument("conv_t2: not a conv block");
  Mat m(blk.b * blk.c, blk.a);
  for (int k = 0; k < blk.c; ++k)
    for (int ch = 0; ch < blk.a; ++ch)
      for (int q = 0; q < blk.b; ++q)
        m(q * blk.c + k, ch) =
            w[static_cast<std::size_t>(blk.slot_base + k * blk.a * blk.b + ch * blk.b + q)];
  return m;
}

namespace detail {
inline void require_resnet(const BlockInfo& blk, const char* fn) {
  if (blk.kind != BlockInfo::Kind::ResNetFree)
    throw std::invalid_argument(std::string(fn) + ": not a residual block");
}
}  // namespace detail

inline Mat resnet_y(const BlockInfo& blk, const WeightVector& w) {
  detail::require_resnet(blk, "resnet_y");
  Mat m(blk.b, blk.a);
  for (int r = 0; r < blk.b; ++r)
    for (int s = 0; s < blk.a; ++s)
      m(r, s) = w[static_cast<std::size_t>(blk.y_base + r * blk.a + s)];
  return m;
}

inline Mat resnet_u(const BlockInfo& blk, const WeightVector& w) {
  detail::require_resnet(blk, "resnet_u");
  Mat m(blk.c, blk.b);
  for (int k = 0; k < blk.c; ++k)
    for (int r = 0; r < blk.b; ++r)
      m(k, r) = w[static_cast<std::size_t>(blk.u_base + k * blk.b + r)];
  return m;
}

// Diagonal skips materialize as a full c x a matrix (zeros off-diagonal).
inline Mat resnet_z(const BlockInfo& blk, const WeightVector& w) {
  detail::require_resnet(blk, "resnet_z");
  Mat m(blk.c, blk.a);
  if (blk.z_diagonal) {
    for (int r = 0; r < blk.c; ++r)
      m(r, r) = w[static_cast<std::size_t>(blk.z_base + r)];
  } else {
    for (int k = 0; k < blk.c; ++k)
      for (int s = 0; s < blk.a; ++s)
        m(k, s) = w[static_cast<std::size_t>(blk.z_base + k * blk.a + s)];
  }
  return m;
}

// Out-side stack [U Z]: rows index the block's output.
inline Mat resnet_a(const BlockInfo& blk, const WeightVector& w) {
  Mat u = resnet_u(blk, w), z = resnet_z(blk, w);
  Mat m(blk.c, blk.b + blk.a);
  for (int k = 0; k < blk.c; ++k) {
    for (int r = 0; r < blk.b; ++r) m(k, r) = u(k, r);
    for (int s = 0; s < blk.a; ++s) m(k, blk.b + s) = z(k, s);
  }
  return m;
}

// In-side stack [Y; Z]: columns index the block's input.
inline Mat resnet_b(const BlockInfo& blk, const WeightVector& w) {
  Mat y = resnet_y(blk, w), z = resnet_z(blk, w);
  Mat m(blk.b + blk.c, blk.a);
  for (int s = 0; s < blk.a; ++s) {
    for (int r = 0; r < blk.b; ++r) m(r, s) = y(r, s);
    for (int k = 0; k < blk.c; ++k) m(blk.b + k, s) = z(k, s);
  }
  return m;
}

// A matrix whose columns read a conv output (position-major, flat = j*ch_count
// + k over positions j in [positions]) regrouped so columns index channels:
// out(t*positions + j, k) = m(t, j*ch_count + k).
inline Mat rearrange_after_conv(const Mat& m, int positions, int channels) {
  if (m.cols != positions * channels)
    throw std::invalid_argument("rearrange_after_conv: column count mismatch");
  Mat out(m.rows * positions, channels);
  for (int t = 0; t < m.rows; ++t)
    for (int j = 0; j < positions; ++j)
      for (int k = 0; k < channels; ++k) out(t * positions + j, k) = m(t, j * channels + k);
  return out;
}

// Squared Frobenius norm of a declared layer: sum over its distinct slots.
inline double layer_frob2(const ComputationGraph& g, const DeclaredLayer& layer,
                          const WeightVector& w) {
  double s = 0;
  for (int slot : layer.slots) s += w[static_cast<std::size_t>(slot)] * w[static_cast<std::size_t>(slot)];
  return s;
}

}  // namespace pathflow
