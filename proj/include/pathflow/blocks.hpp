// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <variant>
#include <vector>

#include "pathflow/graph.hpp"

namespace pathflow {

// Architecture description, one entry per block. A network is a chain of
// blocks; the last block must have output width 1.

struct FullyConnectedSpec {
  int n_in = 0;
  int n_out = 0;
  ActivationKind activation = ActivationKind::linear();
};

// One-dimensional convolution without padding. The incoming interface of
// width a*input_len is read position-major (flat = pos*a + ch), and the
// produced interface of width len_out*c likewise. If input_len is 0 it is
// inferred from the incoming width.
struct Conv1DSpec {
  int in_channels = 0;   // a
  int kernel = 0;        // b
  int out_channels = 0;  // c
  int stride = 1;
  int input_len = 0;
  ActivationKind activation = ActivationKind::linear();
};

// r(x) = act(U act(Y x) + Z x). Skip selects how Z is realized: Free keeps a
// full learnable c x a matrix, Identity and Diagonal keep frozen diagonal
// slots (value 1, resp. the given diagonal) and require c == a.
struct ResNetSpec {
  enum class Skip { Free, Identity, Diagonal };
  int a = 0;
  int b = 0;
  int c = 0;
  ActivationKind activation = ActivationKind::linear();
  Skip skip = Skip::Free;
  std::vector<double> diagonal;  // Diagonal only; defaults to ones
};

using BlockSpec = std::variant<FullyConnectedSpec, Conv1DSpec, ResNetSpec>;

namespace detail {

inline int add_vertex(ComputationGraph& g, ActivationKind a) {
  g.act.push_back(a);
  return g.num_vertices() - 1;
}

}  // namespace detail

inline ComputationGraph build_architecture(const std::vector<BlockSpec>& specs) {
  detail::check(!specs.empty(), "architecture has no blocks");
  ComputationGraph g;
  g.frozen_value = {};

  std::vector<int> interface_vertices;  // produced by the previous block
  auto ensure_inputs = [&](int width) {
    if (!interface_vertices.empty()) return;
    detail::check(width > 0, "first block must declare a positive input width");
    for (int i = 0; i < width; ++i) {
      int v = detail::add_vertex(g, ActivationKind::linear());
      g.inputs.push_back(v);
      interface_vertices.push_back(v);
    }
  };

  for (int bi = 0; bi < static_cast<int>(specs.size()); ++bi) {
    const std::string tag = "b" + std::to_string(bi);
    BlockInfo info;

    if (const auto* fc = std::get_if<FullyConnectedSpec>(&specs[bi])) {
      detail::check(fc->n_in > 0 && fc->n_out > 0, tag + ": nonpositive dimension");
      ensure_inputs(fc->n_in);
      detail::check(static_cast<int>(interface_vertices.size()) == fc->n_in,
                    tag + ": width " + std::to_string(interface_vertices.size()) +
                        " does not match n_in " + std::to_string(fc->n_in));
      info.kind = BlockInfo::Kind::FullyConnected;
      info.activation = fc->activation;
      info.n_in = fc->n_in;
      info.n_out = fc->n_out;
      info.slot_base = g.num_slots;
      info.slot_count = fc->n_in * fc->n_out;
      info.in_vertices = interface_vertices;
      for (int t = 0; t < fc->n_out; ++t)
        info.out_vertices.push_back(detail::add_vertex(g, fc->activation));
      for (int t = 0; t < fc->n_out; ++t)
        for (int s = 0; s < fc->n_in; ++s)
          g.edges.push_back({info.in_vertices[s], info.out_vertices[t],
                             info.slot_base + t * fc->n_in + s});
      g.num_slots += info.slot_count;
      g.learnable.insert(g.learnable.end(), info.slot_count, 1);
      g.frozen_value.insert(g.frozen_value.end(), info.slot_count, 0.0);
      g.layers.push_back({tag + "_fc",
                          [&] {
                            std::vector<int> s(info.slot_count);
                            for (int i = 0; i < info.slot_count; ++i) s[i] = info.slot_base + i;
                            return s;
                          }()});
    } else if (const auto* cv = std::get_if<Conv1DSpec>(&specs[bi])) {
      const int a = cv->in_channels, b = cv->kernel, c = cv->out_channels;
      detail::check(a > 0 && b > 0 && c > 0 && cv->stride > 0, tag + ": nonpositive dimension");
      int len = cv->input_len;
      if (interface_vertices.empty()) {
        detail::check(len > 0, tag + ": first conv block needs input_len");
        ensure_inputs(a * len);
      } else {
        int width = static_cast<int>(interface_vertices.size());
        if (len == 0) {
          detail::check(width % a == 0,
                        tag + ": incoming width " + std::to_string(width) +
                            " is not a multiple of " + std::to_string(a) + " channels");
          len = width / a;
        } else {
          detail::check(a * len == width, tag + ": a*input_len does not match incoming width");
        }
      }
      detail::check(b <= len, tag + ": kernel wider than input length");
      // Every input position must fall under some window, otherwise part of
      // the input would be disconnected from the output.
      detail::check(cv->stride <= b, tag + ": stride exceeds kernel width");
      detail::check((len - b) % cv->stride == 0,
                    tag + ": windows do not cover the input tail");
      const int len_out = (len - b) / cv->stride + 1;
      info.kind = BlockInfo::Kind::Conv1D;
      info.activation = cv->activation;
      info.a = a;
      info.b = b;
      info.c = c;
      info.stride = cv->stride;
      info.len_in = len;
      info.len_out = len_out;
      info.slot_base = g.num_slots;
      info.slot_count = a * b * c;
      info.in_vertices = interface_vertices;
      for (int j = 0; j < len_out; ++j)
        for (int k = 0; k < c; ++k)
          info.out_vertices.push_back(detail::add_vertex(g, cv->activation));
      for (int j = 0; j < len_out; ++j)
        for (int k = 0; k < c; ++k)
          for (int ch = 0; ch < a; ++ch)
            for (int q = 0; q < b; ++q)
              g.edges.push_back({info.in_vertices[(cv->stride * j + q) * a + ch],
                                 info.out_vertices[j * c + k],
                                 info.slot_base + k * a * b + ch * b + q});
      g.num_slots += info.slot_count;
      g.learnable.insert(g.learnable.end(), info.slot_count, 1);
      g.frozen_value.insert(g.frozen_value.end(), info.slot_count, 0.0);
      g.layers.push_back({tag + "_conv",
                          [&] {
                            std::vector<int> s(info.slot_count);
                            for (int i = 0; i < info.slot_count; ++i) s[i] = info.slot_base + i;
                            return s;
                          }()});
    } else {
      const auto& rn = std::get<ResNetSpec>(specs[bi]);
      detail::check(rn.a > 0 && rn.b > 0 && rn.c > 0, tag + ": nonpositive dimension");
      const bool frozen = rn.skip != ResNetSpec::Skip::Free;
      if (frozen)
        detail::check(rn.a == rn.c, tag + ": identity/diagonal skip needs matching widths");
      if (rn.skip == ResNetSpec::Skip::Diagonal && !rn.diagonal.empty())
        detail::check(static_cast<int>(rn.diagonal.size()) == rn.a,
                      tag + ": diagonal length mismatch");
      ensure_inputs(rn.a);
      detail::check(static_cast<int>(interface_vertices.size()) == rn.a,
                    tag + ": width does not match block input a");
      info.kind = BlockInfo::Kind::ResNetFree;
      info.activation = rn.activation;
      info.a = rn.a;
      info.b = rn.b;
      info.c = rn.c;
      info.z_diagonal = frozen;
      info.z_frozen = frozen;
      info.slot_base = g.num_slots;
      info.y_base = g.num_slots;
      info.u_base = info.y_base + rn.b * rn.a;
      info.z_base = info.u_base + rn.c * rn.b;
      info.slot_count = rn.b * rn.a + rn.c * rn.b + (frozen ? rn.a : rn.c * rn.a);
      info.in_vertices = interface_vertices;
      for (int r = 0; r < rn.b; ++r)
        info.hidden_vertices.push_back(detail::add_vertex(g, rn.activation));
      for (int r = 0; r < rn.c; ++r)
        info.out_vertices.push_back(detail::add_vertex(g, rn.activation));
      for (int r = 0; r < rn.b; ++r)
        for (int s = 0; s < rn.a; ++s)
          g.edges.push_back({info.in_vertices[s], info.hidden_vertices[r],
                             info.y_base + r * rn.a + s});
      for (int r = 0; r < rn.c; ++r)
        for (int s = 0; s < rn.b; ++s)
          g.edges.push_back({info.hidden_vertices[s], info.out_vertices[r],
                             info.u_base + r * rn.b + s});
      if (frozen) {
        for (int r = 0; r < rn.a; ++r)
          g.edges.push_back({info.in_vertices[r], info.out_vertices[r], info.z_base + r});
      } else {
        for (int r = 0; r < rn.c; ++r)
          for (int s = 0; s < rn.a; ++s)
            g.edges.push_back({info.in_vertices[s], info.out_vertices[r],
                               info.z_base + r * rn.a + s});
      }
      g.num_slots += info.slot_count;
      g.learnable.insert(g.learnable.end(), info.slot_count, 1);
      g.frozen_value.insert(g.frozen_value.end(), info.slot_count, 0.0);
      if (frozen) {
        for (int r = 0; r < rn.a; ++r) {
          g.learnable[info.z_base + r] = 0;
          g.frozen_value[info.z_base + r] =
              (rn.skip == ResNetSpec::Skip::Diagonal && !rn.diagonal.empty()) ? rn.diagonal[r]
                                                                              : 1.0;
        }
      } else {
        std::vector<int> uz, yz;
        for (int i = 0; i < rn.c * rn.b; ++i) uz.push_back(info.u_base + i);
        for (int i = 0; i < rn.c * rn.a; ++i) uz.push_back(info.z_base + i);
        for (int i = 0; i < rn.b * rn.a; ++i) yz.push_back(info.y_base + i);
        for (int i = 0; i < rn.c * rn.a; ++i) yz.push_back(info.z_base + i);
        g.layers.push_back({tag + "_uz", uz});
        g.layers.push_back({tag + "_yz", yz});
      }
    }

    interface_vertices = info.out_vertices;
    g.blocks.push_back(std::move(info));
  }

  detail::check(interface_vertices.size() == 1, "last block must have output width 1");
  g.output = interface_vertices[0];
  g.finalize();
  return g;
}

// Seeded Gaussian init on learnable slots, frozen slots keep their fixed
// values. scale is the standard deviation.
inline WeightVector make_init_weights(const ComputationGraph& g, std::uint64_t seed,
                                      double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  WeightVector w(g.num_slots, 0.0);
  for (int s = 0; s < g.num_slots; ++s) {
    if (g.learnable[s])
      w[s] = scale * gauss(rng);
    else
      w[s] = g.frozen_value.empty() ? 0.0 : g.frozen_value[s];
  }
  return w;
}

}  // namespace pathflow
