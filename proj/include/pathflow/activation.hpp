// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pathflow {

// Per-vertex activation. All of these are positively 1-homogeneous and fix 0,
// which is what the rest of the library leans on (path decompositions, scaling
// laws, the conserved quantities along gradient flow).
struct ActivationKind {
  enum class Tag { Linear, ReLU, LeakyReLU };

  Tag tag = Tag::Linear;
  double alpha = 0.0;  // negative-side slope, LeakyReLU only

  static ActivationKind linear() { return {Tag::Linear, 0.0}; }
  static ActivationKind relu() { return {Tag::ReLU, 0.0}; }
  static ActivationKind leaky_relu(double a) { return {Tag::LeakyReLU, a}; }

  double apply(double x) const {
    switch (tag) {
      case Tag::Linear:
        return x;
      case Tag::ReLU:
        return x >= 0.0 ? x : 0.0;
      case Tag::LeakyReLU:
        return x >= 0.0 ? x : alpha * x;
    }
    return x;
  }

  // Subgradient selection: slope 1 exactly when the preactivation is >= 0.
  // The choice at 0 matters; every identity checked downstream assumes it.
  double slope(double x) const {
    switch (tag) {
      case Tag::Linear:
        return 1.0;
      case Tag::ReLU:
        return x >= 0.0 ? 1.0 : 0.0;
      case Tag::LeakyReLU:
        return x >= 0.0 ? 1.0 : alpha;
    }
    return 1.0;
  }

  // Activation pattern bit: linear vertices always count as on.
  bool active(double x) const {
    return tag == Tag::Linear || x >= 0.0;
  }

  bool operator==(const ActivationKind& o) const {
    return tag == o.tag && (tag != Tag::LeakyReLU || alpha == o.alpha);
  }
};

inline std::string to_string(const ActivationKind& k) {
  switch (k.tag) {
    case ActivationKind::Tag::Linear:
      return "linear";
    case ActivationKind::Tag::ReLU:
      return "relu";
    case ActivationKind::Tag::LeakyReLU:
      return "leaky_relu(" + std::to_string(k.alpha) + ")";
  }
  return "?";
}

inline ActivationKind activation_from_name(const std::string& name, double alpha = 0.01) {
  if (name == "linear") return ActivationKind::linear();
  if (name == "relu") return ActivationKind::relu();
  if (name == "leaky_relu") return ActivationKind::leaky_relu(alpha);
  throw std::runtime_error("unknown activation name: " + name);
}

}  // namespace pathflow
