// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace pathflow {

enum class LossKind { Logistic, Exponential, Squared };

// All losses are functions of the margin z = y * output.
inline double loss_value(LossKind k, double z) {
  switch (k) {
    case LossKind::Logistic:
      return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
    case LossKind::Exponential:
      return std::exp(-z);
    case LossKind::Squared:
      return 0.5 * (1.0 - z) * (1.0 - z);
  }
  return 0.0;
}

inline double loss_deriv(LossKind k, double z) {
  switch (k) {
    case LossKind::Logistic:
      return -1.0 / (1.0 + std::exp(z));
    case LossKind::Exponential:
      return -std::exp(-z);
    case LossKind::Squared:
      return z - 1.0;
  }
  return 0.0;
}

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::Logistic:
      return "logistic";
    case LossKind::Exponential:
      return "exponential";
    case LossKind::Squared:
      return "squared";
  }
  return "?";
}

inline LossKind loss_from_name(const std::string& name) {
  if (name == "logistic") return LossKind::Logistic;
  if (name == "exponential") return LossKind::Exponential;
  if (name == "squared") return LossKind::Squared;
  throw std::runtime_error("unknown loss name: " + name);
}

}  // namespace pathflow
