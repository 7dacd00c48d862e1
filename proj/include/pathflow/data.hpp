// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "pathflow/graph.hpp"

namespace pathflow {

// Binary classification data. Inputs live in the closed unit ball, labels in
// {-1, +1}.
struct Dataset {
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;

  int size() const { return static_cast<int>(xs.size()); }
  int dim() const { return xs.empty() ? 0 : static_cast<int>(xs[0].size()); }

  void validate() const {
    detail::check(!xs.empty(), "dataset is empty");
    detail::check(xs.size() == ys.size(), "dataset xs/ys size mismatch");
    for (const auto& x : xs) {
      detail::check(x.size() == xs[0].size(), "dataset dimension mismatch");
      double n2 = 0.0;
      for (double v : x) n2 += v * v;
      detail::check(n2 <= 1.0 + 1e-12, "dataset point outside the unit ball");
    }
    for (double y : ys) detail::check(y == 1.0 || y == -1.0, "label not in {-1,+1}");
  }
};

// Draws n points uniformly from the unit ball, rejecting those within
// `margin` of the hyperplane through a random unit normal u; labels are the
// side of the hyperplane. The first two points are forced to opposite sides
// so both classes are always present.
inline Dataset make_separable_dataset(int n, int d, double margin, std::uint64_t seed) {
  detail::check(n >= 2, "need at least two points");
  detail::check(d >= 1, "need dimension at least one");
  detail::check(margin > 0.0 && margin < 1.0, "margin must lie in (0,1)");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<double> u(d);
  double un = 0.0;
  do {
    un = 0.0;
    for (double& v : u) {
      v = gauss(rng);
      un += v * v;
    }
  } while (un == 0.0);
  un = std::sqrt(un);
  for (double& v : u) v /= un;

  auto draw_ball = [&] {
    std::vector<double> x(d);
    double n2 = 0.0;
    do {
      n2 = 0.0;
      for (double& v : x) {
        v = gauss(rng);
        n2 += v * v;
      }
    } while (n2 == 0.0);
    double r = std::pow(unif(rng), 1.0 / d) / std::sqrt(n2);
    for (double& v : x) v *= r;
    return x;
  };

  Dataset data;
  long long attempts_left = 200000LL + 1000LL * n;
  for (int i = 0; i < n; ++i) {
    for (;;) {
      if (--attempts_left < 0)
        throw ValidationError("separable sampling timed out; margin too demanding");
      std::vector<double> x = draw_ball();
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += u[j] * x[j];
      bool ok = std::fabs(dot) >= margin;
      if (i == 0) ok = dot >= margin;
      if (i == 1) ok = dot <= -margin;
      if (!ok) continue;
      data.xs.push_back(std::move(x));
      data.ys.push_back(dot >= 0.0 ? 1.0 : -1.0);
      break;
    }
  }
  data.validate();
  return data;
}

}  // namespace pathflow
