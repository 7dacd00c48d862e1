// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pathflow/matrix.hpp"

namespace pathflow {

struct SingularTriplet {
  double sigma = 0.0;
  std::vector<double> u, v;
  bool converged = false;
  int iterations = 0;
};

namespace detail {

// First exactly-nonzero entry decides the orientation of (u, v).
inline void canonicalize_pair(std::vector<double>& u, std::vector<double>& v) {
  for (double x : v) {
    if (x == 0.0) continue;
    if (x < 0.0)
      for (auto* vec : {&u, &v})
        for (double& y : *vec) y = -y;
    return;
  }
}

// Deterministic start vector: all-ones with a small per-index tilt, so the
// exactly balanced matrices that come out of symmetric nets (zero row sums,
// mirrored columns) cannot hide the top direction from the iteration. When
// even the tilted start maps to zero, fall back to the heaviest column's
// basis vector, which has a nonzero image whenever the matrix is nonzero.
inline std::vector<double> power_start(const Mat& m) {
  std::vector<double> v(m.cols);
  for (int j = 0; j < m.cols; ++j) v[j] = 1.0 + static_cast<double>(j + 1) / 1024.0;
  const double n = vec_norm(v);
  for (double& x : v) x /= n;
  if (vec_norm(matvec(m, v)) > 0.0) return v;
  int best = 0;
  double best_norm = -1.0;
  for (int j = 0; j < m.cols; ++j) {
    double cn = 0.0;
    for (int i = 0; i < m.rows; ++i) cn += m(i, j) * m(i, j);
    if (cn > best_norm) {
      best_norm = cn;
      best = j;
    }
  }
  std::vector<double> e(m.cols, 0.0);
  e[best] = 1.0;
  return e;
}

}  // namespace detail

// Power iteration on M^T M from a fixed deterministic start. Stops when the
// Rayleigh quotient moves by a relative 1e-12 or after 1e5 iterations,
// whichever first; the result is returned either way with `converged` saying
// which.
inline SingularTriplet top_singular_triplet(const Mat& m) {
  SingularTriplet t;
  if (m.rows == 0 || m.cols == 0) return t;
  std::vector<double> v = detail::power_start(m);
  double rayleigh = -1.0;
  const int cap = 100000;
  for (int it = 1; it <= cap; ++it) {
    std::vector<double> z = matvec(m, v);
    double s2 = vec_dot(z, z);
    t.iterations = it;
    if (s2 == 0.0) {
      t.sigma = 0.0;
      t.u.assign(m.rows, 1.0 / std::sqrt(static_cast<double>(m.rows)));
      t.v = v;
      t.converged = true;
      detail::canonicalize_pair(t.u, t.v);
      return t;
    }
    if (rayleigh >= 0.0 && std::fabs(s2 - rayleigh) <= 1e-12 * s2) {
      t.converged = true;
      rayleigh = s2;
      break;
    }
    rayleigh = s2;
    std::vector<double> w = matvec_t(m, z);
    double wn = vec_norm(w);
    if (wn == 0.0) break;
    for (double& x : w) x /= wn;
    v = std::move(w);
  }
  t.sigma = std::sqrt(rayleigh);
  std::vector<double> z = matvec(m, v);
  double zn = vec_norm(z);
  if (zn > 0.0)
    for (double& x : z) x /= zn;
  t.u = std::move(z);
  t.v = std::move(v);
  detail::canonicalize_pair(t.u, t.v);
  return t;
}

inline double spectral_norm(const Mat& m) { return top_singular_triplet(m).sigma; }

struct Svd {
  std::vector<double> sigma;  // descending
  Mat u;                      // rows x k
  Mat v;                      // cols x k
};

// One-sided Jacobi (Hestenes) full SVD for small matrices; serves as the
// independent reference for the power iteration above.
inline Svd jacobi_svd(const Mat& input) {
  bool transposed = input.rows < input.cols;
  Mat a = transposed ? transpose(input) : input;
  const int m = a.rows, n = a.cols;
  Mat v(n, n);
  for (int i = 0; i < n; ++i) v(i, i) = 1.0;

  const double tol = 1e-14;
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double alpha = 0, beta = 0, gamma = 0;
        for (int i = 0; i < m; ++i) {
          alpha += a(i, p) * a(i, p);
          beta += a(i, q) * a(i, q);
          gamma += a(i, p) * a(i, q);
        }
        if (std::fabs(gamma) <= tol * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        double zeta = (beta - alpha) / (2.0 * gamma);
        double t = (zeta >= 0 ? 1.0 : -1.0) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = c * t;
        for (int i = 0; i < m; ++i) {
          double ap = a(i, p), aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
        for (int i = 0; i < n; ++i) {
          double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sig(n);
  Mat u(m, n);
  for (int j = 0; j < n; ++j) {
    double nj = 0;
    for (int i = 0; i < m; ++i) nj += a(i, j) * a(i, j);
    sig[j] = std::sqrt(nj);
    if (sig[j] > 0)
      for (int i = 0; i < m; ++i) u(i, j) = a(i, j) / sig[j];
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return sig[x] > sig[y]; });

  Svd out;
  out.sigma.resize(n);
  out.u = Mat(m, n);
  out.v = Mat(n, n);
  for (int j = 0; j < n; ++j) {
    out.sigma[j] = sig[order[j]];
    for (int i = 0; i < m; ++i) out.u(i, j) = u(i, order[j]);
    for (int i = 0; i < n; ++i) out.v(i, j) = v(i, order[j]);
  }
  if (transposed) std::swap(out.u, out.v);
  return out;
}

}  // namespace pathflow
