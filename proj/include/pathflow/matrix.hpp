// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cmath>
#include <vector>

namespace pathflow {

// Dense row-major matrix of doubles. Everything here runs at desk scale;
// clarity over blocking.
struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }
  bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && a == o.a; }
};

inline Mat transpose(const Mat& m) {
  Mat t(m.cols, m.rows);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
  return t;
}

inline Mat matmul(const Mat& x, const Mat& y) {
  assert(x.cols == y.rows);
  Mat z(x.rows, y.cols);
  for (int r = 0; r < x.rows; ++r)
    for (int k = 0; k < x.cols; ++k) {
      double v = x(r, k);
      if (v == 0.0) continue;
      for (int c = 0; c < y.cols; ++c) z(r, c) += v * y(k, c);
    }
  return z;
}

// M^T M and M M^T.
inline Mat gram_cols(const Mat& m) { return matmul(transpose(m), m); }
inline Mat gram_rows(const Mat& m) { return matmul(m, transpose(m)); }

inline Mat subtract(const Mat& x, const Mat& y) {
  assert(x.rows == y.rows && x.cols == y.cols);
  Mat z = x;
  for (std::size_t i = 0; i < z.a.size(); ++i) z.a[i] -= y.a[i];
  return z;
}

inline double frob2(const Mat& m) {
  double s = 0.0;
  for (double v : m.a) s += v * v;
  return s;
}

inline double frob(const Mat& m) { return std::sqrt(frob2(m)); }

inline Mat select_rows(const Mat& m, const std::vector<int>& idx) {
  Mat z(static_cast<int>(idx.size()), m.cols);
  for (int r = 0; r < z.rows; ++r)
    for (int c = 0; c < m.cols; ++c) z(r, c) = m(idx[r], c);
  return z;
}

inline Mat select_cols(const Mat& m, const std::vector<int>& idx) {
  Mat z(m.rows, static_cast<int>(idx.size()));
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < z.cols; ++c) z(r, c) = m(r, idx[c]);
  return z;
}

inline Mat select_both(const Mat& m, const std::vector<int>& idx) {
  return select_rows(select_cols(m, idx), idx);
}

inline std::vector<double> matvec(const Mat& m, const std::vector<double>& x) {
  assert(static_cast<int>(x.size()) == m.cols);
  std::vector<double> y(m.rows, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < m.cols; ++c) s += m(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

inline std::vector<double> matvec_t(const Mat& m, const std::vector<double>& x) {
  assert(static_cast<int>(x.size()) == m.rows);
  std::vector<double> y(m.cols, 0.0);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) y[c] += m(r, c) * x[r];
  return y;
}

inline double vec_norm(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

inline double vec_dot(const std::vector<double>& x, const std::vector<double>& y) {
  assert(x.size() == y.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

}  // namespace pathflow
