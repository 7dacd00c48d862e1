// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "pathflow/blocks.hpp"
#include "pathflow/data.hpp"
#include "pathflow/spectral.hpp"
#include "pathflow/train.hpp"
#include "support.hpp"

using namespace pathflow;

namespace {

ComputationGraph lin_chain(std::vector<int> widths, int d) {
  std::vector<BlockSpec> specs;
  int prev = d;
  for (int wdt : widths) {
    specs.push_back(FullyConnectedSpec{prev, wdt, ActivationKind::linear()});
    prev = wdt;
  }
  return build_architecture(specs);
}

Mat random_mat(int rows, int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat m(rows, cols);
  for (double& x : m.a) x = u(rng);
  return m;
}

// A trajectory that is just the one snapshot at t = 0.
Trajectory snapshot_only(const ComputationGraph& g, const WeightVector& w0, const Dataset& data) {
  return run_euler_flow(g, w0, data, LossKind::Squared, 1e-9, 0);
}

double unit_norm_err(const std::vector<double>& v) {
  return std::fabs(vec_norm(v) - 1.0);
}

}  // namespace

TEST_CASE("top singular triplet: closed-form cases") {
  // Identity: every direction is principal, sigma is 1.
  Mat id(3, 3);
  for (int i = 0; i < 3; ++i) id(i, i) = 1.0;
  auto t = top_singular_triplet(id);
  CHECK(t.sigma == Catch::Approx(1.0).margin(1e-12));
  CHECK(t.converged);
  CHECK(unit_norm_err(t.u) < 1e-10);
  CHECK(unit_norm_err(t.v) < 1e-10);

  // Rank-one outer product: sigma = |u||v| and the ratio is exactly 1.
  std::vector<double> uu = {1.0, -2.0, 0.5};
  std::vector<double> vv = {0.3, -0.7};
  Mat outer(3, 2);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) outer(r, c) = uu[r] * vv[c];
  auto to = top_singular_triplet(outer);
  const double un = vec_norm(uu), vn = vec_norm(vv);
  CHECK(to.sigma == Catch::Approx(un * vn).margin(1e-10));
  CHECK(to.sigma * to.sigma / frob2(outer) == Catch::Approx(1.0).margin(1e-12));
  // Canonical orientation: first nonzero of v positive, so both factors flip.
  for (int r = 0; r < 3; ++r) CHECK(to.u[r] == Catch::Approx(uu[r] / un).margin(1e-9));
  for (int c = 0; c < 2; ++c) CHECK(to.v[c] == Catch::Approx(vv[c] / vn).margin(1e-9));

  // Zero matrix: sigma 0, vectors still finite unit.
  Mat z(2, 3);
  auto tz = top_singular_triplet(z);
  CHECK(tz.sigma == 0.0);
  CHECK(unit_norm_err(tz.u) < 1e-10);
  CHECK(unit_norm_err(tz.v) < 1e-10);

  // Tied top singular values: the value still converges.
  Mat tied(3, 3);
  tied(0, 0) = 2.0;
  tied(1, 1) = -2.0;
  tied(2, 2) = 1.0;
  CHECK(top_singular_triplet(tied).sigma == Catch::Approx(2.0).margin(1e-9));
}

TEST_CASE("jacobi svd: reconstruction, orthogonality, power cross-check") {
  std::mt19937_64 rng(2024);
  const std::vector<std::pair<int, int>> shapes = {{8, 5}, {5, 8}, {7, 7}, {12, 3}, {64, 64}};
  for (auto [rows, cols] : shapes) {
    for (int rep = 0; rep < (rows == 64 ? 1 : 4); ++rep) {
      Mat m = random_mat(rows, cols, rng);
      Svd svd = jacobi_svd(m);
      const int k = static_cast<int>(svd.sigma.size());
      REQUIRE(k == std::min(rows, cols));

      // Non-increasing spectrum.
      for (int i = 0; i + 1 < k; ++i) CHECK(svd.sigma[i] >= svd.sigma[i + 1]);

      // U'U = I and V'V = I on the computed columns.
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          double du = 0, dv = 0;
          for (int r = 0; r < rows; ++r) du += svd.u(r, i) * svd.u(r, j);
          for (int r = 0; r < cols; ++r) dv += svd.v(r, i) * svd.v(r, j);
          CHECK(du == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-9));
          CHECK(dv == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-9));
        }

      // Reconstruction U diag(sigma) V'.
      double err2 = 0;
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          double s = 0;
          for (int i = 0; i < k; ++i) s += svd.sigma[i] * svd.u(r, i) * svd.v(c, i);
          err2 += (s - m(r, c)) * (s - m(r, c));
        }
      CHECK(std::sqrt(err2) < 1e-9 * (1.0 + std::sqrt(frob2(m))));

      // Power iteration agrees with the full decomposition on sigma1.
      auto t = top_singular_triplet(m);
      CHECK(std::fabs(t.sigma - svd.sigma[0]) <= 1e-9 * (1.0 + svd.sigma[0]));

      // Frobenius identity: sum of squared singular values.
      double s2 = 0;
      for (double s : svd.sigma) s2 += s * s;
      CHECK(s2 == Catch::Approx(frob2(m)).epsilon(1e-10));
    }
  }
}

TEST_CASE("representations: Frobenius norms agree across forms") {
  std::mt19937_64 rng(77);

  // Conv: both flattenings carry the same entries.
  auto gc = build_architecture({Conv1DSpec{2, 3, 2, 1, 5, ActivationKind::linear()},
                                FullyConnectedSpec{6, 1, ActivationKind::linear()}});
  auto wc = make_init_weights(gc, 3, 0.7);
  const BlockInfo& conv = gc.blocks[0];
  CHECK(frob2(conv_t1(conv, wc)) == Catch::Approx(frob2(conv_t2(conv, wc))).epsilon(1e-15));
  double slot_sum = 0;
  for (int s = conv.slot_base; s < conv.slot_base + conv.slot_count; ++s) slot_sum += wc[s] * wc[s];
  CHECK(frob2(conv_t1(conv, wc)) == Catch::Approx(slot_sum).epsilon(1e-15));

  // Residual block: the two stacked forms split into their parts.
  auto gr = build_architecture({ResNetSpec{3, 2, 3, ActivationKind::linear()},
                                FullyConnectedSpec{3, 1, ActivationKind::linear()}});
  auto wr = make_init_weights(gr, 5, 0.6);
  const BlockInfo& rn = gr.blocks[0];
  CHECK(frob2(resnet_a(rn, wr)) ==
        Catch::Approx(frob2(resnet_u(rn, wr)) + frob2(resnet_z(rn, wr))).epsilon(1e-15));
  CHECK(frob2(resnet_b(rn, wr)) ==
        Catch::Approx(frob2(resnet_y(rn, wr)) + frob2(resnet_z(rn, wr))).epsilon(1e-15));

  // Free-standing tensor flattenings: 1x1x1 and a random 2x3x2.
  CHECK(flatten_t1(1, 1, 1, {0.37})(0, 0) == 0.37);
  CHECK(flatten_t2(1, 1, 1, {0.37})(0, 0) == 0.37);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> t(2 * 3 * 2);
  for (double& x : t) x = u(rng);
  CHECK(frob2(flatten_t1(2, 3, 2, t)) == Catch::Approx(frob2(flatten_t2(2, 3, 2, t))).epsilon(1e-15));

  // Free-standing flattenings agree with the conv block forms once the slot
  // order is translated: slot (ch,q,k) = k*a*b + ch*b + q.
  const int a = conv.a, b = conv.b, c = conv.c;
  std::vector<double> entries(a * b * c);
  for (int ch = 0; ch < a; ++ch)
    for (int q = 0; q < b; ++q)
      for (int k = 0; k < c; ++k)
        entries[(ch * b + q) * c + k] = wc[conv.slot_base + k * a * b + ch * b + q];
  CHECK(flatten_t1(a, b, c, entries) == conv_t1(conv, wc));
  CHECK(flatten_t2(a, b, c, entries) == conv_t2(conv, wc));
}

TEST_CASE("flattening inequality: all small shapes, random tensors") {
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int a = 1; a <= 4; ++a)
    for (int b = 1; b <= 4; ++b)
      for (int c = 1; c <= 4; ++c) {
        for (int rep = 0; rep < 100; ++rep) {
          std::vector<double> t(a * b * c);
          for (double& x : t) x = u(rng);
          auto f = flatten_inequality(a, b, c, t);
          REQUIRE(f.holds);
          CHECK(f.lhs <= f.rhs + 1e-9 * (1.0 + f.rhs));
          // Same inequality through the full decomposition.
          const double j1 = jacobi_svd(flatten_t1(a, b, c, t)).sigma[0];
          const double j2 = jacobi_svd(flatten_t2(a, b, c, t)).sigma[0];
          CHECK(j1 * j1 / std::min(a, b) <= j2 * j2 + 1e-9 * (1.0 + j2 * j2));
          CHECK(std::fabs(f.lhs * std::min(a, b) - j1 * j1) <= 1e-9 * (1.0 + j1 * j1));
        }
      }
}

TEST_CASE("alignment shape: suffix detection and rejection") {
  // Plain linear chain: everything after the inputs chains.
  auto g1 = lin_chain({3, 3, 1}, 2);
  auto s1 = alignment_shape(g1);
  CHECK(s1.fin == 2);
  CHECK(s1.k_conv == 0);
  REQUIRE(s1.depth() == 2);
  CHECK(s1.chain == std::vector<int>{0, 1});

  // ReLU interior layer stops the scan.
  auto g2 = build_architecture({FullyConnectedSpec{2, 3, ActivationKind::relu()},
                                FullyConnectedSpec{3, 1, ActivationKind::linear()}});
  CHECK(alignment_shape(g2).depth() == 0);

  // Free-skip linear residual chains; identity skip does not.
  auto g3 = build_architecture({FullyConnectedSpec{2, 3, ActivationKind::linear()},
                                ResNetSpec{3, 2, 3, ActivationKind::linear()},
                                FullyConnectedSpec{3, 1, ActivationKind::linear()}});
  CHECK(alignment_shape(g3).chain == std::vector<int>{0, 1});
  auto g4 = build_architecture(
      {FullyConnectedSpec{2, 3, ActivationKind::linear()},
       ResNetSpec{3, 3, 3, ActivationKind::linear(), ResNetSpec::Skip::Identity, {}},
       FullyConnectedSpec{3, 1, ActivationKind::linear()}});
  CHECK(alignment_shape(g4).depth() == 0);

  // Convs may only sit in front of the matrix run.
  auto g5 = build_architecture({Conv1DSpec{1, 2, 2, 1, 5, ActivationKind::linear()},
                                FullyConnectedSpec{8, 3, ActivationKind::linear()},
                                FullyConnectedSpec{3, 1, ActivationKind::linear()}});
  auto s5 = alignment_shape(g5);
  CHECK(s5.k_conv == 1);
  CHECK(s5.chain == std::vector<int>{0, 1});

  // A second matrix run before an interior conv belongs to the prefix.
  auto g6 = build_architecture({FullyConnectedSpec{2, 2, ActivationKind::linear()},
                                Conv1DSpec{1, 2, 2, 1, 2, ActivationKind::linear()},
                                FullyConnectedSpec{2, 1, ActivationKind::linear()}});
  auto s6 = alignment_shape(g6);
  CHECK(s6.k_conv == 1);
  CHECK(s6.chain == std::vector<int>{1});

  // The network must end in a learnable linear row, and needs block structure
  // at all: a raw edge-list graph is rejected.
  ComputationGraph raw;
  raw.act = {ActivationKind::linear(), ActivationKind::linear()};
  raw.inputs = {0};
  raw.output = 1;
  raw.edges = {{0, 1, 0}};
  raw.num_slots = 1;
  raw.learnable = {1};
  raw.finalize();
  CHECK_THROWS_AS(alignment_shape(raw), ValidationError);
  auto g8 = build_architecture({FullyConnectedSpec{2, 3, ActivationKind::linear()},
                                FullyConnectedSpec{3, 1, ActivationKind::relu()}});
  CHECK_THROWS_AS(alignment_shape(g8), ValidationError);
}

TEST_CASE("alignment constants: counts and conv cost factors") {
  std::mt19937_64 rng(9);

  // Trailing all-fully-connected suffix: trivial constant 1 everywhere.
  auto g1 = lin_chain({4, 4, 1}, 3);
  auto w1 = make_init_weights(g1, 1, 0.5);
  for (int j = 1; j <= 2; ++j) {
    auto c = reduced_alignment_constants(g1, j, w1);
    CHECK(c.n_r == 0);
    CHECK(c.v_c == 1.0);
    CHECK(c.bound_const == 1.0);
    CHECK(c.d >= 0.0);
  }

  // One free-skip residual block between the layer and the row: factor 8.
  auto g2 = build_architecture({FullyConnectedSpec{3, 3, ActivationKind::linear()},
                                ResNetSpec{3, 3, 3, ActivationKind::linear()},
                                FullyConnectedSpec{3, 1, ActivationKind::linear()}});
  auto w2 = make_init_weights(g2, 2, 0.5);
  auto c21 = reduced_alignment_constants(g2, 1, w2);
  CHECK(c21.n_r == 1);
  CHECK(c21.bound_const == 8.0);
  // The residual layer itself is bounded in its input-facing form and
  // charges its own switch, so it also carries the factor 8.
  auto c22 = reduced_alignment_constants(g2, 2, w2);
  CHECK(c22.n_r == 1);
  CHECK(c22.bound_const == 8.0);

  // Conv with in-channels 3 and kernel 4 after the layer: factor min(3,4)=3.
  auto g3 = build_architecture({Conv1DSpec{1, 2, 3, 1, 5, ActivationKind::linear()},
                                Conv1DSpec{3, 4, 2, 1, 4, ActivationKind::linear()},
                                FullyConnectedSpec{2, 1, ActivationKind::linear()}});
  auto w3 = make_init_weights(g3, 3, 0.5);
  auto c31 = reduced_alignment_constants(g3, 1, w3);
  auto c32 = reduced_alignment_constants(g3, 2, w3);
  CHECK(c32.v_c == 2.0);  // maxdim of the row layer (1 x 2)
  CHECK(c31.v_c == 6.0);  // extra factor min(3,4) = 3
  CHECK(c31.v_c / c32.v_c == Catch::Approx(3.0));
  CHECK(c31.bound_const == 6.0);

  // Conv feeding a residual block: 8 times the stacked form's max dimension.
  auto g5 = build_architecture({Conv1DSpec{1, 2, 2, 1, 4, ActivationKind::linear()},
                                ResNetSpec{6, 3, 2, ActivationKind::linear()},
                                FullyConnectedSpec{2, 1, ActivationKind::linear()}});
  auto w5 = make_init_weights(g5, 5, 0.4);
  auto c51 = reduced_alignment_constants(g5, 1, w5);
  CHECK(c51.n_r == 1);
  CHECK(c51.v_c == 9.0);  // maxdim of [U Z], a 2 x 9 block
  CHECK(c51.bound_const == 72.0);

  // Layer index must stay inside the chained suffix.
  CHECK_THROWS_AS(reduced_alignment_constants(g2, 0, w2), ValidationError);
  CHECK_THROWS_AS(reduced_alignment_constants(g2, 3, w2), ValidationError);
  (void)rng;
}

TEST_CASE("alignment constants: hand-built offset for a two-layer chain") {
  auto g = lin_chain({2, 1}, 2);
  WeightVector w0 = {1.0, 0.0, 0.5, 0.5, 0.5, -0.25};
  auto c = reduced_alignment_constants(g, 1, w0);
  CHECK(c.bound_const == 1.0);

  // Offset = frob2 gap of the two layers plus the operator norm of the Gram
  // gap, rebuilt here from scratch through the full decomposition.
  Mat w1 = fc_matrix(g.blocks[0], w0);
  Mat w2 = fc_matrix(g.blocks[1], w0);
  Mat gap = subtract(gram_cols(w2), gram_rows(w1));
  const double oracle = frob2(w1) - frob2(w2) + jacobi_svd(gap).sigma[0];
  CHECK(c.d == Catch::Approx(oracle).margin(1e-12));
  CHECK(c.d == Catch::Approx(2.425485254003).margin(1e-9));

  // The bound holds with equality slack at the measuring point.
  Dataset ds;
  ds.xs = {{0.4, 0.2}, {-0.3, 0.5}};
  ds.ys = {1, -1};
  ds.validate();
  auto rep = reduced_alignment_check(g, snapshot_only(g, w0, ds));
  REQUIRE(rep.layers.size() == 1);
  CHECK(rep.layers[0].holds);
  CHECK(rep.layers[0].max_violation <= 1e-12);
}

TEST_CASE("alignment bound holds along training runs") {
  // Linear chain under explicit Euler.
  auto g1 = lin_chain({3, 3, 1}, 3);
  auto data1 = make_separable_dataset(12, 3, 0.3, 23);
  auto w1 = make_init_weights(g1, 7, 0.5);
  auto t1 = run_euler_flow(g1, w1, data1, LossKind::Logistic, 1e-3, 3000, 30);
  auto r1 = reduced_alignment_check(g1, t1);
  REQUIRE(r1.layers.size() == 2);
  CHECK(r1.all_hold);
  for (const auto& l : r1.layers) {
    CHECK(l.holds);
    CHECK(l.max_violation < 0.0);
    CHECK(l.lhs.front() <= l.constants.d + 1e-12);
  }

  // Residual suffix under Euler: constant 8 on the layer before the block
  // and on the block itself (it charges its own switch).
  auto g2 = build_architecture({FullyConnectedSpec{3, 3, ActivationKind::linear()},
                                ResNetSpec{3, 3, 3, ActivationKind::linear()},
                                FullyConnectedSpec{3, 1, ActivationKind::linear()}});
  auto data2 = make_separable_dataset(12, 3, 0.3, 29);
  auto w2 = make_init_weights(g2, 11, 0.5);
  auto t2 = run_euler_flow(g2, w2, data2, LossKind::Logistic, 1e-3, 2000, 20);
  auto r2 = reduced_alignment_check(g2, t2);
  REQUIRE(r2.layers.size() == 2);
  CHECK(r2.all_hold);
  CHECK(r2.layers[0].constants.bound_const == 8.0);
  CHECK(r2.layers[1].constants.bound_const == 8.0);

  // Same story under adaptive gradient descent.
  auto t2gd = run_gd_adaptive(g2, w2, data2, LossKind::Logistic, 400, 4);
  CHECK(reduced_alignment_check(g2, t2gd).all_hold);

  // Conv suffixes, squared loss.
  auto g3 = build_architecture({Conv1DSpec{1, 2, 3, 1, 5, ActivationKind::linear()},
                                Conv1DSpec{3, 4, 2, 1, 4, ActivationKind::linear()},
                                FullyConnectedSpec{2, 1, ActivationKind::linear()}});
  auto data3 = make_separable_dataset(10, 5, 0.3, 31);
  auto w3 = make_init_weights(g3, 13, 0.5);
  auto t3 = run_euler_flow(g3, w3, data3, LossKind::Squared, 1e-3, 500, 10);
  CHECK(reduced_alignment_check(g3, t3).all_hold);

  auto g4 = build_architecture({Conv1DSpec{1, 2, 2, 1, 4, ActivationKind::linear()},
                                ResNetSpec{6, 3, 2, ActivationKind::linear()},
                                FullyConnectedSpec{2, 1, ActivationKind::linear()}});
  auto data4 = make_separable_dataset(10, 4, 0.3, 37);
  auto w4 = make_init_weights(g4, 17, 0.4);
  auto t4 = run_euler_flow(g4, w4, data4, LossKind::Squared, 1e-3, 500, 10);
  CHECK(reduced_alignment_check(g4, t4).all_hold);

  // Trajectory without snapshots is rejected.
  Trajectory empty;
  CHECK_THROWS_AS(reduced_alignment_check(g1, empty), ValidationError);
}

TEST_CASE("spectral series: rank-one start, row layer, vector norms") {
  // First layer initialized as an outer product: ratio exactly 1 at t = 0.
  auto g = lin_chain({2, 1}, 2);
  WeightVector w0 = {0.3, -0.3, 0.4, -0.4, 0.5, 0.25};  // W1 = (0.6,0.8)'(0.5,-0.5)
  Dataset ds;
  ds.xs = {{0.4, 0.2}, {-0.3, 0.5}};
  ds.ys = {1, -1};
  ds.validate();
  auto series = lowrank_and_alignment_series(g, snapshot_only(g, w0, ds), {0, 1});
  REQUIRE(series.size() == 2);
  CHECK(series[0].ratio.front() == Catch::Approx(1.0).margin(1e-10));
  CHECK(series[0].rank1_residual.front() == Catch::Approx(0.0).margin(1e-8));

  // Row layers are rank one by shape: ratio pinned to 1 along a real run.
  auto g2 = lin_chain({3, 3, 1}, 3);
  auto data2 = make_separable_dataset(12, 3, 0.3, 23);
  auto w2 = make_init_weights(g2, 7, 0.5);
  auto t2 = run_euler_flow(g2, w2, data2, LossKind::Logistic, 1e-3, 500, 10);
  auto s2 = lowrank_and_alignment_series(g2, t2, {0, 1, 2});
  REQUIRE(s2.size() == 3);
  for (double r : s2[2].ratio) CHECK(r == Catch::Approx(1.0).margin(1e-10));
  CHECK(std::isnan(s2[2].alignment_next.back()));

  for (const auto& s : s2)
    for (std::size_t i = 0; i < s.times.size(); ++i) {
      CHECK(unit_norm_err(s.u1[i]) < 1e-10);
      CHECK(unit_norm_err(s.v1[i]) < 1e-10);
      // Trivial two-sided bound on the ratio.
      const Mat m = fc_matrix(g2.blocks[s.block], t2.weights[i]);
      const double lo = 1.0 / std::min(m.rows, m.cols);
      CHECK(s.ratio[i] >= lo - 1e-9);
      CHECK(s.ratio[i] <= 1.0 + 1e-9);
      // Residual identity: ||W/f - u v'||_F^2 = 2 - 2 sigma1 / f. Compared on
      // the squared scale; the right-hand side cancels near rank one.
      const double f = std::sqrt(s.frob2[i]);
      const double res2_expect = 2.0 - 2.0 * std::sqrt(s.sigma1_2[i]) / f;
      CHECK(s.rank1_residual[i] * s.rank1_residual[i] ==
            Catch::Approx(res2_expect).margin(1e-9));
      // Alignment is a cosine.
      if (!std::isnan(s.alignment_next[i])) {
        CHECK(s.alignment_next[i] >= 0.0);
        CHECK(s.alignment_next[i] <= 1.0 + 1e-10);
      }
    }

  CHECK_THROWS_AS(lowrank_and_alignment_series(g2, t2, {9}), ValidationError);
}

TEST_CASE("spectral series: long adaptive run approaches rank one and aligns") {
  auto g = lin_chain({2, 2, 1}, 2);
  auto data = make_separable_dataset(8, 2, 0.3, 17);
  auto w0 = make_init_weights(g, 5, 0.5);
  auto traj = run_gd_adaptive(g, w0, data, LossKind::Logistic, 4000, 10);
  auto series = lowrank_and_alignment_series(g, traj, {0, 1, 2});

  double f0 = 0, fT = 0;
  for (const auto& s : series) {
    f0 += s.frob2.front();
    fT += s.frob2.back();
  }
  REQUIRE(fT >= 10.0 * f0);  // surrogate for the diverging-norm regime

  for (const auto& s : series) CHECK(s.ratio.back() >= 0.99);
  CHECK(series[0].alignment_next.back() >= 0.99);
  CHECK(series[1].alignment_next.back() >= 0.99);
  CHECK(series[2].ratio.back() == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("residual shuffle inequality") {
  // Identity weights: gap is zero, margin is 2 - 2/8 exactly.
  auto g = build_architecture({ResNetSpec{2, 2, 2, ActivationKind::linear()},
                               FullyConnectedSpec{2, 1, ActivationKind::linear()}});
  const BlockInfo& rn = g.blocks[0];
  WeightVector w0(g.num_slots, 0.0);
  for (int i = 0; i < 2; ++i) {
    w0[rn.y_base + i * 2 + i] = 1.0;
    w0[rn.u_base + i * 2 + i] = 1.0;
    w0[rn.z_base + i * 2 + i] = 1.0;
  }
  w0[g.blocks[1].slot_base] = 1.0;
  w0[g.blocks[1].slot_base + 1] = 1.0;
  Dataset ds;
  ds.xs = {{0.5, -0.2}, {-0.4, 0.3}};
  ds.ys = {1, -1};
  ds.validate();
  auto sc = resnet_shuffle_check(g, snapshot_only(g, w0, ds), 0);
  REQUIRE(sc.applicable);
  CHECK(sc.d_prime == Catch::Approx(0.0).margin(1e-12));
  CHECK(sc.a_norm2.front() == Catch::Approx(2.0).margin(1e-10));
  CHECK(sc.b_norm2.front() == Catch::Approx(2.0).margin(1e-10));
  CHECK(sc.min_margin == Catch::Approx(1.75).margin(1e-9));
  CHECK(sc.holds);

  // Trained free-skip linear block: inequality at every logged step and the
  // offset matches an independently decomposed Gram gap.
  auto g2 = build_architecture({FullyConnectedSpec{2, 3, ActivationKind::linear()},
                                ResNetSpec{3, 2, 3, ActivationKind::linear()},
                                FullyConnectedSpec{3, 1, ActivationKind::linear()}});
  auto data2 = make_separable_dataset(10, 2, 0.3, 41);
  auto w2 = make_init_weights(g2, 19, 0.5);
  auto t2 = run_euler_flow(g2, w2, data2, LossKind::Logistic, 1e-3, 2000, 20);
  auto sc2 = resnet_shuffle_check(g2, t2, 1);
  REQUIRE(sc2.applicable);
  CHECK(sc2.holds);
  CHECK(sc2.min_margin > 0.0);
  const BlockInfo& rb = g2.blocks[1];
  Mat gap0 = subtract(gram_cols(resnet_u(rb, w2)), gram_rows(resnet_y(rb, w2)));
  CHECK(sc2.d_prime == Catch::Approx(jacobi_svd(gap0).sigma[0] / 2.0).margin(1e-9));

  // Applicability gates.
  CHECK(resnet_shuffle_check(g2, t2, 0).reason == "not a residual block");
  CHECK(resnet_shuffle_check(g2, t2, 7).reason == "no such block");
  auto g3 = build_architecture(
      {ResNetSpec{2, 2, 2, ActivationKind::linear(), ResNetSpec::Skip::Identity, {}},
       FullyConnectedSpec{2, 1, ActivationKind::linear()}});
  auto w3 = make_init_weights(g3, 23, 0.5);
  auto t3 = snapshot_only(g3, w3, ds);
  CHECK(resnet_shuffle_check(g3, t3, 0).reason == "skip weights are frozen");
  auto g4 = build_architecture({ResNetSpec{2, 2, 2, ActivationKind::relu()},
                                FullyConnectedSpec{2, 1, ActivationKind::linear()}});
  auto w4 = make_init_weights(g4, 29, 0.5);
  auto t4 = snapshot_only(g4, w4, ds);
  CHECK(resnet_shuffle_check(g4, t4, 0).reason == "activation is not linear");
}

TEST_CASE("combined shuffle and flatten report") {
  auto g = build_architecture({Conv1DSpec{1, 2, 2, 1, 4, ActivationKind::linear()},
                               ResNetSpec{6, 3, 2, ActivationKind::linear()},
                               FullyConnectedSpec{2, 1, ActivationKind::linear()}});
  auto data = make_separable_dataset(10, 4, 0.3, 37);
  auto w0 = make_init_weights(g, 17, 0.4);
  auto traj = run_euler_flow(g, w0, data, LossKind::Squared, 1e-3, 800, 20);
  auto rep = shuffle_and_flatten_checks(g, traj);
  REQUIRE(rep.flatten.size() == 1);
  REQUIRE(rep.shuffle.size() == 1);
  CHECK(rep.flatten[0].holds);
  CHECK(rep.flatten[0].min_margin > -1e-12);
  CHECK(rep.shuffle[0].applicable);
  CHECK(rep.shuffle[0].holds);
  CHECK(rep.all_hold);
  REQUIRE(rep.flatten[0].lhs.size() == static_cast<std::size_t>(traj.logged()));

  // A block outside the inequality's scope does not poison the verdict.
  auto g2 = build_architecture({ResNetSpec{2, 2, 2, ActivationKind::relu()},
                                FullyConnectedSpec{2, 1, ActivationKind::linear()}});
  auto w2 = make_init_weights(g2, 31, 0.4);
  Dataset ds;
  ds.xs = {{0.5, -0.2}, {-0.4, 0.3}};
  ds.ys = {1, -1};
  ds.validate();
  auto rep2 = shuffle_and_flatten_checks(g2, snapshot_only(g2, w2, ds));
  REQUIRE(rep2.shuffle.size() == 1);
  CHECK_FALSE(rep2.shuffle[0].applicable);
  CHECK(rep2.all_hold);
}
