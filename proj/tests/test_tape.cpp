// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "test_util.hpp"

using namespace spfuse;
using testutil::fd_check;
using testutil::random_mat;

namespace {
constexpr double kTol = 1e-6;
}

TEST_CASE("tape values match direct Eigen composition") {
  Rng rng(11);
  const MatXd a = random_mat(rng, 4, 3);
  const MatXd b = random_mat(rng, 3, 5);
  const MatXd c = random_mat(rng, 4, 5);
  Tape<double> t;
  Var<double> va = leaf(t, a);
  Var<double> vb = leaf(t, b);
  Var<double> vc = leaf(t, c);
  Var<double> y = add(matmul(va, vb), vc);
  CHECK(((a * b + c) - y.value()).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  Var<double> s = sum_all(mul(y, y));
  CHECK(s.value()(0, 0) == doctest::Approx((a * b + c).squaredNorm()));
}

TEST_CASE("tape shape mismatches throw") {
  Tape<double> t;
  Var<double> a = leaf(t, MatXd::Zero(2, 3));
  Var<double> b = leaf(t, MatXd::Zero(3, 2));
  CHECK_THROWS_AS((void)add(a, b), std::invalid_argument);
  CHECK_THROWS_AS((void)mul(a, b), std::invalid_argument);
  CHECK_THROWS_AS((void)matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS((void)concat_cols(a, b), std::invalid_argument);
  CHECK_THROWS_AS((void)slice_cols(a, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS((void)add_rowvec(a, b), std::invalid_argument);
  CHECK_THROWS_AS(t.backward(a.id), std::invalid_argument);
}

TEST_CASE("requires_grad propagation") {
  Tape<double> t;
  Var<double> c1 = constant(t, MatXd::Ones(2, 2));
  Var<double> c2 = constant(t, MatXd::Ones(2, 2));
  CHECK_FALSE(add(c1, c2).requires_grad());
  Var<double> p = leaf(t, MatXd::Ones(2, 2));
  CHECK(add(c1, p).requires_grad());
}

TEST_CASE("unused leaf reports zero gradient") {
  Tape<double> t;
  Var<double> a = leaf(t, MatXd::Ones(2, 2));
  Var<double> b = leaf(t, MatXd::Ones(2, 2));
  Var<double> y = sum_all(a);
  t.backward(y.id);
  CHECK(t.leaf_grad(b.id).cwiseAbs().maxCoeff() == 0.0);
  CHECK(t.leaf_grad(a.id).minCoeff() == 1.0);
}

TEST_CASE("fd: add sub scale mul elementwise") {
  Rng rng(21);
  auto build = [](Tape<double>& t, const std::vector<Var<double>>& v) {
    Var<double> y = add(v[0], v[1]);
    y = sub(y, scale(v[2], 0.7));
    y = mul(y, v[0]);
    return mean_all(y);
  };
  auto res = fd_check(build, {random_mat(rng, 3, 4), random_mat(rng, 3, 4),
                              random_mat(rng, 3, 4)});
  CHECK(res.max_rel < kTol);
}

TEST_CASE("fd: matmul family") {
  Rng rng(22);
  auto build = [](Tape<double>& t, const std::vector<Var<double>>& v) {
    Var<double> y1 = matmul(v[0], v[1]);            // 3x4 * 4x2
    Var<double> y2 = matmul_nt(y1, v[2]);           // 3x2 * (5x2)^T
    Var<double> y3 = matmul_tn(v[0], v[0]);         // 4x4 gram
    return add(mean_all(y2), mean_all(y3));
  };
  auto res = fd_check(build, {random_mat(rng, 3, 4), random_mat(rng, 4, 2),
                              random_mat(rng, 5, 2)});
  CHECK(res.max_rel < kTol);
}

TEST_CASE("fd: broadcasts") {
  Rng rng(23);
  auto build = [](Tape<double>& t, const std::vector<Var<double>>& v) {
    Var<double> y = add_rowvec(v[0], v[1]);
    y = mul_rowvec(y, v[2]);
    y = mul_colvec(y, v[3]);
    return mean_all(y);
  };
  auto res = fd_check(build, {random_mat(rng, 4, 3), random_mat(rng, 1, 3),
                              random_mat(rng, 1, 3), random_mat(rng, 4, 1)});
  CHECK(res.max_rel < kTol);
}

TEST_CASE("fd: activations") {
  Rng rng(24);
  auto build = [](Tape<double>& t, const std::vector<Var<double>>& v) {
    Var<double> y = gelu(v[0]);
    y = add(y, sigmoid(v[0]));
    y = add(y, tanh_op(v[0]));
    y = add(y, exp_op(scale(v[0], 0.3)));
    return mean_all(y);
  };
  auto res = fd_check(build, {random_mat(rng, 5, 4)});
  CHECK(res.max_rel < kTol);
}

TEST_CASE("fd: softmax and log_softmax rows") {
  Rng rng(25);
  auto build = [](Tape<double>& t, const std::vector<Var<double>>& v) {
    Var<double> p = softmax_rows(v[0]);
    Var<double> lp = log_softmax_rows(v[0]);
    return add(mean_all(mul(p, p)), mean_all(mul(lp, constant(t, MatXd::Ones(4, 5)))));
  };
  auto res = fd_check(build, {random_mat(rng, 4, 5)});
  CHECK(res.max_rel < kTol);

  // softmax rows sum to one
  Tape<double> t;
  Var<double> p = softmax_rows(leaf(t, random_mat(rng, 6, 7)));
  for (int r = 0; r < 6; ++r)
    CHECK(p.value().row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fd: standardize_rows") {
  Rng rng(26);
  auto build = [](Tape<double>& t, const std::vector<Var<double>>& v) {
    Var<double> y = standardize_rows(v[0], 1e-5);
    return mean_all(mul(y, v[1]));
  };
  auto res = fd_check(build, {random_mat(rng, 4, 6), random_mat(rng, 4, 6)});
  CHECK(res.max_rel < kTol);

  Tape<double> t;
  Var<double> y = standardize_rows(leaf(t, random_mat(rng, 3, 64)), 1e-9);
  for (int r = 0; r < 3; ++r) {
    CHECK(std::abs(y.value().row(r).mean()) < 1e-9);
    CHECK(y.value().row(r).squaredNorm() / 64.0 == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("fd: structural ops") {
  Rng rng(27);
  std::vector<int> gather_idx = {2, 0, 2, 1};
  std::vector<int> scatter_idx = {1, 3, 1};
  std::vector<int> seg = {0, 1, 0, 2, 1};
  std::vector<std::vector<int>> nbrs = {{1, 2}, {}, {0}, {0, 1, 2}};
  std::vector<int> cols = {1, 0, 2, 1};
  auto build = [&](Tape<double>& t, const std::vector<Var<double>>& v) {
    Var<double> g = gather_rows(v[0], gather_idx);          // 4 rows
    Var<double> sc = scatter_rows(v[1], scatter_idx, 4);    // 3 -> 4 rows
    Var<double> sm = segment_mean_rows(v[2], seg, 3);       // 5 -> 3 rows
    Var<double> nm = neighbor_mean_rows(g, nbrs);
    Var<double> y = add(mean_all(mul(g, sc)), mean_all(sm));
    y = add(y, mean_all(nm));
    y = add(y, mean_all(pick_per_row(g, cols)));
    y = add(y, mean_all(concat_cols(slice_cols(v[0], 0, 2), v[0])));
    return y;
  };
  auto res = fd_check(build, {random_mat(rng, 3, 3), random_mat(rng, 3, 3),
                              random_mat(rng, 5, 3)});
  CHECK(res.max_rel < kTol);
}

TEST_CASE("fd: reductions") {
  Rng rng(28);
  auto build = [](Tape<double>& t, const std::vector<Var<double>>& v) {
    Var<double> y = frobenius_sq(v[0]);
    y = add(y, sum_all(rowwise_mean(v[0])));
    return add(y, mean_all(v[0]));
  };
  auto res = fd_check(build, {random_mat(rng, 4, 3)});
  CHECK(res.max_rel < kTol);
}

TEST_CASE("segment_mean_rows rejects empty segments") {
  Tape<double> t;
  Var<double> a = leaf(t, MatXd::Ones(3, 2));
  CHECK_THROWS_AS((void)segment_mean_rows(a, {0, 0, 2}, 3), std::invalid_argument);
}

TEST_CASE("gradient accumulates over reused subexpression") {
  Tape<double> t;
  MatXd x(1, 1);
  x(0, 0) = 3.0;
  Var<double> v = leaf(t, x);
  Var<double> y = add(mul(v, v), scale(v, 2.0));  // x^2 + 2x, dy/dx = 2x + 2
  t.backward(y.id);
  CHECK(t.leaf_grad(v.id)(0, 0) == doctest::Approx(8.0));
}
