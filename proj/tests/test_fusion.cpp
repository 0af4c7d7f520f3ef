// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "spfuse/fusion.hpp"
#include "test_util.hpp"

using namespace spfuse;
using testutil::fd_check;
using testutil::random_mat;

namespace {

ParamBundle<double> saf_params(int d_decomp, int d_attn, int d_fused,
                               std::uint64_t seed) {
  ParamBundle<double> b;
  init_saf_params(b, d_decomp, d_attn, d_fused, Rng(seed).child("saf"));
  return b;
}

}  // namespace

TEST_CASE("single key: attention rows are [1.0] and context copies V2 row 0") {
  auto b = saf_params(4, 3, 8, 1);
  Rng rng(61);
  MatXd s3d = random_mat(rng, 5, 4);
  MatXd s2d = random_mat(rng, 1, 4);
  auto out = saf_attention<double>(s3d, s2d, b);
  REQUIRE(out.attention.cols() == 1);
  for (int r = 0; r < 5; ++r)
    CHECK(out.attention(r, 0) == doctest::Approx(1.0).epsilon(1e-12));
  MatXd v2 = s2d * b.at("saf.v2.w");
  MatXd v3 = s3d * b.at("saf.v3.w");
  for (int r = 0; r < 5; ++r) {
    // fused = g .* v2row0 + (1-g) .* v3
    for (int c = 0; c < 8; ++c) {
      const double g = out.gate(r, c);
      CHECK(out.fused_shared(r, c) ==
            doctest::Approx(g * v2(0, c) + (1 - g) * v3(r, c)).epsilon(1e-10));
    }
  }
}

TEST_CASE("gate saturation identities hold exactly") {
  auto b = saf_params(4, 3, 8, 2);
  Rng rng(62);
  MatXd s3d = random_mat(rng, 6, 4);
  MatXd s2d = random_mat(rng, 3, 4);

  ParamBundle<double> hi = b;
  hi.at("saf.gate.b").setConstant(1e4);  // sigmoid(1e4) == 1.0 in double
  hi.at("saf.gate.w").setZero();
  auto out_hi = saf_attention<double>(s3d, s2d, hi);
  MatXd ctx = out_hi.attention * (s2d * hi.at("saf.v2.w"));
  CHECK((out_hi.fused_shared - ctx).cwiseAbs().maxCoeff() == 0.0);

  ParamBundle<double> lo = b;
  lo.at("saf.gate.b").setConstant(-1e4);
  lo.at("saf.gate.w").setZero();
  auto out_lo = saf_attention<double>(s3d, s2d, lo);
  MatXd v3 = s3d * lo.at("saf.v3.w");
  CHECK((out_lo.fused_shared - v3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attention rows are stochastic and gate stays in range") {
  auto b = saf_params(6, 4, 12, 3);
  Rng rng(63);
  MatXd s3d = random_mat(rng, 20, 6, 2.0);
  MatXd s2d = random_mat(rng, 9, 6, 2.0);
  auto out = saf_attention<double>(s3d, s2d, b);
  for (int r = 0; r < 20; ++r)
    CHECK(std::abs(out.attention.row(r).sum() - 1.0) <= 1e-6);
  CHECK(out.gate.minCoeff() >= 0.0);
  CHECK(out.gate.maxCoeff() <= 1.0);
}

TEST_CASE("key permutation leaves fused output unchanged") {
  auto b = saf_params(5, 4, 10, 4);
  Rng rng(64);
  MatXd s3d = random_mat(rng, 7, 5);
  MatXd s2d = random_mat(rng, 6, 5);
  auto base = saf_attention<double>(s3d, s2d, b);
  std::vector<int> perm = {4, 0, 5, 2, 1, 3};
  MatXd s2p(6, 5);
  for (int i = 0; i < 6; ++i) s2p.row(i) = s2d.row(perm[static_cast<std::size_t>(i)]);
  auto permuted = saf_attention<double>(s3d, s2p, b);
  CHECK((base.fused_shared - permuted.fused_shared).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("camera-blind fallback: V3 only, zero gate, warning counted") {
  auto b = saf_params(4, 3, 8, 5);
  Rng rng(65);
  MatXd s3d = random_mat(rng, 5, 4);
  MatXd s2d(0, 4);
  WarnCounters warn;
  auto out = saf_attention<double>(s3d, s2d, b, FusionForm::Gated, &warn);
  CHECK(warn.camera_blind_batches == 1);
  CHECK((out.fused_shared - s3d * b.at("saf.v3.w")).cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.gate.cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.attention.cols() == 0);
}

TEST_CASE("scalar blend uses a per-point scalar alpha") {
  auto b = saf_params(4, 3, 8, 6);
  Rng rng(66);
  MatXd s3d = random_mat(rng, 5, 4);
  MatXd s2d = random_mat(rng, 3, 4);
  auto out = saf_attention<double>(s3d, s2d, b, FusionForm::ScalarBlend);
  MatXd ctx = out.attention * (s2d * b.at("saf.v2.w"));
  MatXd v3 = s3d * b.at("saf.v3.w");
  for (int r = 0; r < 5; ++r) {
    const double alpha = out.gate.row(r).mean();
    for (int c = 0; c < 8; ++c)
      CHECK(out.fused_shared(r, c) ==
            doctest::Approx(alpha * ctx(r, c) + (1 - alpha) * v3(r, c)).epsilon(1e-9));
  }
}

TEST_CASE("concat_fused is exact block concatenation") {
  Rng rng(67);
  FeatureMatrix<double> fused{random_mat(rng, 4, 6), Modality::M3D, FeatureRole::Shared};
  FeatureMatrix<double> r3d{random_mat(rng, 4, 3), Modality::M3D, FeatureRole::Private};
  auto out = concat_fused(fused, r3d);
  CHECK(out.role == FeatureRole::Fused);
  CHECK((out.values.leftCols(6) - fused.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.values.rightCols(3) - r3d.values).cwiseAbs().maxCoeff() == 0.0);

  FeatureMatrix<double> zero{MatXd::Zero(4, 3), Modality::M3D, FeatureRole::Private};
  auto out0 = concat_fused(fused, zero);
  CHECK(out0.values.rightCols(3).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out0.values.leftCols(6) - fused.values).cwiseAbs().maxCoeff() == 0.0);

  FeatureMatrix<double> bad{random_mat(rng, 5, 3), Modality::M3D, FeatureRole::Private};
  CHECK_THROWS_AS((void)concat_fused(fused, bad), ValidationError);
}

TEST_CASE("3D head: permutation equivariance, bias response, finiteness") {
  ParamBundle<double> b;
  init_seghead3d_params(b, 9, 7, 4, Rng(8).child("seghead3d"));
  Rng rng(68);
  MatXd x = random_mat(rng, 6, 9);
  MatXd y = segment_head_3d<double>(x, b);
  CHECK(y.rows() == 6);
  CHECK(y.cols() == 4);
  CHECK(y.allFinite());

  std::vector<int> perm = {2, 5, 0, 1, 4, 3};
  MatXd xp(6, 9);
  for (int i = 0; i < 6; ++i) xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
  MatXd yp = segment_head_3d<double>(xp, b);
  for (int i = 0; i < 6; ++i)
    CHECK((yp.row(i) - y.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <
          1e-12);

  MatXd zero_logits = segment_head_3d<double>(MatXd::Zero(2, 9), b);
  // zero input -> biases propagated through the layers
  MatXd h = b.at("seghead3d.fc1.b");
  MatXd g = h.unaryExpr([](double v) {
    return v * 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
  });
  MatXd expect = g * b.at("seghead3d.fc2.w") + b.at("seghead3d.fc2.b");
  CHECK((zero_logits.row(0) - expect.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("2D head: constant map, upsample identity, linearity") {
  ParamBundle<double> b;
  init_seghead2d_params(b, 5, 3, Rng(9).child("seghead2d"));
  MatXd constant_map = MatXd::Constant(4, 5, 0.3);
  MatXd logits = segment_head_2d<double>(constant_map, b);
  for (int r = 1; r < 4; ++r)
    CHECK((logits.row(r) - logits.row(0)).cwiseAbs().maxCoeff() < 1e-12);

  MatXd one_cell = logits.topRows(1);
  MatXd up2 = upsample_nearest<double>(one_cell, 8, 8, 8);
  CHECK(up2.rows() == 64);
  for (int i = 1; i < 64; ++i)
    CHECK((up2.row(i) - up2.row(0)).cwiseAbs().maxCoeff() == 0.0);

  Rng rng(69);
  MatXd f = random_mat(rng, 4, 5);
  MatXd l0 = segment_head_2d<double>(MatXd::Zero(4, 5), b);
  MatXd l1 = segment_head_2d<double>(f, b);
  MatXd l2 = segment_head_2d<double>(MatXd(2.0 * f), b);
  CHECK(((l2 - l0) - 2.0 * (l1 - l0)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("upsample rejects non-divisible sizes") {
  MatXd cells = MatXd::Zero(4, 2);
  CHECK_THROWS_AS((void)upsample_nearest<double>(cells, 6, 8, 8), ValidationError);
}

TEST_CASE("fd: gradients flow through the whole fusion block") {
  auto bundle = saf_params(4, 3, 8, 10);
  ParamBundle<double> head;
  init_seghead3d_params(head, 8 + 4, 6, 3, Rng(10).child("seghead3d"));
  for (const auto& it : head.items()) bundle.add(it.name, it.value);
  Rng rng(70);
  MatXd contract = random_mat(rng, 5, 3);
  auto build = [&](Tape<double>& t, const std::vector<Var<double>>& v) {
    TapeParams<double> p(t, bundle);
    SafVars<double> saf = saf_attention_t(t, p, v[0], v[1]);
    Var<double> fused = concat_fused_t(saf.fused_shared, v[2]);
    Var<double> logits = segment_head_3d_t(p, fused);
    return mean_all(cmul(logits, contract));
  };
  auto res = fd_check(build, {random_mat(rng, 5, 4), random_mat(rng, 3, 4),
                              random_mat(rng, 5, 4)});
  CHECK(res.max_rel <= 1e-4);
}
