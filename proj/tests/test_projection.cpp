// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "spfuse/projection.hpp"
#include "spfuse/rng.hpp"

using namespace spfuse;

namespace {

Calibration cal_100() {
  Calibration c;
  c.intrinsics << 100, 0, 64, 0, 100, 48, 0, 0, 1;
  c.image_h = 96;
  c.image_w = 128;
  return c;
}

}  // namespace

TEST_CASE("principal point projection") {
  Points p(1, 3);
  p << 0, 0, 5;
  Correspondence corr = project_points(p, cal_100());
  REQUIRE(corr.valid[0]);
  CHECK(corr.pixel_uv(0, 0) == 64);
  CHECK(corr.pixel_uv(0, 1) == 48);
}

TEST_CASE("point behind the camera is invalid with sentinel") {
  Points p(1, 3);
  p << 0, 0, -2;
  Correspondence corr = project_points(p, cal_100());
  CHECK_FALSE(corr.valid[0]);
  CHECK(corr.pixel_uv(0, 0) == -1);
  CHECK(corr.pixel_uv(0, 1) == -1);
}

TEST_CASE("hand pinhole arithmetic oracle") {
  Points p(1, 3);
  p << 1, 0.5, 10;  // u = 100*0.1 + 64 = 74, v = 100*0.05 + 48 = 53
  Correspondence corr = project_points(p, cal_100());
  REQUIRE(corr.valid[0]);
  CHECK(corr.pixel_uv(0, 0) == 74);
  CHECK(corr.pixel_uv(0, 1) == 53);
}

TEST_CASE("extrinsics are applied before projection") {
  Calibration c = cal_100();
  // camera looking along sensor +x: x_cam = -y_s, y_cam = -z_s, z_cam = x_s
  c.rotation << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  c.translation << 0, 0, 0.5;
  Points p(1, 3);
  p << 10, 0, 0;  // q = (0, 0, 10.5)
  Correspondence corr = project_points(p, c);
  REQUIRE(corr.valid[0]);
  CHECK(corr.pixel_uv(0, 0) == 64);
  CHECK(corr.pixel_uv(0, 1) == 48);
}

TEST_CASE("projection is scale-invariant along camera rays") {
  Rng rng(31);
  Calibration c = cal_100();
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::Vector3d q(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.5, 20));
    Points base(1, 3);
    base.row(0) = q.transpose();
    Correspondence c0 = project_points(base, c);
    for (double alpha : {0.5, 2.0, 10.0}) {
      Points scaled(1, 3);
      scaled.row(0) = (alpha * q).transpose();
      Correspondence cs = project_points(scaled, c);
      CHECK(cs.valid[0] == c0.valid[0]);
      CHECK(cs.pixel_uv(0, 0) == c0.pixel_uv(0, 0));
      CHECK(cs.pixel_uv(0, 1) == c0.pixel_uv(0, 1));
    }
  }
}

TEST_CASE("valid correspondences are always in bounds") {
  Rng rng(32);
  Calibration c = cal_100();
  Points p(500, 3);
  for (int i = 0; i < 500; ++i)
    p.row(i) << rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-5, 30);
  Correspondence corr = project_points(p, c);
  for (int i = 0; i < 500; ++i) {
    if (corr.valid[i]) {
      CHECK(corr.pixel_uv(i, 0) >= 0);
      CHECK(corr.pixel_uv(i, 0) < c.image_w);
      CHECK(corr.pixel_uv(i, 1) >= 0);
      CHECK(corr.pixel_uv(i, 1) < c.image_h);
    } else {
      CHECK(corr.pixel_uv(i, 0) == -1);
      CHECK(corr.pixel_uv(i, 1) == -1);
    }
  }
}

TEST_CASE("gather at unit scale returns exact feature rows") {
  Correspondence corr;
  corr.pixel_uv.resize(2, 2);
  corr.pixel_uv << 3, 1, 0, 0;
  corr.valid.resize(2);
  corr.valid << true, true;
  MatXd fmap(2 * 4, 2);  // 2x4 map, d=2
  for (int i = 0; i < 8; ++i) fmap.row(i) << i, 10 * i;
  auto [fm, mask] = gather_pixel_features(fmap, 2, 4, corr, 1.0, 1.0);
  CHECK(fm.modality == Modality::M2D);
  CHECK(fm.role == FeatureRole::Raw);
  CHECK(fm.values(0, 0) == doctest::Approx(1 * 4 + 3));
  CHECK(fm.values(1, 0) == doctest::Approx(0));
  CHECK(mask[0]);
  CHECK(mask[1]);
}

TEST_CASE("index arithmetic oracle at scale 2") {
  Correspondence corr;
  corr.pixel_uv.resize(1, 2);
  corr.pixel_uv << 7, 3;  // -> cell (floor(3/2), floor(7/2)) = (1, 3)
  corr.valid.resize(1);
  corr.valid << true;
  MatXd fmap(4 * 8, 1);  // feature map 4x8 from an 8x16 image
  for (int i = 0; i < 32; ++i) fmap(i, 0) = i;
  auto [fm, mask] = gather_pixel_features(fmap, 4, 8, corr, 2.0, 2.0);
  CHECK(fm.values(0, 0) == doctest::Approx(1 * 8 + 3));
}

TEST_CASE("all-invalid gather is all zeros, all false") {
  Correspondence corr;
  corr.pixel_uv.setConstant(3, 2, -1);
  corr.valid.setConstant(3, false);
  MatXd fmap = MatXd::Ones(4, 5);
  auto [fm, mask] = gather_pixel_features(fmap, 2, 2, corr, 1.0, 1.0);
  CHECK(fm.values.cwiseAbs().maxCoeff() == 0.0);
  CHECK_FALSE(mask.any());
}

TEST_CASE("scale mapping outside the feature map throws") {
  Correspondence corr;
  corr.pixel_uv.resize(1, 2);
  corr.pixel_uv << 15, 0;
  corr.valid.resize(1);
  corr.valid << true;
  MatXd fmap = MatXd::Zero(4, 1);  // 2x2 map
  CHECK_THROWS_AS((void)gather_pixel_features(fmap, 2, 2, corr, 2.0, 2.0),
                  ValidationError);
  CHECK_THROWS_AS((void)gather_cell_indices(corr, 2, 2, 0.5, 2.0), ValidationError);
}

TEST_CASE("gather of a coordinate-encoding map recovers pixel coordinates") {
  Rng rng(33);
  Calibration c = cal_100();
  Points p(300, 3);
  for (int i = 0; i < 300; ++i)
    p.row(i) << rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.2, 15);
  Correspondence corr = project_points(p, c);
  MatXd fmap(c.image_h * c.image_w, 2);
  for (int v = 0; v < c.image_h; ++v)
    for (int u = 0; u < c.image_w; ++u) fmap.row(v * c.image_w + u) << u, v;
  auto [fm, mask] = gather_pixel_features(fmap, c.image_h, c.image_w, corr, 1.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    if (!corr.valid[i]) continue;
    CHECK(fm.values(i, 0) == doctest::Approx(corr.pixel_uv(i, 0)));
    CHECK(fm.values(i, 1) == doctest::Approx(corr.pixel_uv(i, 1)));
  }
}
