// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "spfuse/synthdata.hpp"
#include "test_util.hpp"

using namespace spfuse;

namespace {

SceneConfig small_config(std::uint64_t seed,
                         DomainStyle style = DomainStyle::Source) {
  SceneConfig cfg;
  cfg.n_points = 1024;
  cfg.image_h = 48;
  cfg.image_w = 64;
  cfg.seed = seed;
  cfg.domain_style = style;
  return cfg;
}

double label_agreement(const LabeledScene& s) {
  Correspondence corr = project_points(s.points, s.calibration);
  std::int64_t agree = 0, total = 0;
  for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
    if (!corr.valid[i]) continue;
    ++total;
    const int cell = corr.pixel_uv(i, 1) * s.calibration.image_w +
                     corr.pixel_uv(i, 0);
    if (s.pixel_labels[cell] == s.point_labels[i]) ++agree;
  }
  REQUIRE(total > 0);
  return static_cast<double>(agree) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("same seed gives a bit-identical scene") {
  const SceneConfig cfg = small_config(7);
  LabeledScene a = generate_scene(cfg);
  LabeledScene b = generate_scene(cfg);
  CHECK(a.points == b.points);
  CHECK(a.point_labels == b.point_labels);
  CHECK(a.image == b.image);
  CHECK(a.pixel_labels == b.pixel_labels);
  CHECK(a.calibration.rotation == b.calibration.rotation);
  CHECK(a.calibration.translation == b.calibration.translation);
  CHECK(a.scene_id == b.scene_id);

  LabeledScene c = generate_scene(small_config(8));
  CHECK(a.points != c.points);
}

TEST_CASE("every scene passes its own invariants and the config's class count") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    LabeledScene s = generate_scene(small_config(seed));
    s.validate(6);
    CHECK(s.n_points() >= 1);
    CHECK(s.image.minCoeff() >= 0.0);
    CHECK(s.image.maxCoeff() <= 1.0);
  }
}

TEST_CASE("at least half the points project into the frustum across seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    LabeledScene s = generate_scene(small_config(seed));
    Correspondence corr = project_points(s.points, s.calibration);
    CHECK(corr.n_valid() * 2 >= s.points.rows());
  }
}

TEST_CASE("point labels agree with pixel labels at projected pixels") {
  double worst = 1.0;
  for (std::uint64_t seed : {11ull, 12ull, 13ull, 14ull, 15ull}) {
    SceneConfig cfg;  // full-size default scene
    cfg.seed = seed;
    const double frac = label_agreement(generate_scene(cfg));
    worst = std::min(worst, frac);
  }
  CHECK(worst >= 0.95);
}

TEST_CASE("projected points never land on unlabeled pixels") {
  LabeledScene s = generate_scene(small_config(21));
  Correspondence corr = project_points(s.points, s.calibration);
  for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
    if (!corr.valid[i]) continue;
    const int cell = corr.pixel_uv(i, 1) * s.calibration.image_w +
                     corr.pixel_uv(i, 0);
    CHECK(s.pixel_labels[cell] != kIgnoreLabel);
  }
}

TEST_CASE("target style: dropout, dimmer image, same determinism") {
  const SceneConfig src = small_config(31, DomainStyle::Source);
  const SceneConfig tgt = small_config(31, DomainStyle::Target);
  LabeledScene a = generate_scene(tgt);
  LabeledScene b = generate_scene(tgt);
  CHECK(a.points == b.points);
  CHECK(a.image == b.image);
  CHECK(a.domain_tag == "target");

  // ~15% dropout, binomial bounds over 1024 points
  LabeledScene s = generate_scene(src);
  CHECK(s.domain_tag == "source");
  CHECK(a.n_points() < s.n_points());
  CHECK(a.n_points() > static_cast<int>(0.75 * s.n_points()));
  CHECK(a.n_points() < static_cast<int>(0.95 * s.n_points()));
}

TEST_CASE("mean brightness of target population is shifted by the illumination factor") {
  double mean_src = 0.0, mean_tgt = 0.0;
  const int n = 8;
  for (int i = 0; i < n; ++i) {
    mean_src += generate_scene(small_config(100 + i, DomainStyle::Source)).image.mean();
    mean_tgt += generate_scene(small_config(100 + i, DomainStyle::Target)).image.mean();
  }
  mean_src /= n;
  mean_tgt /= n;
  const double ratio = mean_tgt / mean_src;
  CHECK(ratio > 0.55);
  CHECK(ratio < 0.75);
}

TEST_CASE("dataset: stable ids, class presence, manifest round-trip") {
  SceneConfig cfg = small_config(17);
  Dataset ds = generate_dataset(10, cfg);
  REQUIRE(ds.scenes.size() == 10);
  CHECK(ds.n_classes == 6);
  CHECK(ds.class_names.size() == 6);
  CHECK(ds.class_names[0] == "ground");
  CHECK(ds.class_names[5] == "pedestrian");

  Dataset again = generate_dataset(10, cfg);
  for (std::size_t i = 0; i < 10; ++i)
    CHECK(ds.scenes[i].scene_id == again.scenes[i].scene_id);

  // each class present in >= 80% of scenes (here: all of them)
  std::vector<int> presence(6, 0);
  for (const auto& s : ds.scenes) {
    std::vector<bool> seen(6, false);
    for (Eigen::Index i = 0; i < s.point_labels.size(); ++i)
      seen[static_cast<std::size_t>(s.point_labels[i])] = true;
    for (int c = 0; c < 6; ++c) presence[static_cast<std::size_t>(c)] += seen[c];
  }
  for (int c = 0; c < 6; ++c) CHECK(presence[static_cast<std::size_t>(c)] * 5 >= 10 * 4);

  const auto dir = std::filesystem::temp_directory_path() / "spfuse_test_synthds";
  std::filesystem::remove_all(dir);
  save_dataset(ds, dir);
  Dataset back = load_dataset(dir);
  CHECK(back.scenes.size() == 10);
  CHECK(back.scenes[3].points == ds.scenes[3].points);
}

TEST_CASE("class presence holds on a denser draw") {
  SceneConfig cfg = small_config(900);
  cfg.n_points = 512;
  Dataset ds = generate_dataset(40, cfg);
  std::vector<int> presence(6, 0);
  for (const auto& s : ds.scenes) {
    std::vector<bool> seen(6, false);
    for (Eigen::Index i = 0; i < s.point_labels.size(); ++i)
      seen[static_cast<std::size_t>(s.point_labels[i])] = true;
    for (int c = 0; c < 6; ++c) presence[static_cast<std::size_t>(c)] += seen[c];
  }
  for (int c = 0; c < 6; ++c)
    CHECK(presence[static_cast<std::size_t>(c)] * 5 >= 40 * 4);
}

TEST_CASE("config validation rejects each bad field") {
  SceneConfig good = small_config(1);
  CHECK_NOTHROW(good.validate());

  SceneConfig c = good;
  c.n_points = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = good;
  c.n_classes = 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = good;
  c.n_classes = 7;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = good;
  c.image_h = 50;  // not divisible by 8
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = good;
  c.objects_min = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = good;
  c.objects_max = c.objects_min - 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = good;
  c.noise_sigma = -0.1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = good;
  c.patch_divisor = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  CHECK(domain_style_from_string("source") == DomainStyle::Source);
  CHECK(domain_style_from_string("target") == DomainStyle::Target);
  CHECK_THROWS_AS((void)domain_style_from_string("夜"), ValidationError);
  CHECK_THROWS_AS((void)generate_dataset(-1, good), ValidationError);
}

TEST_CASE("reduced class vocabulary still generates valid scenes") {
  SceneConfig cfg = small_config(55);
  cfg.n_classes = 3;
  cfg.objects_min = 3;
  cfg.objects_max = 5;
  LabeledScene s = generate_scene(cfg);
  s.validate(3);
  CHECK(s.point_labels.maxCoeff() <= 2);
  Dataset ds = generate_dataset(5, cfg);
  CHECK(ds.n_classes == 3);
  CHECK(ds.class_names == std::vector<std::string>{"ground", "building", "vehicle"});
}
