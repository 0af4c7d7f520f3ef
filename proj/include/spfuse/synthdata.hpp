// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "spfuse/dataio.hpp"
#include "spfuse/projection.hpp"

namespace spfuse {

enum class DomainStyle { Source, Target };

std::string to_string(DomainStyle style);
DomainStyle domain_style_from_string(const std::string& s);

// Generator knobs. Classes are a fixed vocabulary prefix:
// 0 ground, 1 building, 2 vehicle, 3 pole, 4 vegetation, 5 pedestrian;
// n_classes selects how many of these exist in the scene.
struct SceneConfig {
  int n_points = 4096;
  int image_h = 96;
  int image_w = 128;
  int n_classes = 6;
  int objects_min = 5;
  int objects_max = 8;
  double noise_sigma = 0.02;
  int patch_divisor = 8;  // image sides must be divisible by the 2D patch size
  DomainStyle domain_style = DomainStyle::Source;
  std::uint64_t seed = 0;

  void validate() const;
};

const std::vector<std::string>& default_class_names();

// One paired LiDAR-camera capture: ground plane plus sampled primitives
// (boxes, cylinders, ellipsoid clusters), point labels from the generating
// primitive, image and pixel labels from a z-buffered point splat of densely
// sampled surfaces. Deterministic in config.seed. The camera pose is
// resampled until at least half the points project into the frustum; after
// 100 failed attempts a ValidationError is thrown.
LabeledScene generate_scene(const SceneConfig& config);

// Scenes seeded config.seed + index. Guarantees every class appears in at
// least 80% of the scenes or throws.
Dataset generate_dataset(int n_scenes, const SceneConfig& config);

}  // namespace spfuse
