// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "spfuse/types.hpp"

namespace spfuse {

// Near-plane cutoff: camera-frame points with q_z <= kZMin never project.
inline constexpr double kZMin = 1e-3;

// Pinhole projection of sensor-frame points into pixel coordinates.
// Rounding is round-half-away-from-zero; points behind the near plane or
// outside the image are marked invalid with sentinel (-1, -1).
Correspondence project_points(const Points& points, const Calibration& calib);

// Flattened feature-cell index per point for a feature map downscaled from
// the correspondence resolution: cell = floor(v/scale_h) * fw + floor(u/scale_w).
// Invalid points get -1. Throws if any valid pixel falls outside the map.
std::vector<int> gather_cell_indices(const Correspondence& corr, int fh, int fw,
                                     double scale_h, double scale_w);

// Gathers per-point rows from a (fh*fw) x d feature map. Invalid points
// receive zero rows; the returned matrix is tagged modality M2D, role RAW.
template <class S>
std::pair<FeatureMatrix<S>, Eigen::Array<bool, Eigen::Dynamic, 1>>
gather_pixel_features(const MatX<S>& feature_map, int fh, int fw,
                      const Correspondence& corr, double scale_h, double scale_w) {
  if (feature_map.rows() != static_cast<Eigen::Index>(fh) * fw)
    throw ValidationError("gather_pixel_features: feature map rows != fh*fw");
  const std::vector<int> cells = gather_cell_indices(corr, fh, fw, scale_h, scale_w);
  FeatureMatrix<S> out;
  out.modality = Modality::M2D;
  out.role = FeatureRole::Raw;
  out.values = MatX<S>::Zero(corr.size(), feature_map.cols());
  for (Eigen::Index i = 0; i < corr.size(); ++i)
    if (cells[static_cast<std::size_t>(i)] >= 0)
      out.values.row(i) = feature_map.row(cells[static_cast<std::size_t>(i)]);
  return {std::move(out), corr.valid};
}

}  // namespace spfuse
