// SPDX-License-Identifier: Apache-2.0
#include "spfuse/projection.hpp"

#include <cmath>
#include <string>

namespace spfuse {

Correspondence project_points(const Points& points, const Calibration& calib) {
  calib.validate();
  const Eigen::Index n = points.rows();
  Correspondence corr;
  corr.pixel_uv.setConstant(n, 2, -1);
  corr.valid.setConstant(n, false);
  const double fx = calib.fx(), fy = calib.fy(), cx = calib.cx(), cy = calib.cy();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d q =
        calib.rotation * points.row(i).transpose() + calib.translation;
    if (!(q.z() > kZMin)) continue;
    const double u = fx * q.x() / q.z() + cx;
    const double v = fy * q.y() / q.z() + cy;
    const long long ui = std::llround(u);
    const long long vi = std::llround(v);
    if (ui < 0 || ui >= calib.image_w || vi < 0 || vi >= calib.image_h) continue;
    corr.pixel_uv(i, 0) = static_cast<int>(ui);
    corr.pixel_uv(i, 1) = static_cast<int>(vi);
    corr.valid[i] = true;
  }
  return corr;
}

std::vector<int> gather_cell_indices(const Correspondence& corr, int fh, int fw,
                                     double scale_h, double scale_w) {
  if (fh <= 0 || fw <= 0)
    throw ValidationError("gather_cell_indices: feature map dims must be positive");
  if (scale_h < 1.0 || scale_w < 1.0)
    throw ValidationError("gather_cell_indices: scale factors must be >= 1");
  std::vector<int> cells(static_cast<std::size_t>(corr.size()), -1);
  for (Eigen::Index i = 0; i < corr.size(); ++i) {
    if (!corr.valid[i]) continue;
    const int u = corr.pixel_uv(i, 0);
    const int v = corr.pixel_uv(i, 1);
    const int fu = static_cast<int>(std::floor(u / scale_w));
    const int fv = static_cast<int>(std::floor(v / scale_h));
    if (fu < 0 || fu >= fw || fv < 0 || fv >= fh)
      throw ValidationError("gather_cell_indices: pixel (" + std::to_string(u) +
                            ", " + std::to_string(v) +
                            ") maps outside the feature map");
    cells[static_cast<std::size_t>(i)] = fv * fw + fu;
  }
  return cells;
}

}  // namespace spfuse
