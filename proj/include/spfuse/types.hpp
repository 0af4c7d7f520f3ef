// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace spfuse {

// Label value excluded from every loss and metric.
inline constexpr int kIgnoreLabel = 255;

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
using MatXd = MatX<double>;
using VecXd = VecX<double>;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Labels = Eigen::VectorXi;
using ConfusionMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Pinhole camera with extrinsics mapping sensor frame to camera frame:
// q = rotation * p + translation, pixel = (fx*qx/qz + cx, fy*qy/qz + cy).
struct Calibration {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  int image_h = 0;
  int image_w = 0;

  double fx() const { return intrinsics(0, 0); }
  double fy() const { return intrinsics(1, 1); }
  double cx() const { return intrinsics(0, 2); }
  double cy() const { return intrinsics(1, 2); }

  // Throws ValidationError naming the offending field.
  void validate() const;
};

// One capture: a labeled point cloud plus a labeled RGB image.
// Pixels are stored row-major as an (H*W) x 3 matrix in [0, 1]; the pixel at
// row v, column u occupies matrix row v*W + u.
struct LabeledScene {
  Points points;             // N x 3, sensor frame, meters
  Labels point_labels;       // N, class id or kIgnoreLabel
  MatXd image;               // (H*W) x 3
  Labels pixel_labels;       // H*W, class id or kIgnoreLabel
  Calibration calibration;
  std::string scene_id;
  std::string domain_tag;    // "source" or "target"

  int n_points() const { return static_cast<int>(points.rows()); }
  void validate(int n_classes) const;
};

enum class Modality { M2D, M3D };
enum class FeatureRole { Raw, Shared, Private, Fused };

// Row-per-element feature block with provenance tags, so that fusion and loss
// code can reject mismatched operands instead of silently broadcasting.
template <class S>
struct FeatureMatrix {
  MatX<S> values;
  Modality modality = Modality::M3D;
  FeatureRole role = FeatureRole::Raw;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

// Mapping from 3D points to pixel coordinates. pixel_uv row i holds (u, v)
// for point i when valid[i], and (-1, -1) otherwise.
struct Correspondence {
  Eigen::Matrix<int, Eigen::Dynamic, 2> pixel_uv;
  Eigen::Array<bool, Eigen::Dynamic, 1> valid;

  Eigen::Index size() const { return valid.size(); }
  Eigen::Index n_valid() const {
    return std::count(valid.data(), valid.data() + valid.size(), true);
  }
};

struct LossWeights {
  double seg2d = 1.0;
  double xm = 1.0;
  double gram = 0.05;
  double diff = 0.05;
};

// Unweighted loss parts plus the weighted total. compose() is the single
// place the weighting formula lives.
struct LossBundle {
  double seg3d = 0.0;
  double seg2d = 0.0;
  double xm = 0.0;
  double gram = 0.0;
  double diff = 0.0;
  LossWeights weights;
  double total = 0.0;

  static LossBundle compose(double seg3d, double seg2d, double xm,
                            double gram, double diff, const LossWeights& w);
};

// Counters for degenerate-but-legal batch conditions.
struct WarnCounters {
  int camera_blind_batches = 0;
  int all_ignored_ce = 0;
  int empty_kl_pairs = 0;
  int empty_lovasz = 0;
};

struct SegMetrics {
  ConfusionMatrix confusion;       // C x C, rows = ground truth
  VecXd per_class_iou;             // NaN-free; invalid classes carry 0
  Eigen::Array<bool, Eigen::Dynamic, 1> class_valid;
  double miou = 0.0;               // mean IoU over valid classes
  std::int64_t n_evaluated = 0;    // labeled elements (ignore excluded)
  std::int64_t n_ignored = 0;
};

// Adds pred/gt pairs into conf, skipping gt == kIgnoreLabel. Out-of-range
// labels throw.
void accumulate_confusion(ConfusionMatrix& conf, const Labels& pred,
                          const Labels& gt, std::int64_t* n_ignored = nullptr);

// IoU_c = tp / (tp + fp + fn); classes with zero denominator are excluded
// from the mean. All-invalid input yields miou = 0.
SegMetrics compute_metrics(const ConfusionMatrix& confusion);

}  // namespace spfuse
