// SPDX-License-Identifier: Apache-2.0
#include "spfuse/types.hpp"

#include <cmath>

namespace spfuse {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

bool all_finite(const MatXd& m) { return m.allFinite(); }

}  // namespace

void Calibration::validate() const {
  require(image_h > 0 && image_w > 0, "calibration.image_size: must be positive");
  require(intrinsics.allFinite(), "calibration.intrinsics: non-finite entry");
  require(fx() > 0.0 && fy() > 0.0, "calibration.intrinsics: focal lengths must be positive");
  require(intrinsics(2, 2) == 1.0 && intrinsics(2, 0) == 0.0 && intrinsics(2, 1) == 0.0,
          "calibration.intrinsics: last row must be [0 0 1]");
  require(intrinsics(1, 0) == 0.0 && intrinsics(0, 1) == 0.0,
          "calibration.intrinsics: skew is not supported");
  require(cx() >= 0.0 && cx() < image_w && cy() >= 0.0 && cy() < image_h,
          "calibration.intrinsics: principal point outside image");
  require(rotation.allFinite(), "calibration.rotation: non-finite entry");
  const Eigen::Matrix3d rtr = rotation.transpose() * rotation;
  require((rtr - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-8,
          "calibration.rotation: not orthonormal");
  require(rotation.determinant() > 0.0, "calibration.rotation: not a proper rotation");
  require(translation.allFinite(), "calibration.translation: non-finite entry");
}

void LabeledScene::validate(int n_classes) const {
  require(n_classes >= 2, "scene: n_classes must be >= 2");
  calibration.validate();
  const Eigen::Index n = points.rows();
  require(n >= 1, "scene.points: empty point cloud");
  require(points.allFinite(), "scene.points: non-finite coordinate");
  require(point_labels.size() == n, "scene.point_labels: size mismatch with points");
  for (Eigen::Index i = 0; i < n; ++i) {
    const int l = point_labels[i];
    require((l >= 0 && l < n_classes) || l == kIgnoreLabel,
            "scene.point_labels: label out of range at row " + std::to_string(i));
  }
  const Eigen::Index hw =
      static_cast<Eigen::Index>(calibration.image_h) * calibration.image_w;
  require(image.rows() == hw && image.cols() == 3,
          "scene.image: shape mismatch with calibration.image_size");
  require(all_finite(image), "scene.image: non-finite value");
  require(image.minCoeff() >= 0.0 && image.maxCoeff() <= 1.0,
          "scene.image: values outside [0, 1]");
  require(pixel_labels.size() == hw, "scene.pixel_labels: size mismatch with image");
  for (Eigen::Index i = 0; i < hw; ++i) {
    const int l = pixel_labels[i];
    require((l >= 0 && l < n_classes) || l == kIgnoreLabel,
            "scene.pixel_labels: label out of range at row " + std::to_string(i));
  }
  require(!scene_id.empty(), "scene.scene_id: empty");
  require(domain_tag == "source" || domain_tag == "target",
          "scene.domain_tag: must be 'source' or 'target'");
}

LossBundle LossBundle::compose(double seg3d, double seg2d, double xm,
                               double gram, double diff, const LossWeights& w) {
  LossBundle b;
  b.seg3d = seg3d;
  b.seg2d = seg2d;
  b.xm = xm;
  b.gram = gram;
  b.diff = diff;
  b.weights = w;
  b.total = seg3d + w.seg2d * seg2d + w.xm * xm + w.gram * gram + w.diff * diff;
  return b;
}

void accumulate_confusion(ConfusionMatrix& conf, const Labels& pred,
                          const Labels& gt, std::int64_t* n_ignored) {
  require(conf.rows() == conf.cols() && conf.rows() >= 2,
          "confusion: matrix must be C x C with C >= 2");
  require(pred.size() == gt.size(), "confusion: pred/gt size mismatch");
  const int c = static_cast<int>(conf.rows());
  for (Eigen::Index i = 0; i < gt.size(); ++i) {
    if (gt[i] == kIgnoreLabel) {
      if (n_ignored) ++*n_ignored;
      continue;
    }
    require(gt[i] >= 0 && gt[i] < c,
            "confusion: gt label out of range at row " + std::to_string(i));
    require(pred[i] >= 0 && pred[i] < c,
            "confusion: pred label out of range at row " + std::to_string(i));
    ++conf(gt[i], pred[i]);
  }
}

SegMetrics compute_metrics(const ConfusionMatrix& confusion) {
  require(confusion.rows() == confusion.cols() && confusion.rows() >= 2,
          "metrics: confusion must be C x C with C >= 2");
  require(confusion.minCoeff() >= 0, "metrics: negative confusion count");
  const int c = static_cast<int>(confusion.rows());
  SegMetrics m;
  m.confusion = confusion;
  m.per_class_iou = VecXd::Zero(c);
  m.class_valid = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(c, false);
  m.n_evaluated = confusion.sum();
  int n_valid = 0;
  double iou_sum = 0.0;
  for (int k = 0; k < c; ++k) {
    const std::int64_t tp = confusion(k, k);
    const std::int64_t fn = confusion.row(k).sum() - tp;
    const std::int64_t fp = confusion.col(k).sum() - tp;
    const std::int64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    m.per_class_iou[k] = static_cast<double>(tp) / static_cast<double>(denom);
    m.class_valid[k] = true;
    iou_sum += m.per_class_iou[k];
    ++n_valid;
  }
  m.miou = n_valid > 0 ? iou_sum / n_valid : 0.0;
  return m;
}

}  // namespace spfuse
