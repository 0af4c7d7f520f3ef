// SPDX-License-Identifier: Apache-2.0
#include "spfuse/harness.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace spfuse {

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ValidationError("config key " + key + ": expected a boolean, got '" + v + "'");
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key + ": expected an integer, got '" + v +
                          "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key + ": expected a number, got '" + v +
                          "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key +
                          ": expected a non-negative integer, got '" + v + "'");
  }
}

// Shortest representation that round-trips exactly.
std::string real_str(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> train_config_items(
    const TrainConfig& cfg) {
  const auto b = [](bool v) { return v ? std::string("1") : std::string("0"); };
  return {
      {"epochs", std::to_string(cfg.epochs)},
      {"lr", real_str(cfg.lr)},
      {"momentum", real_str(cfg.momentum)},
      {"weight_decay", real_str(cfg.weight_decay)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"precision", std::to_string(cfg.precision)},
      {"seed", std::to_string(cfg.seed)},
      {"lambda_seg2d", real_str(cfg.loss_weights.seg2d)},
      {"lambda_xm", real_str(cfg.loss_weights.xm)},
      {"lambda_gram", real_str(cfg.loss_weights.gram)},
      {"lambda_diff", real_str(cfg.loss_weights.diff)},
      {"augment_rotation", b(cfg.augment.rotation)},
      {"augment_flip", b(cfg.augment.flip)},
      {"augment_scale", b(cfg.augment.scale)},
      {"fusion_mode", to_string(cfg.model.fusion_mode)},
      {"query_direction", to_string(cfg.model.query_direction)},
      {"fusion_form", to_string(cfg.model.fusion_form)},
      {"kl_mode", to_string(cfg.model.kl_mode)},
      {"kl_swap", b(cfg.model.kl_swap)},
      {"n_classes", std::to_string(cfg.model.n_classes)},
      {"image_h", std::to_string(cfg.model.image_h)},
      {"image_w", std::to_string(cfg.model.image_w)},
      {"d_hidden", std::to_string(cfg.model.encoder.d_hidden)},
      {"n_blocks_3d", std::to_string(cfg.model.encoder.n_blocks_3d)},
      {"n_heads", std::to_string(cfg.model.encoder.n_heads)},
      {"voxel_size", real_str(cfg.model.encoder.voxel_size)},
      {"patch_size_2d", std::to_string(cfg.model.encoder.patch_size_2d)},
      {"freeze_2d", b(cfg.model.encoder.freeze_2d)},
      {"d_decomp", std::to_string(cfg.model.d_decomp)},
      {"d_attn", std::to_string(cfg.model.d_attn)},
      {"d_fused", std::to_string(cfg.model.d_fused)},
      {"seg_hidden", std::to_string(cfg.model.seg_hidden)},
  };
}

void train_config_set(TrainConfig& cfg, const std::string& key,
                      const std::string& value) {
  if (key == "epochs") cfg.epochs = parse_int(key, value);
  else if (key == "lr") cfg.lr = parse_real(key, value);
  else if (key == "momentum") cfg.momentum = parse_real(key, value);
  else if (key == "weight_decay") cfg.weight_decay = parse_real(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
  else if (key == "precision") cfg.precision = parse_int(key, value);
  else if (key == "seed") cfg.seed = parse_u64(key, value);
  else if (key == "lambda_seg2d") cfg.loss_weights.seg2d = parse_real(key, value);
  else if (key == "lambda_xm") cfg.loss_weights.xm = parse_real(key, value);
  else if (key == "lambda_gram") cfg.loss_weights.gram = parse_real(key, value);
  else if (key == "lambda_diff") cfg.loss_weights.diff = parse_real(key, value);
  else if (key == "augment_rotation") cfg.augment.rotation = parse_bool(key, value);
  else if (key == "augment_flip") cfg.augment.flip = parse_bool(key, value);
  else if (key == "augment_scale") cfg.augment.scale = parse_bool(key, value);
  else if (key == "fusion_mode") cfg.model.fusion_mode = fusion_mode_from_string(value);
  else if (key == "query_direction")
    cfg.model.query_direction = query_direction_from_string(value);
  else if (key == "fusion_form") cfg.model.fusion_form = fusion_form_from_string(value);
  else if (key == "kl_mode") cfg.model.kl_mode = kl_mode_from_string(value);
  else if (key == "kl_swap") cfg.model.kl_swap = parse_bool(key, value);
  else if (key == "n_classes") cfg.model.n_classes = parse_int(key, value);
  else if (key == "image_h") cfg.model.image_h = parse_int(key, value);
  else if (key == "image_w") cfg.model.image_w = parse_int(key, value);
  else if (key == "d_hidden") cfg.model.encoder.d_hidden = parse_int(key, value);
  else if (key == "n_blocks_3d") cfg.model.encoder.n_blocks_3d = parse_int(key, value);
  else if (key == "n_heads") cfg.model.encoder.n_heads = parse_int(key, value);
  else if (key == "voxel_size") cfg.model.encoder.voxel_size = parse_real(key, value);
  else if (key == "patch_size_2d")
    cfg.model.encoder.patch_size_2d = parse_int(key, value);
  else if (key == "freeze_2d") cfg.model.encoder.freeze_2d = parse_bool(key, value);
  else if (key == "d_decomp") cfg.model.d_decomp = parse_int(key, value);
  else if (key == "d_attn") cfg.model.d_attn = parse_int(key, value);
  else if (key == "d_fused") cfg.model.d_fused = parse_int(key, value);
  else if (key == "seg_hidden") cfg.model.seg_hidden = parse_int(key, value);
  else throw ValidationError("unknown config key: " + key);
}

LabeledScene make_gradcheck_scene(int n_classes) {
  if (n_classes < 2)
    throw ValidationError("gradcheck scene: n_classes must be >= 2");
  LabeledScene s;
  s.scene_id = "gradcheck";
  s.domain_tag = "source";
  s.points.resize(8, 3);
  s.points << -0.45, -0.30, 2.2,  //
      0.40, -0.15, 2.8,           //
      -0.20, 0.35, 3.1,           //
      0.10, 0.05, 2.0,            //
      0.45, 0.42, 3.6,            //
      -0.38, 0.10, 2.4,           //
      0.05, -0.42, 3.3,           //
      -0.05, 0.22, 2.6;
  s.point_labels.resize(8);
  for (int i = 0; i < 8; ++i) s.point_labels[i] = i % n_classes;
  const int h = 4, w = 4;
  s.image.resize(h * w, 3);
  s.pixel_labels.resize(h * w);
  for (int i = 0; i < h * w; ++i) {
    const int x = i % w, y = i / w;
    s.image(i, 0) = 0.15 + 0.18 * x;
    s.image(i, 1) = 0.20 + 0.16 * y;
    s.image(i, 2) = 0.55 - 0.07 * x + 0.05 * y;
    s.pixel_labels[i] = (i * 5 + 3) % n_classes;
  }
  s.pixel_labels[5] = kIgnoreLabel;
  s.pixel_labels[10] = kIgnoreLabel;
  s.calibration.intrinsics(0, 0) = 4.0;
  s.calibration.intrinsics(1, 1) = 4.0;
  s.calibration.intrinsics(0, 2) = 2.0;
  s.calibration.intrinsics(1, 2) = 2.0;
  s.calibration.image_h = h;
  s.calibration.image_w = w;
  return s;
}

void write_curves_csv(const std::vector<EpochStats>& curves,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "epoch,lr,seg3d,seg2d,xm,gram,diff,total\n";
  out << std::setprecision(12);
  for (const auto& e : curves)
    out << e.epoch << ',' << e.lr << ',' << e.seg3d << ',' << e.seg2d << ','
        << e.xm << ',' << e.gram << ',' << e.diff << ',' << e.total << '\n';
  if (!out.good()) throw IoError("write failed: " + path.string());
}

void write_train_report_json(const TrainReport& report, const TrainConfig& cfg,
                             const std::filesystem::path& path) {
  nlohmann::json j;
  j["epochs_completed"] = report.epochs_completed;
  j["diverged"] = report.diverged;
  j["diverged_epoch"] = report.diverged_epoch;
  j["wall_seconds"] = report.wall_seconds;
  j["checkpoint"] = report.checkpoint_path;
  j["frozen_digest_before"] = report.frozen_digest_before;
  j["frozen_digest_after"] = report.frozen_digest_after;
  nlohmann::json val;
  val["miou"] = report.val_metrics.miou;
  val["n_evaluated"] = report.val_metrics.n_evaluated;
  val["n_ignored"] = report.val_metrics.n_ignored;
  val["per_class_iou"] = std::vector<double>(
      report.val_metrics.per_class_iou.data(),
      report.val_metrics.per_class_iou.data() + report.val_metrics.per_class_iou.size());
  j["val"] = val;
  nlohmann::json warn;
  warn["camera_blind_batches"] = report.warnings.camera_blind_batches;
  warn["all_ignored_ce"] = report.warnings.all_ignored_ce;
  warn["empty_kl_pairs"] = report.warnings.empty_kl_pairs;
  warn["empty_lovasz"] = report.warnings.empty_lovasz;
  j["warnings"] = warn;
  nlohmann::json conf;
  for (const auto& [k, v] : train_config_items(cfg)) conf[k] = v;
  j["config"] = conf;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out.good()) throw IoError("write failed: " + path.string());
}

double sign_test_p(int n, int k) {
  if (n <= 0) return 1.0;
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  double tail = 0.0;
  for (int i = k; i <= n; ++i) {
    double c = 1.0;
    for (int j = 0; j < i; ++j) c = c * (n - j) / (j + 1);
    tail += c;
  }
  return tail / std::pow(2.0, n);
}

void write_ablation_csv(const AblationResult& result,
                        const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "name,mean_miou,std_miou,n_diverged,wins_vs_first,sign_p_vs_first";
  for (std::size_t k = 0; k < result.seeds.size(); ++k)
    out << ",miou_seed" << k << ",diverged_seed" << k;
  out << '\n';
  out << std::setprecision(12);
  for (const auto& row : result.rows) {
    out << row.name << ',' << row.mean_miou << ',' << row.std_miou << ','
        << row.n_diverged << ',' << row.wins_vs_first << ','
        << row.sign_p_vs_first;
    for (std::size_t k = 0; k < row.mious.size(); ++k)
      out << ',' << row.mious[k] << ',' << row.diverged[k];
    out << '\n';
  }
  if (!out.good()) throw IoError("write failed: " + path.string());
}

}  // namespace spfuse
