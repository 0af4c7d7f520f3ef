// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spfuse/dataio.hpp"
#include "spfuse/model.hpp"

namespace spfuse {

struct AugmentConfig {
  bool rotation = true;
  bool flip = true;
  bool scale = true;
};

struct TrainConfig {
  ModelConfig model;
  int epochs = 40;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 4;
  LossWeights loss_weights;
  AugmentConfig augment;
  int precision = 32;  // 32 for training, 64 for verification runs
  std::uint64_t seed = 0;

  void validate() const {
    model.validate();
    if (!(lr > 0.0)) throw ValidationError("train config: lr must be > 0");
    if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0)
      throw ValidationError("train config: momentum must be in [0, 1)");
    if (weight_decay < 0.0)
      throw ValidationError("train config: weight_decay must be >= 0");
    if (precision != 32 && precision != 64)
      throw ValidationError("train config: precision must be 32 or 64");
  }
};

// Flat key=value view of TrainConfig: the single source of truth for config
// files, flag overrides and --help. Unknown keys are a hard error.
std::vector<std::pair<std::string, std::string>> train_config_items(
    const TrainConfig& cfg);
void train_config_set(TrainConfig& cfg, const std::string& key,
                      const std::string& value);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double seg3d = 0.0, seg2d = 0.0, xm = 0.0, gram = 0.0, diff = 0.0, total = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> curves;
  std::string checkpoint_path;
  double wall_seconds = 0.0;
  bool diverged = false;
  int diverged_epoch = -1;
  int epochs_completed = 0;
  std::uint64_t frozen_digest_before = 0;
  std::uint64_t frozen_digest_after = 0;
  SegMetrics val_metrics;
  WarnCounters warnings;
};

// Test and progress instrumentation. tamper_total may replace a scene's total
// loss before the finiteness check (divergence-path testing).
struct TrainHooks {
  std::function<double(int epoch, int scene_index, double total)> tamper_total;
  std::function<void(const EpochStats&)> on_epoch;
};

// Annealed from lr0 at epoch 0 to exactly 0 at the final epoch. A single
// configured epoch keeps the initial rate (both endpoints coincide).
inline double cosine_lr(double lr0, int epoch, int total_epochs) {
  if (epoch < 0 || epoch >= total_epochs)
    throw ValidationError("cosine_lr: epoch out of range");
  if (total_epochs <= 1) return lr0;
  const double t = static_cast<double>(epoch) / (total_epochs - 1);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// Rotation about the vertical axis, mirror flip, uniform scale in
// [0.95, 1.05]. All three values are always drawn so the stream stays aligned
// across configurations that toggle individual augmentations.
inline Points augment_points(const Points& pts, const AugmentConfig& a, Rng& rng) {
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const bool do_flip = rng.uniform() < 0.5;
  const double s = rng.uniform(0.95, 1.05);
  const double c = std::cos(theta), sn = std::sin(theta);
  Points out = pts;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    double x = pts(i, 0), y = pts(i, 1), z = pts(i, 2);
    if (a.rotation) {
      const double xr = c * x - sn * y, yr = sn * x + c * y;
      x = xr;
      y = yr;
    }
    if (a.flip && do_flip) x = -x;
    if (a.scale) {
      x *= s;
      y *= s;
      z *= s;
    }
    out(i, 0) = x;
    out(i, 1) = y;
    out(i, 2) = z;
  }
  return out;
}

// Deterministic micro-scene for gradient verification: 8 points, 4x4 image.
LabeledScene make_gradcheck_scene(int n_classes);

void write_curves_csv(const std::vector<EpochStats>& curves,
                      const std::filesystem::path& path);
void write_train_report_json(const TrainReport& report, const TrainConfig& cfg,
                             const std::filesystem::path& path);

// One-sided sign-test tail: P(X >= k) for X ~ Binomial(n, 1/2).
double sign_test_p(int n, int k);

namespace detail {

inline void check_class_counts(const ModelConfig& cfg, const Dataset& ds,
                               const char* what) {
  if (ds.n_classes != cfg.n_classes)
    throw ValidationError(std::string(what) +
                          ": dataset class count does not match the model");
}

template <class S>
Checkpoint<S> make_checkpoint(const ModelConfig& mc, std::int64_t epochs_completed,
                              std::uint64_t digest, const ParamBundle<S>& params,
                              const ParamBundle<S>& momentum) {
  Checkpoint<S> ck;
  ck.epoch = epochs_completed;
  ck.frozen_digest = digest;
  ck.meta = model_config_to_meta(mc);
  ck.params = params;
  ck.momentum = momentum;
  return ck;
}

}  // namespace detail

// Single confusion matrix over every scene; argmax predictions, no test-time
// augmentation.
template <class S>
SegMetrics evaluate_params(const ModelConfig& cfg, const ParamBundle<S>& params,
                           const Dataset& dataset) {
  cfg.validate();
  dataset.validate();
  detail::check_class_counts(cfg, dataset, "evaluate");
  ConfusionMatrix conf = ConfusionMatrix::Zero(cfg.n_classes, cfg.n_classes);
  std::int64_t ignored = 0;
  for (const auto& scene : dataset.scenes) {
    const Labels pred = predict_scene(cfg, params, scene);
    accumulate_confusion(conf, pred, scene.point_labels, &ignored);
  }
  SegMetrics m = compute_metrics(conf);
  m.n_ignored = ignored;
  return m;
}

template <class S>
TrainReport train_impl(const TrainConfig& cfg, const Dataset& train_set,
                       const Dataset& val_set, const std::filesystem::path& out_dir,
                       const TrainHooks& hooks) {
  const auto wall_start = std::chrono::steady_clock::now();
  cfg.validate();
  train_set.validate();
  val_set.validate();
  ModelConfig mc = cfg.model;
  mc.seed = cfg.seed;
  detail::check_class_counts(mc, train_set, "train");
  detail::check_class_counts(mc, val_set, "train (val split)");
  std::filesystem::create_directories(out_dir);

  ParamBundle<S> params = init_model_params<S>(mc);
  ParamBundle<S> momentum = params.zeros_like();
  const std::vector<std::string> frozen = frozen_groups(mc);

  TrainReport report;
  report.frozen_digest_before = group_digest(params, "enc2d");
  const std::filesystem::path ckpt_path = out_dir / "checkpoint.bin";
  report.checkpoint_path = ckpt_path.string();

  // Class weights from the training split only.
  std::vector<Labels> pts_labels, pix_labels;
  for (const auto& sc : train_set.scenes) {
    pts_labels.push_back(sc.point_labels);
    pix_labels.push_back(sc.pixel_labels);
  }
  const VecXd w3d = class_weights_inv_sqrt(pts_labels, mc.n_classes);
  const VecXd w2d = class_weights_inv_sqrt(pix_labels, mc.n_classes);

  // The frozen 2D backbone sees each image identically every epoch.
  std::vector<MatX<S>> cache;
  if (mc.encoder.freeze_2d) {
    cache.reserve(train_set.scenes.size());
    for (const auto& sc : train_set.scenes)
      cache.push_back(frozen_2d_forward(mc, params, sc));
  }

  // Last finite state, kept for divergence recovery.
  ParamBundle<S> finite_params = params;
  save_checkpoint(detail::make_checkpoint(mc, 0, report.frozen_digest_before,
                                          params, momentum),
                  ckpt_path);

  Rng root(cfg.seed);
  Rng shuffle_root = root.child("shuffle");
  Rng augment_root = root.child("augment");
  const int n_scenes = static_cast<int>(train_set.scenes.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_e = cosine_lr(cfg.lr, epoch, cfg.epochs);
    Rng ep_shuffle = shuffle_root.child(static_cast<std::uint64_t>(epoch));
    Rng ep_augment = augment_root.child(static_cast<std::uint64_t>(epoch));
    std::vector<int> order(n_scenes);
    for (int i = 0; i < n_scenes; ++i) order[i] = i;
    for (int i = n_scenes - 1; i > 0; --i)
      std::swap(order[i], order[ep_shuffle.uniform_int(0, i)]);

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr_e;
    try {
      for (int start = 0; start < n_scenes; start += cfg.batch_size) {
        const int n_batch = std::min(cfg.batch_size, n_scenes - start);
        ParamBundle<S> grad_sum = params.zeros_like();
        for (int b = 0; b < n_batch; ++b) {
          const int si = order[start + b];
          const LabeledScene& scene = train_set.scenes[si];
          Rng aug_rng = ep_augment.child(static_cast<std::uint64_t>(si));
          const Points aug = augment_points(scene.points, cfg.augment, aug_rng);
          Tape<S> t;
          TapeParams<S> p(t, params, frozen);
          std::optional<MatX<S>> frozen_raw;
          if (mc.encoder.freeze_2d) frozen_raw = cache[static_cast<std::size_t>(si)];
          SceneForward<S> f = forward_scene_t(t, p, mc, scene, aug, frozen_raw);
          SceneLossVars<S> l =
              scene_losses_t(t, mc, f, scene, w3d, w2d, &report.warnings);
          LossBundle bundle = total_loss(
              static_cast<double>(l.seg3d.value()(0, 0)),
              static_cast<double>(l.seg2d.value()(0, 0)),
              static_cast<double>(l.xm.value()(0, 0)),
              static_cast<double>(l.gram.value()(0, 0)),
              static_cast<double>(l.diff.value()(0, 0)), cfg.loss_weights);
          if (hooks.tamper_total) {
            bundle.total = hooks.tamper_total(epoch, si, bundle.total);
            if (!std::isfinite(bundle.total))
              throw DivergenceError("total_loss: non-finite term total");
          }
          stats.seg3d += bundle.seg3d;
          stats.seg2d += bundle.seg2d;
          stats.xm += bundle.xm;
          stats.gram += bundle.gram;
          stats.diff += bundle.diff;
          stats.total += bundle.total;
          Var<S> total_var = total_loss_t(l.seg3d, l.seg2d, l.xm, l.gram, l.diff,
                                          cfg.loss_weights);
          t.backward(total_var.id);
          ParamBundle<S> g = p.grads(t, params);
          for (const auto& it : g.items()) grad_sum.at(it.name) += it.value;
        }
        const S inv_batch = S(1) / static_cast<S>(n_batch);
        for (auto& it : params.items()) {
          if (std::find(frozen.begin(), frozen.end(),
                        ParamBundle<S>::group_of(it.name)) != frozen.end())
            continue;
          MatX<S> g = grad_sum.at(it.name) * inv_batch +
                      static_cast<S>(cfg.weight_decay) * it.value;
          MatX<S>& v = momentum.at(it.name);
          v = static_cast<S>(cfg.momentum) * v + g;
          it.value -= static_cast<S>(lr_e) * v;
        }
      }
    } catch (const DivergenceError&) {
      report.diverged = true;
      report.diverged_epoch = epoch;
      break;
    }
    stats.seg3d /= n_scenes;
    stats.seg2d /= n_scenes;
    stats.xm /= n_scenes;
    stats.gram /= n_scenes;
    stats.diff /= n_scenes;
    stats.total /= n_scenes;
    report.curves.push_back(stats);
    report.epochs_completed = epoch + 1;
    finite_params = params;
    save_checkpoint(detail::make_checkpoint(mc, epoch + 1,
                                            report.frozen_digest_before, params,
                                            momentum),
                    ckpt_path);
    if (hooks.on_epoch) hooks.on_epoch(stats);
  }

  report.frozen_digest_after = group_digest(params, "enc2d");
  report.val_metrics =
      evaluate_params<S>(mc, report.diverged ? finite_params : params, val_set);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start)
          .count();
  write_curves_csv(report.curves, out_dir / "curves.csv");
  write_train_report_json(report, cfg, out_dir / "report.json");
  return report;
}

inline TrainReport train(const TrainConfig& cfg, const Dataset& train_set,
                         const Dataset& val_set,
                         const std::filesystem::path& out_dir,
                         const TrainHooks& hooks = {}) {
  cfg.validate();
  return cfg.precision == 64
             ? train_impl<double>(cfg, train_set, val_set, out_dir, hooks)
             : train_impl<float>(cfg, train_set, val_set, out_dir, hooks);
}

// Scalar width recorded in a checkpoint header, as a precision value (32/64).
inline int checkpoint_precision(const std::filesystem::path& path) {
  detail::ByteReader r(path);
  if (r.u32() != detail::kCheckpointMagic)
    throw IoError("not a checkpoint file: " + r.name());
  if (r.u32() != detail::kFormatVersion)
    throw IoError("unsupported checkpoint version: " + r.name());
  const std::uint32_t width = r.u32();
  if (width != 4 && width != 8)
    throw IoError("unsupported checkpoint scalar width: " + r.name());
  return width == 4 ? 32 : 64;
}

inline SegMetrics evaluate(const std::filesystem::path& checkpoint_path,
                           const Dataset& dataset) {
  if (checkpoint_precision(checkpoint_path) == 64) {
    const Checkpoint<double> ck = load_checkpoint<double>(checkpoint_path);
    return evaluate_params<double>(model_config_from_meta(ck.meta), ck.params,
                                   dataset);
  }
  const Checkpoint<float> ck = load_checkpoint<float>(checkpoint_path);
  return evaluate_params<float>(model_config_from_meta(ck.meta), ck.params, dataset);
}

struct DomainShiftResult {
  SegMetrics source;
  SegMetrics target;
  double drop = 0.0;
};

inline DomainShiftResult domain_shift_eval(const std::filesystem::path& checkpoint_path,
                                           const Dataset& source_set,
                                           const Dataset& target_set) {
  DomainShiftResult r;
  r.source = evaluate(checkpoint_path, source_set);
  r.target = evaluate(checkpoint_path, target_set);
  r.drop = r.source.miou - r.target.miou;
  return r;
}

struct AblationRow {
  std::string name;
  TrainConfig config;
};

struct AblationRowResult {
  std::string name;
  std::vector<double> mious;      // one per seed, shared seed order
  std::vector<int> diverged;      // 0/1 per seed
  double mean_miou = 0.0;
  double std_miou = 0.0;
  int n_diverged = 0;
  int wins_vs_first = 0;   // seeds where this row beats row 0 strictly
  double sign_p_vs_first = 1.0;
};

struct AblationResult {
  std::vector<AblationRowResult> rows;
  std::vector<std::uint64_t> seeds;
  std::string csv_path;
};

void write_ablation_csv(const AblationResult& result,
                        const std::filesystem::path& path);

inline AblationResult ablate(const std::vector<AblationRow>& grid, int n_seeds,
                             const Dataset& train_set, const Dataset& val_set,
                             const std::filesystem::path& out_dir,
                             const TrainHooks& hooks = {}) {
  if (grid.size() < 2)
    throw ValidationError("ablate: need at least two configurations");
  if (n_seeds < 1) throw ValidationError("ablate: n_seeds must be >= 1");
  for (const auto& row : grid) {
    if (row.name.empty()) throw ValidationError("ablate: row name must be nonempty");
    for (char c : row.name)
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
        throw ValidationError("ablate: row name must be [A-Za-z0-9_-]: " + row.name);
  }
  AblationResult result;
  for (int k = 0; k < n_seeds; ++k)
    result.seeds.push_back(grid.front().config.seed + static_cast<std::uint64_t>(k));
  for (const auto& row : grid) {
    AblationRowResult rr;
    rr.name = row.name;
    for (int k = 0; k < n_seeds; ++k) {
      TrainConfig run_cfg = row.config;
      run_cfg.seed = result.seeds[static_cast<std::size_t>(k)];
      const auto run_dir = out_dir / row.name / ("seed" + std::to_string(k));
      TrainReport rep = train(run_cfg, train_set, val_set, run_dir, hooks);
      rr.mious.push_back(rep.val_metrics.miou);
      rr.diverged.push_back(rep.diverged ? 1 : 0);
      rr.n_diverged += rep.diverged ? 1 : 0;
    }
    double mean = 0.0;
    for (double m : rr.mious) mean += m;
    mean /= n_seeds;
    double var = 0.0;
    for (double m : rr.mious) var += (m - mean) * (m - mean);
    rr.mean_miou = mean;
    rr.std_miou = n_seeds > 1 ? std::sqrt(var / (n_seeds - 1)) : 0.0;
    result.rows.push_back(std::move(rr));
  }
  for (std::size_t r = 1; r < result.rows.size(); ++r) {
    int wins = 0, ties = 0;
    for (int k = 0; k < n_seeds; ++k) {
      const double a = result.rows[r].mious[static_cast<std::size_t>(k)];
      const double b = result.rows[0].mious[static_cast<std::size_t>(k)];
      if (a > b) ++wins;
      if (a == b) ++ties;
    }
    result.rows[r].wins_vs_first = wins;
    result.rows[r].sign_p_vs_first = sign_test_p(n_seeds - ties, wins);
  }
  const auto csv = out_dir / "ablation.csv";
  write_ablation_csv(result, csv);
  result.csv_path = csv.string();
  return result;
}

struct GradcheckRow {
  std::string group;
  std::string term;
  double max_rel = 0.0;
  bool no_gradient = false;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  bool passed = true;
  double worst = 0.0;
  std::string worst_group, worst_term;
};

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckFail = 1e-3;
inline constexpr const char* kGradcheckTerms[] = {"ce",   "lovasz", "xm",
                                                  "gram", "diff",   "total"};

// Central finite differences against tape gradients on the micro-scene,
// directional probes per parameter group, each loss term separately. Always
// 64-bit.
inline GradcheckReport gradcheck(const ModelConfig& model_cfg,
                                 const LossWeights& weights,
                                 int n_directions = 3) {
  ModelConfig mc = model_cfg;
  mc.image_h = 4;
  mc.image_w = 4;
  mc.encoder.patch_size_2d = 2;
  mc.validate();
  const LabeledScene scene = make_gradcheck_scene(mc.n_classes);
  const ParamBundle<double> params = init_model_params<double>(mc);
  const std::vector<std::string> frozen = frozen_groups(mc);
  const VecXd w = VecXd::Ones(mc.n_classes);
  constexpr int n_terms = 6;

  // One forward pass yields all six weighted objectives.
  const auto objectives = [&](const ParamBundle<double>& theta) {
    Tape<double> t;
    TapeParams<double> p(t, theta, param_groups(theta));
    SceneForward<double> f = forward_scene_t(t, p, mc, scene, scene.points);
    SceneLossVars<double> l = scene_losses_t(t, mc, f, scene, w, w);
    std::array<double, n_terms> v;
    v[0] = l.ce3d.value()(0, 0) + weights.seg2d * l.ce2d.value()(0, 0);
    v[1] = l.lov3d.value()(0, 0) + weights.seg2d * l.lov2d.value()(0, 0);
    v[2] = weights.xm * l.xm.value()(0, 0);
    v[3] = weights.gram * l.gram.value()(0, 0);
    v[4] = weights.diff * l.diff.value()(0, 0);
    v[5] = v[0] + v[1] + v[2] + v[3] + v[4];
    return v;
  };

  // Analytic gradients per term, one backward pass each.
  std::array<ParamBundle<double>, n_terms> grads;
  for (int term = 0; term < n_terms; ++term) {
    Tape<double> t;
    TapeParams<double> p(t, params, frozen);
    SceneForward<double> f = forward_scene_t(t, p, mc, scene, scene.points);
    SceneLossVars<double> l = scene_losses_t(t, mc, f, scene, w, w);
    Var<double> ce = add(l.ce3d, scale(l.ce2d, weights.seg2d));
    Var<double> lov = add(l.lov3d, scale(l.lov2d, weights.seg2d));
    Var<double> xm = scale(l.xm, weights.xm);
    Var<double> gram = scale(l.gram, weights.gram);
    Var<double> diff = scale(l.diff, weights.diff);
    Var<double> obj;
    switch (term) {
      case 0: obj = ce; break;
      case 1: obj = lov; break;
      case 2: obj = xm; break;
      case 3: obj = gram; break;
      case 4: obj = diff; break;
      default: obj = add(add(add(ce, lov), add(xm, gram)), diff); break;
    }
    if (!obj.requires_grad()) {
      // Constant-zero objective (kl_only regularizers): gradient is zero.
      grads[static_cast<std::size_t>(term)] = params.zeros_like();
      continue;
    }
    t.backward(obj.id);
    grads[static_cast<std::size_t>(term)] = p.grads(t, params);
  }

  GradcheckReport report;
  for (const std::string& group : param_groups(params)) {
    if (std::find(frozen.begin(), frozen.end(), group) != frozen.end()) {
      report.rows.push_back({group, "all", 0.0, true});
      continue;
    }
    std::array<double, n_terms> max_rel{};
    Rng dir_rng(mix_seed(mc.seed, fnv1a(group)));
    for (int d = 0; d < n_directions; ++d) {
      ParamBundle<double> dir = params.zeros_like();
      double norm_sq = 0.0;
      for (auto& it : dir.items()) {
        if (ParamBundle<double>::group_of(it.name) != group) continue;
        for (Eigen::Index j = 0; j < it.value.cols(); ++j)
          for (Eigen::Index i = 0; i < it.value.rows(); ++i)
            it.value(i, j) = dir_rng.normal();
        norm_sq += it.value.squaredNorm();
      }
      const double inv_norm = 1.0 / std::sqrt(norm_sq);
      ParamBundle<double> plus = params, minus = params;
      for (const auto& it : dir.items()) {
        plus.at(it.name) += (kGradcheckStep * inv_norm) * it.value;
        minus.at(it.name) -= (kGradcheckStep * inv_norm) * it.value;
      }
      const auto fp = objectives(plus);
      const auto fm = objectives(minus);
      for (int term = 0; term < n_terms; ++term) {
        double analytic = 0.0;
        const ParamBundle<double>& g = grads[static_cast<std::size_t>(term)];
        for (const auto& it : dir.items())
          analytic += inv_norm * (g.at(it.name).array() * it.value.array()).sum();
        const double fd =
            (fp[static_cast<std::size_t>(term)] - fm[static_cast<std::size_t>(term)]) /
            (2.0 * kGradcheckStep);
        const double rel = std::abs(analytic - fd) /
                           std::max({1e-6, std::abs(analytic), std::abs(fd)});
        max_rel[static_cast<std::size_t>(term)] =
            std::max(max_rel[static_cast<std::size_t>(term)], rel);
      }
    }
    for (int term = 0; term < n_terms; ++term) {
      GradcheckRow row{group, kGradcheckTerms[term],
                       max_rel[static_cast<std::size_t>(term)], false};
      if (row.max_rel > report.worst) {
        report.worst = row.max_rel;
        report.worst_group = row.group;
        report.worst_term = row.term;
      }
      if (row.max_rel > kGradcheckFail) report.passed = false;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

}  // namespace spfuse
