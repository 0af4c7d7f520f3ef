// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>

#include "spfuse/decomposition.hpp"
#include "spfuse/encoders.hpp"
#include "spfuse/fusion.hpp"
#include "spfuse/losses.hpp"
#include "spfuse/projection.hpp"

namespace spfuse {

// shared_private: decomposition + SAF fusion + subspace regularizers.
// kl_only: independent branches coupled only by the cross-modal KL term.
enum class FusionMode { SharedPrivate, KlOnly };

// Which modality issues attention queries. q3d_k2d is the default; q2d_k3d
// reverses the roles and scatters the per-cell attention back onto points;
// bidirectional averages both contexts.
enum class QueryDirection { Q3dK2d, Q2dK3d, Bidirectional };

inline std::string to_string(FusionMode m) {
  return m == FusionMode::SharedPrivate ? "shared_private" : "kl_only";
}
inline FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "shared_private") return FusionMode::SharedPrivate;
  if (s == "kl_only") return FusionMode::KlOnly;
  throw ValidationError("fusion_mode must be 'shared_private' or 'kl_only', got '" +
                        s + "'");
}

inline std::string to_string(QueryDirection d) {
  switch (d) {
    case QueryDirection::Q3dK2d: return "q3d_k2d";
    case QueryDirection::Q2dK3d: return "q2d_k3d";
    default: return "bidirectional";
  }
}
inline QueryDirection query_direction_from_string(const std::string& s) {
  if (s == "q3d_k2d") return QueryDirection::Q3dK2d;
  if (s == "q2d_k3d") return QueryDirection::Q2dK3d;
  if (s == "bidirectional") return QueryDirection::Bidirectional;
  throw ValidationError(
      "query_direction must be 'q3d_k2d', 'q2d_k3d' or 'bidirectional', got '" + s +
      "'");
}

inline std::string to_string(KlMode m) {
  return m == KlMode::AsWritten ? "as_written" : "symmetric";
}
inline KlMode kl_mode_from_string(const std::string& s) {
  if (s == "as_written") return KlMode::AsWritten;
  if (s == "symmetric") return KlMode::Symmetric;
  throw ValidationError("kl_mode must be 'as_written' or 'symmetric', got '" + s + "'");
}

inline std::string to_string(FusionForm f) {
  return f == FusionForm::Gated ? "gated" : "scalar_blend";
}
inline FusionForm fusion_form_from_string(const std::string& s) {
  if (s == "gated") return FusionForm::Gated;
  if (s == "scalar_blend") return FusionForm::ScalarBlend;
  throw ValidationError("fusion_form must be 'gated' or 'scalar_blend', got '" + s +
                        "'");
}

struct ModelConfig {
  EncoderConfig encoder;
  int d_decomp = 128;
  int d_attn = 64;
  int d_fused = 256;   // 2 * d_decomp: the fused feature doubles the shared width
  int seg_hidden = 128;
  int n_classes = 6;
  int image_h = 96;
  int image_w = 128;
  FusionMode fusion_mode = FusionMode::SharedPrivate;
  QueryDirection query_direction = QueryDirection::Q3dK2d;
  FusionForm fusion_form = FusionForm::Gated;
  KlMode kl_mode = KlMode::AsWritten;
  bool kl_swap = false;
  std::uint64_t seed = 0;

  void validate() const {
    encoder.validate();
    if (d_decomp <= 0 || d_attn <= 0 || d_fused <= 0 || seg_hidden <= 0)
      throw ValidationError("model config: all widths must be positive");
    if (n_classes < 2) throw ValidationError("model config: n_classes must be >= 2");
    if (image_h < encoder.patch_size_2d || image_w < encoder.patch_size_2d ||
        image_h % encoder.patch_size_2d != 0 || image_w % encoder.patch_size_2d != 0)
      throw ValidationError(
          "model config: image sides must be positive multiples of patch_size_2d");
  }

  int grid_h() const { return image_h / encoder.patch_size_2d; }
  int grid_w() const { return image_w / encoder.patch_size_2d; }
};

// Full trainable bundle for the configured wiring. Group layout:
//   enc2d (frozen by default), head2d, enc3d, decomp, saf, seghead3d, seghead2d
// kl_only drops decomp/saf and points the 3D head at the raw encoder output.
template <class S>
ParamBundle<S> init_model_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  ParamBundle<S> b;
  init_encoder2d_params<S>(b, cfg.encoder, cfg.image_h, cfg.image_w,
                           root.child("enc2d"));
  init_head2d_params<S>(b, cfg.encoder, root.child("head2d"));
  init_encoder3d_params<S>(b, cfg.encoder, root.child("enc3d"));
  if (cfg.fusion_mode == FusionMode::SharedPrivate) {
    init_decomp_params<S>(b, cfg.encoder.d_hidden, cfg.d_decomp, root.child("decomp"));
    init_saf_params<S>(b, cfg.d_decomp, cfg.d_attn, cfg.d_fused, root.child("saf"));
    init_seghead3d_params<S>(b, cfg.d_fused + cfg.d_decomp, cfg.seg_hidden,
                             cfg.n_classes, root.child("seghead3d"));
  } else {
    init_seghead3d_params<S>(b, cfg.encoder.d_hidden, cfg.seg_hidden, cfg.n_classes,
                             root.child("seghead3d"));
  }
  init_seghead2d_params<S>(b, cfg.encoder.d_hidden, cfg.n_classes, root.child("seghead2d"));
  return b;
}

inline std::vector<std::string> frozen_groups(const ModelConfig& cfg) {
  return cfg.encoder.freeze_2d ? std::vector<std::string>{"enc2d"}
                               : std::vector<std::string>{};
}

// Checkpoint meta <-> config round-trip, so evaluation can rebuild the wiring.
inline std::map<std::string, std::string> model_config_to_meta(const ModelConfig& c) {
  std::map<std::string, std::string> m;
  m["d_hidden"] = std::to_string(c.encoder.d_hidden);
  m["n_blocks_3d"] = std::to_string(c.encoder.n_blocks_3d);
  m["n_heads"] = std::to_string(c.encoder.n_heads);
  m["voxel_size"] = std::to_string(c.encoder.voxel_size);
  m["patch_size_2d"] = std::to_string(c.encoder.patch_size_2d);
  m["freeze_2d"] = c.encoder.freeze_2d ? "1" : "0";
  m["d_decomp"] = std::to_string(c.d_decomp);
  m["d_attn"] = std::to_string(c.d_attn);
  m["d_fused"] = std::to_string(c.d_fused);
  m["seg_hidden"] = std::to_string(c.seg_hidden);
  m["n_classes"] = std::to_string(c.n_classes);
  m["image_h"] = std::to_string(c.image_h);
  m["image_w"] = std::to_string(c.image_w);
  m["fusion_mode"] = to_string(c.fusion_mode);
  m["query_direction"] = to_string(c.query_direction);
  m["fusion_form"] = to_string(c.fusion_form);
  m["kl_mode"] = to_string(c.kl_mode);
  m["kl_swap"] = c.kl_swap ? "1" : "0";
  m["seed"] = std::to_string(c.seed);
  return m;
}

inline ModelConfig model_config_from_meta(const std::map<std::string, std::string>& m) {
  const auto get = [&](const char* k) -> const std::string& {
    auto it = m.find(k);
    if (it == m.end())
      throw ValidationError(std::string("checkpoint meta: missing key ") + k);
    return it->second;
  };
  ModelConfig c;
  c.encoder.d_hidden = std::stoi(get("d_hidden"));
  c.encoder.n_blocks_3d = std::stoi(get("n_blocks_3d"));
  c.encoder.n_heads = std::stoi(get("n_heads"));
  c.encoder.voxel_size = std::stod(get("voxel_size"));
  c.encoder.patch_size_2d = std::stoi(get("patch_size_2d"));
  c.encoder.freeze_2d = get("freeze_2d") == "1";
  c.d_decomp = std::stoi(get("d_decomp"));
  c.d_attn = std::stoi(get("d_attn"));
  c.d_fused = std::stoi(get("d_fused"));
  c.seg_hidden = std::stoi(get("seg_hidden"));
  c.n_classes = std::stoi(get("n_classes"));
  c.image_h = std::stoi(get("image_h"));
  c.image_w = std::stoi(get("image_w"));
  c.fusion_mode = fusion_mode_from_string(get("fusion_mode"));
  c.query_direction = query_direction_from_string(get("query_direction"));
  c.fusion_form = fusion_form_from_string(get("fusion_form"));
  c.kl_mode = kl_mode_from_string(get("kl_mode"));
  c.kl_swap = get("kl_swap") == "1";
  c.seed = std::stoull(get("seed"));
  c.validate();
  return c;
}

// Attention context per query direction. s3d: N3 x d_decomp (points),
// s2d: N2 x d_decomp (feature-map cells). Returns {context (N3 x d_fused),
// attention}; the attention rows are stochastic over whichever modality
// serves as keys.
template <class S>
std::pair<Var<S>, Var<S>> saf_context_t(const TapeParams<S>& p, Var<S> s3d,
                                        Var<S> s2d, QueryDirection dir) {
  const Eigen::Index d_attn = p.at("saf.q.w").cols();
  const S inv_sqrt = S(1) / S(std::sqrt(static_cast<double>(d_attn)));
  Var<S> v2 = linear_t(p, "saf.v2", s2d);
  const auto fwd_attention = [&] {
    return softmax_rows(
        scale(matmul_nt(linear_t(p, "saf.q", s3d), linear_t(p, "saf.k", s2d)),
              inv_sqrt));
  };
  if (dir == QueryDirection::Q3dK2d) {
    Var<S> a = fwd_attention();
    return {matmul(a, v2), a};
  }
  // Reversed querying: each cell attends over points (rows of A are
  // stochastic over points); transposing scatters the 2D values back onto
  // points weighted by how much each cell attended to them.
  Var<S> a = softmax_rows(
      scale(matmul_nt(linear_t(p, "saf.q", s2d), linear_t(p, "saf.k", s3d)),
            inv_sqrt));
  Var<S> back = matmul_tn(a, v2);
  if (dir == QueryDirection::Q2dK3d) return {back, a};
  Var<S> fa = fwd_attention();
  return {scale(add(matmul(fa, v2), back), S(0.5)), fa};
}

// One scene on the tape up to the two logit heads. encoder_points carries the
// (possibly augmented) coordinates fed to the 3D encoder; the pixel
// correspondence always uses the scene's stored geometry, which keeps
// augmentation calibration-consistent. frozen_2d_raw short-circuits the frozen
// 2D encoder with a cached forward.
template <class S>
struct SceneForward {
  Var<S> logits3d;        // N x C
  Var<S> logits2d_cells;  // (H' * W') x C
  Var<S> gram;            // 1 x 1
  Var<S> diff;            // 1 x 1
  std::vector<int> paired_points;  // valid-correspondence point rows
  std::vector<int> paired_cells;   // matching feature-map cells
};

template <class S>
SceneForward<S> forward_scene_t(Tape<S>& t, const TapeParams<S>& p,
                                const ModelConfig& cfg, const LabeledScene& scene,
                                const Points& encoder_points,
                                const std::optional<MatX<S>>& frozen_2d_raw = {}) {
  cfg.validate();
  if (scene.calibration.image_h != cfg.image_h ||
      scene.calibration.image_w != cfg.image_w)
    throw ValidationError("forward: scene image size does not match model config");
  if (encoder_points.rows() != scene.points.rows())
    throw ValidationError("forward: encoder point count does not match scene");

  // 2D branch: frozen backbone (cached when provided), trainable head.
  Var<S> f2d_raw;
  if (frozen_2d_raw) {
    f2d_raw = constant(t, *frozen_2d_raw);
  } else {
    const MatX<S> image = scene.image.template cast<S>();
    f2d_raw = encode_image_t(t, p, image, cfg.image_h, cfg.image_w, cfg.encoder);
  }
  Var<S> f2d = project_2d_head_t(p, f2d_raw);
  Var<S> logits2d_cells = segment_head_2d_t(p, f2d);

  // 3D branch.
  const auto pctx = build_point_context<S>(encoder_points, cfg.encoder);
  Var<S> raw3d = encode_points_t(t, p, pctx, cfg.encoder);

  // Point/pixel pairing on the stored geometry.
  const Correspondence corr = project_points(scene.points, scene.calibration);
  const std::vector<int> cells =
      gather_cell_indices(corr, cfg.grid_h(), cfg.grid_w(),
                          cfg.encoder.patch_size_2d, cfg.encoder.patch_size_2d);
  SceneForward<S> out;
  for (Eigen::Index i = 0; i < corr.size(); ++i) {
    if (!corr.valid[i]) continue;
    out.paired_points.push_back(static_cast<int>(i));
    out.paired_cells.push_back(cells[static_cast<std::size_t>(i)]);
  }

  if (cfg.fusion_mode == FusionMode::SharedPrivate) {
    auto [s2d, r2d] = decompose_t(p, f2d, Modality::M2D);
    auto [s3d, r3d] = decompose_t(p, raw3d, Modality::M3D);
    auto [ctx, attention] = saf_context_t(p, s3d, s2d, cfg.query_direction);
    SafVars<S> saf = saf_blend_t(t, p, s3d, ctx, attention, cfg.fusion_form);
    out.logits3d = segment_head_3d_t(p, concat_fused_t(saf.fused_shared, r3d));
    if (!out.paired_points.empty()) {
      // Sample-averaged second moments: the 1/sqrt(N) scaling makes both
      // penalties compare mean Gram matrices, so their magnitude (and their
      // gradient against the segmentation terms) is independent of how many
      // points have a valid correspondence.
      const S inv_sqrt_n =
          S(1) / std::sqrt(static_cast<S>(out.paired_points.size()));
      Var<S> s2p = scale(gather_rows(s2d, out.paired_cells), inv_sqrt_n);
      Var<S> s3p = scale(gather_rows(s3d, out.paired_points), inv_sqrt_n);
      Var<S> r2p = scale(gather_rows(r2d, out.paired_cells), inv_sqrt_n);
      Var<S> r3p = scale(gather_rows(r3d, out.paired_points), inv_sqrt_n);
      out.gram = gram_loss_t(s2p, s3p);
      out.diff = decorrelation_loss_t(r2p, r3p);
    } else {
      out.gram = scalar_const(t, S(0));
      out.diff = scalar_const(t, S(0));
    }
  } else {
    out.logits3d = segment_head_3d_t(p, raw3d);
    out.gram = scalar_const(t, S(0));
    out.diff = scalar_const(t, S(0));
  }
  out.logits2d_cells = logits2d_cells;
  return out;
}

// Loss terms for one forwarded scene. CE and Lovasz are kept separate so
// gradient verification can target each objective individually.
template <class S>
struct SceneLossVars {
  Var<S> ce3d, lov3d, ce2d, lov2d, xm, gram, diff;
  Var<S> seg3d, seg2d;
};

template <class S>
SceneLossVars<S> scene_losses_t(Tape<S>& t, const ModelConfig& cfg,
                                const SceneForward<S>& f, const LabeledScene& scene,
                                const VecXd& weights_3d, const VecXd& weights_2d,
                                WarnCounters* warn = nullptr) {
  SceneLossVars<S> l;
  l.ce3d = weighted_cross_entropy_t(t, f.logits3d, scene.point_labels, weights_3d, warn);
  l.lov3d = lovasz_softmax_t(t, softmax_rows(f.logits3d), scene.point_labels, warn);

  const std::vector<int> up = upsample_cell_indices(cfg.image_h, cfg.image_w,
                                                    cfg.encoder.patch_size_2d);
  Var<S> logits2d_pix = gather_rows(f.logits2d_cells, up);
  l.ce2d = weighted_cross_entropy_t(t, logits2d_pix, scene.pixel_labels, weights_2d, warn);
  l.lov2d = lovasz_softmax_t(t, softmax_rows(logits2d_pix), scene.pixel_labels, warn);

  l.xm = xm_kl_loss_t(t, gather_rows(f.logits3d, f.paired_points),
                      gather_rows(f.logits2d_cells, f.paired_cells), cfg.kl_mode,
                      cfg.kl_swap, warn);
  l.gram = f.gram;
  l.diff = f.diff;
  l.seg3d = add(l.ce3d, l.lov3d);
  l.seg2d = add(l.ce2d, l.lov2d);
  return l;
}

// Argmax class prediction for one scene; pure inference (no gradients).
template <class S>
Labels predict_scene(const ModelConfig& cfg, const ParamBundle<S>& params,
                     const LabeledScene& scene,
                     const std::optional<MatX<S>>& frozen_2d_raw = {}) {
  Tape<S> t;
  TapeParams<S> p(t, params, param_groups(params));
  SceneForward<S> f =
      forward_scene_t(t, p, cfg, scene, scene.points, frozen_2d_raw);
  const MatX<S>& logits = f.logits3d.value();
  Labels pred(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index c = 0;
    logits.row(i).maxCoeff(&c);
    pred[i] = static_cast<int>(c);
  }
  return pred;
}

// Frozen 2D backbone output for one scene, cache-keyed by scene_id upstream.
template <class S>
MatX<S> frozen_2d_forward(const ModelConfig& cfg, const ParamBundle<S>& params,
                          const LabeledScene& scene) {
  return encode_image<S>(scene.image.template cast<S>(), cfg.image_h, cfg.image_w,
                         cfg.encoder, params);
}

}  // namespace spfuse
