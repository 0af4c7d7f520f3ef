// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "spfuse/nn.hpp"

namespace spfuse {

enum class FusionForm { Gated, ScalarBlend };

// SAF parameters: query/key d_decomp -> d_attn, values d_decomp -> d_fused,
// gate (d_decomp + d_fused) -> d_fused. Only the gate carries a bias so that
// saturation probes (bias -> +-inf) can pin G to exactly 1 or 0.
template <class S>
void init_saf_params(ParamBundle<S>& b, int d_decomp, int d_attn, int d_fused,
                     Rng rng) {
  if (d_decomp <= 0 || d_attn <= 0 || d_fused <= 0)
    throw ValidationError("saf: all dims must be positive");
  init::linear(b, rng, "saf.q", d_decomp, d_attn, false);
  init::linear(b, rng, "saf.k", d_decomp, d_attn, false);
  init::linear(b, rng, "saf.v2", d_decomp, d_fused, false);
  init::linear(b, rng, "saf.v3", d_decomp, d_fused, false);
  init::linear(b, rng, "saf.gate", d_decomp + d_fused, d_fused);
}

template <class S>
struct FusionOutput {
  MatX<S> fused_shared;  // N3 x d_fused
  MatX<S> attention;     // N3 x N2, row-stochastic
  MatX<S> gate;          // N3 x d_fused (or column-broadcast scalar blend)
};

template <class S>
struct SafVars {
  Var<S> fused_shared;
  Var<S> attention;
  Var<S> gate;
};

// Gate-and-blend stage shared by every attention direction:
// G = sigmoid(gate([s3d ; ctx])); fused = G.*ctx + (1-G).*V3(s3d).
template <class S>
SafVars<S> saf_blend_t(Tape<S>& t, const TapeParams<S>& p, Var<S> s3d, Var<S> ctx,
                       Var<S> attention, FusionForm form) {
  Var<S> v3 = linear_t(p, "saf.v3", s3d);
  Var<S> g = sigmoid(linear_t(p, "saf.gate", concat_cols(s3d, ctx)));
  if (form == FusionForm::ScalarBlend) {
    Var<S> alpha = rowwise_mean(g);  // per-point scalar in [0,1]
    Var<S> fused = add(mul_colvec(ctx, alpha),
                       sub(v3, mul_colvec(v3, alpha)));
    return {fused, attention, g};
  }
  Var<S> ones = constant(t, MatX<S>::Ones(g.rows(), g.cols()));
  Var<S> fused = add(mul(g, ctx), mul(sub(ones, g), v3));
  return {fused, attention, g};
}

// A = softmax(Q(s3d) K(s2d)^T / sqrt(d_attn)); C = A V2(s2d);
// G = sigmoid(gate([s3d ; C])); fused = G.*C + (1-G).*V3(s3d).
// Pre: s2d has at least one row. Callers handle the N2 = 0 fallback.
template <class S>
SafVars<S> saf_attention_t(Tape<S>& t, const TapeParams<S>& p, Var<S> s3d,
                           Var<S> s2d, FusionForm form = FusionForm::Gated) {
  if (s2d.rows() < 1)
    throw ValidationError("saf_attention: needs at least one 2D row");
  if (s3d.cols() != s2d.cols())
    throw ValidationError("saf_attention: operand width mismatch");
  const Eigen::Index d_attn = p.at("saf.q.w").cols();
  Var<S> q = linear_t(p, "saf.q", s3d);
  Var<S> k = linear_t(p, "saf.k", s2d);
  const S inv_sqrt = S(1) / S(std::sqrt(static_cast<double>(d_attn)));
  Var<S> a = softmax_rows(scale(matmul_nt(q, k), inv_sqrt));
  Var<S> ctx = matmul(a, linear_t(p, "saf.v2", s2d));
  return saf_blend_t(t, p, s3d, ctx, a, form);
}

// Plain wrapper with the camera-blind fallback and runtime invariant checks.
template <class S>
FusionOutput<S> saf_attention(const std::type_identity_t<MatX<S>>& s3d,
                              const std::type_identity_t<MatX<S>>& s2d,
                              const ParamBundle<S>& params,
                              FusionForm form = FusionForm::Gated,
                              WarnCounters* warn = nullptr) {
  Tape<S> t;
  TapeParams<S> p(t, params, {"saf"});
  FusionOutput<S> out;
  if (s2d.rows() == 0) {
    if (warn) ++warn->camera_blind_batches;
    out.fused_shared = s3d * params.at("saf.v3.w");
    out.attention = MatX<S>(s3d.rows(), 0);
    out.gate = MatX<S>::Zero(s3d.rows(), params.at("saf.v3.w").cols());
    return out;
  }
  SafVars<S> v = saf_attention_t(t, p, constant(t, s3d), constant(t, s2d), form);
  out.fused_shared = v.fused_shared.value();
  out.attention = v.attention.value();
  out.gate = v.gate.value();
  for (Eigen::Index r = 0; r < out.attention.rows(); ++r) {
    if (std::abs(out.attention.row(r).sum() - S(1)) > S(1e-6))
      throw ValidationError("saf_attention: attention row not stochastic");
  }
  if (out.gate.minCoeff() < S(0) || out.gate.maxCoeff() > S(1))
    throw ValidationError("saf_attention: gate outside [0, 1]");
  return out;
}

// Final point representation: [fused_shared ; r3d], fused block first.
template <class S>
Var<S> concat_fused_t(Var<S> fused_shared, Var<S> r3d) {
  if (fused_shared.rows() != r3d.rows())
    throw ValidationError("concat_fused: row count mismatch");
  return concat_cols(fused_shared, r3d);
}

template <class S>
FeatureMatrix<S> concat_fused(const FeatureMatrix<S>& fused_shared,
                              const FeatureMatrix<S>& r3d) {
  if (fused_shared.values.rows() != r3d.values.rows())
    throw ValidationError("concat_fused: row count mismatch");
  FeatureMatrix<S> out;
  out.values.resize(fused_shared.values.rows(),
                    fused_shared.values.cols() + r3d.values.cols());
  out.values.leftCols(fused_shared.values.cols()) = fused_shared.values;
  out.values.rightCols(r3d.values.cols()) = r3d.values;
  out.modality = Modality::M3D;
  out.role = FeatureRole::Fused;
  return out;
}

// Two-layer point head with one nonlinearity.
template <class S>
void init_seghead3d_params(ParamBundle<S>& b, int d_in, int d_mid, int n_classes,
                           Rng rng) {
  init::linear(b, rng, "seghead3d.fc1", d_in, d_mid);
  init::linear(b, rng, "seghead3d.fc2", d_mid, n_classes);
}

template <class S>
Var<S> segment_head_3d_t(const TapeParams<S>& p, Var<S> fused) {
  return linear_t(p, "seghead3d.fc2", gelu(linear_t(p, "seghead3d.fc1", fused)));
}

template <class S>
MatX<S> segment_head_3d(const std::type_identity_t<MatX<S>>& fused,
                        const ParamBundle<S>& params) {
  Tape<S> t;
  TapeParams<S> p(t, params, {"seghead3d"});
  return segment_head_3d_t(p, constant(t, fused)).value();
}

// Per-cell linear classifier over the projected 2D feature map.
template <class S>
void init_seghead2d_params(ParamBundle<S>& b, int d_hidden, int n_classes, Rng rng) {
  init::linear(b, rng, "seghead2d.fc", d_hidden, n_classes);
}

template <class S>
Var<S> segment_head_2d_t(const TapeParams<S>& p, Var<S> feature_map) {
  return linear_t(p, "seghead2d.fc", feature_map);
}

template <class S>
MatX<S> segment_head_2d(const std::type_identity_t<MatX<S>>& feature_map,
                        const ParamBundle<S>& params) {
  Tape<S> t;
  TapeParams<S> p(t, params, {"seghead2d"});
  return segment_head_2d_t(p, constant(t, feature_map)).value();
}

// Pixel -> cell index map for nearest-neighbor upsampling of cell-resolution
// logits to image resolution.
inline std::vector<int> upsample_cell_indices(int image_h, int image_w, int patch) {
  if (patch <= 0 || image_h % patch != 0 || image_w % patch != 0)
    throw ValidationError("upsample: image size not divisible by patch");
  const int gw = image_w / patch;
  std::vector<int> idx(static_cast<std::size_t>(image_h) * image_w);
  for (int v = 0; v < image_h; ++v)
    for (int u = 0; u < image_w; ++u)
      idx[static_cast<std::size_t>(v) * image_w + u] = (v / patch) * gw + (u / patch);
  return idx;
}

template <class S>
MatX<S> upsample_nearest(const std::type_identity_t<MatX<S>>& cell_logits,
                         int image_h, int image_w, int patch) {
  const std::vector<int> idx = upsample_cell_indices(image_h, image_w, patch);
  MatX<S> out(static_cast<Eigen::Index>(idx.size()), cell_logits.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= cell_logits.rows())
      throw ValidationError("upsample: cell index out of range");
    out.row(static_cast<Eigen::Index>(i)) = cell_logits.row(idx[i]);
  }
  return out;
}

}  // namespace spfuse
