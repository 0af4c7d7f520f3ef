// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>

#include "spfuse/nn.hpp"

namespace spfuse {

// Four projections (shared/private per modality), each linear d_hidden ->
// d_decomp followed by a non-affine layer-normalization stage. Parameter
// names: decomp.{2d,3d}.{shared,private}.fc.{w,b}. The normalization carries
// no learnable gain: it bounds the shared/private row norms, which keeps the
// Gram and decorrelation penalties from feeding back into feature scale.
template <class S>
void init_decomp_params(ParamBundle<S>& b, int d_hidden, int d_decomp, Rng rng) {
  if (d_decomp <= 0) throw ValidationError("decomp.d_decomp: must be positive");
  for (const char* mod : {"2d", "3d"})
    for (const char* part : {"shared", "private"}) {
      const std::string p = std::string("decomp.") + mod + "." + part;
      init::linear(b, rng, p + ".fc", d_hidden, d_decomp);
    }
}

template <class S>
std::pair<Var<S>, Var<S>> decompose_t(const TapeParams<S>& p, Var<S> raw,
                                      Modality modality) {
  const std::string m = modality == Modality::M2D ? "2d" : "3d";
  Var<S> shared = standardize_rows(
      linear_t(p, "decomp." + m + ".shared.fc", raw), S(kLayerNormEps));
  Var<S> priv = standardize_rows(
      linear_t(p, "decomp." + m + ".private.fc", raw), S(kLayerNormEps));
  return {shared, priv};
}

// L_gram = (1/Cs^2) * || s2d^T s2d - s3d^T s3d ||_F^2. Row counts may differ.
template <class S>
Var<S> gram_loss_t(Var<S> s2d, Var<S> s3d) {
  if (s2d.cols() != s3d.cols())
    throw ValidationError("gram_loss: channel count mismatch");
  const S cs = S(s2d.cols());
  Var<S> diff = sub(matmul_tn(s2d, s2d), matmul_tn(s3d, s3d));
  return scale(frobenius_sq(diff), S(1) / (cs * cs));
}

// L_diff = (1/Cp^2) * || r2d^T r3d ||_F^2 over rowwise-paired features.
template <class S>
Var<S> decorrelation_loss_t(Var<S> r2d, Var<S> r3d) {
  if (r2d.rows() != r3d.rows())
    throw ValidationError("decorrelation_loss: row count mismatch (rowwise pairing)");
  if (r2d.cols() != r3d.cols())
    throw ValidationError("decorrelation_loss: channel count mismatch");
  const S cp = S(r2d.cols());
  return scale(frobenius_sq(matmul_tn(r2d, r3d)), S(1) / (cp * cp));
}

// --- plain wrappers -----------------------------------------------------------

template <class S>
std::pair<FeatureMatrix<S>, FeatureMatrix<S>> decompose(
    const FeatureMatrix<S>& raw, const ParamBundle<S>& params) {
  if (raw.role != FeatureRole::Raw)
    throw ValidationError("decompose: input role must be RAW");
  Tape<S> t;
  TapeParams<S> p(t, params, {"decomp"});
  auto [s, r] = decompose_t(p, constant(t, raw.values), raw.modality);
  FeatureMatrix<S> shared{s.value(), raw.modality, FeatureRole::Shared};
  FeatureMatrix<S> priv{r.value(), raw.modality, FeatureRole::Private};
  return {std::move(shared), std::move(priv)};
}

template <class S>
S gram_loss(const std::type_identity_t<MatX<S>>& s2d,
            const std::type_identity_t<MatX<S>>& s3d) {
  Tape<S> t;
  return gram_loss_t(constant(t, s2d), constant(t, s3d)).value()(0, 0);
}

template <class S>
S decorrelation_loss(const std::type_identity_t<MatX<S>>& r2d,
                     const std::type_identity_t<MatX<S>>& r3d) {
  Tape<S> t;
  return decorrelation_loss_t(constant(t, r2d), constant(t, r3d)).value()(0, 0);
}

}  // namespace spfuse
