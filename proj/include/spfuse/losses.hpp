// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <numeric>

#include "spfuse/tape.hpp"

namespace spfuse {

// Non-finite loss term observed; carries the term name for diagnostics.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class KlMode { AsWritten, Symmetric };

namespace detail {

inline std::vector<int> kept_rows(const Labels& labels, int n_classes) {
  std::vector<int> keep;
  keep.reserve(static_cast<std::size_t>(labels.size()));
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l == kIgnoreLabel) continue;
    if (l < 0 || l >= n_classes)
      throw ValidationError("loss: label out of range at row " + std::to_string(i));
    keep.push_back(static_cast<int>(i));
  }
  return keep;
}

}  // namespace detail

// Mean over non-ignored rows of w[y_i] * (-log softmax(logits_i)[y_i]),
// normalized by the sum of applied weights.
template <class S>
Var<S> weighted_cross_entropy_t(Tape<S>& t, Var<S> logits, const Labels& labels,
                                const VecXd& class_weights,
                                WarnCounters* warn = nullptr) {
  const int c = static_cast<int>(logits.cols());
  if (labels.size() != logits.rows())
    throw ValidationError("cross_entropy: labels/logits row mismatch");
  if (class_weights.size() != c)
    throw ValidationError("cross_entropy: class_weights size mismatch");
  if (class_weights.minCoeff() < 0.0 || class_weights.maxCoeff() <= 0.0)
    throw ValidationError("cross_entropy: weights must be >= 0 and not all zero");
  const std::vector<int> keep = detail::kept_rows(labels, c);
  if (keep.empty()) {
    if (warn) ++warn->all_ignored_ce;
    return scalar_const(t, S(0));
  }
  std::vector<int> cols;
  cols.reserve(keep.size());
  MatX<S> w(static_cast<Eigen::Index>(keep.size()), 1);
  double wsum = 0.0;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const int y = labels[keep[i]];
    cols.push_back(y);
    w(static_cast<Eigen::Index>(i), 0) = S(class_weights[y]);
    wsum += class_weights[y];
  }
  if (wsum <= 0.0) {
    if (warn) ++warn->all_ignored_ce;
    return scalar_const(t, S(0));
  }
  Var<S> lp = log_softmax_rows(gather_rows(logits, keep));
  Var<S> picked = pick_per_row(lp, cols);
  return scale(sum_all(cmul(picked, w)), S(-1.0 / wsum));
}

// Gradient of the Lovasz extension of the Jaccard loss for a sorted
// ground-truth indicator vector.
inline VecXd lovasz_grad(const std::vector<int>& fg_sorted) {
  const std::size_t n = fg_sorted.size();
  const double gts = std::accumulate(fg_sorted.begin(), fg_sorted.end(), 0.0);
  VecXd grad(static_cast<Eigen::Index>(n));
  double inter = gts, uni = gts, prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    inter -= fg_sorted[i];
    uni += 1.0 - fg_sorted[i];
    const double jac = 1.0 - inter / uni;
    grad[static_cast<Eigen::Index>(i)] = jac - prev;
    prev = jac;
  }
  return grad;
}

// Lovasz-Softmax: per class present in the labels, hinge errors
// m_i = 1 - p_i(c) if y_i = c else p_i(c), sorted descending, dotted with the
// Lovasz-extension gradient; averaged over present classes.
template <class S>
Var<S> lovasz_softmax_t(Tape<S>& t, Var<S> probs, const Labels& labels,
                        WarnCounters* warn = nullptr) {
  const int c = static_cast<int>(probs.cols());
  if (labels.size() != probs.rows())
    throw ValidationError("lovasz_softmax: labels/probs row mismatch");
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const S s = probs.value().row(r).sum();
    if (std::abs(double(s) - 1.0) > 1e-6)
      throw ValidationError("lovasz_softmax: probability row " + std::to_string(r) +
                            " does not sum to 1");
    if (probs.value().row(r).minCoeff() < S(-1e-9))
      throw ValidationError("lovasz_softmax: negative probability");
  }
  const std::vector<int> keep = detail::kept_rows(labels, c);
  if (keep.empty()) {
    if (warn) ++warn->empty_lovasz;
    return scalar_const(t, S(0));
  }
  Var<S> kept = gather_rows(probs, keep);
  const Eigen::Index n = kept.rows();
  Var<S> total = scalar_const(t, S(0));
  int present = 0;
  for (int cls = 0; cls < c; ++cls) {
    std::vector<int> fg(static_cast<std::size_t>(n));
    int n_fg = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      fg[static_cast<std::size_t>(i)] = labels[keep[static_cast<std::size_t>(i)]] == cls;
      n_fg += fg[static_cast<std::size_t>(i)];
    }
    if (n_fg == 0) continue;
    ++present;
    MatX<S> sign(n, 1), offs(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      sign(i, 0) = fg[static_cast<std::size_t>(i)] ? S(-1) : S(1);
      offs(i, 0) = fg[static_cast<std::size_t>(i)] ? S(1) : S(0);
    }
    Var<S> m = cadd(cmul(slice_cols(kept, cls, 1), sign), offs);
    // sort order is data-dependent but constant w.r.t. differentiation
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const MatX<S>& mv = m.value();
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return mv(a, 0) > mv(b, 0); });
    std::vector<int> fg_sorted(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < order.size(); ++i)
      fg_sorted[i] = fg[static_cast<std::size_t>(order[i])];
    const VecXd g = lovasz_grad(fg_sorted);
    MatX<S> coeff(n, 1);
    for (std::size_t i = 0; i < order.size(); ++i)
      coeff(order[i], 0) = S(g[static_cast<Eigen::Index>(i)]);
    total = add(total, sum_all(cmul(m, coeff)));
  }
  return scale(total, S(1) / S(present));
}

// Segmentation loss: weighted CE plus Lovasz-Softmax of the same logits.
template <class S>
Var<S> seg_loss_t(Tape<S>& t, Var<S> logits, const Labels& labels,
                  const VecXd& class_weights, WarnCounters* warn = nullptr) {
  Var<S> ce = weighted_cross_entropy_t(t, logits, labels, class_weights, warn);
  Var<S> lv = lovasz_softmax_t(t, softmax_rows(logits), labels, warn);
  return add(ce, lv);
}

// Mean-over-rows KL(p || q) from logits.
template <class S>
Var<S> kl_rows_t(Var<S> p_logits, Var<S> q_logits) {
  if (p_logits.rows() != q_logits.rows() || p_logits.cols() != q_logits.cols())
    throw ValidationError("kl: paired logits shape mismatch");
  Var<S> lp = log_softmax_rows(p_logits);
  Var<S> lq = log_softmax_rows(q_logits);
  Var<S> p = exp_op(lp);
  Var<S> term = mul(p, sub(lp, lq));
  return scale(sum_all(term), S(1) / S(p_logits.rows()));
}

// Cross-modal alignment. as_written: KL(p_2d || p_3d), the one-directional
// form; symmetric: the bidirectional average. Rows are the paired
// valid-correspondence points; zero pairs yield 0 with a warning.
template <class S>
Var<S> xm_kl_loss_t(Tape<S>& t, Var<S> logits_3d, Var<S> logits_2d, KlMode mode,
                    bool swap_direction = false, WarnCounters* warn = nullptr) {
  if (logits_3d.rows() == 0) {
    if (warn) ++warn->empty_kl_pairs;
    return scalar_const(t, S(0));
  }
  if (mode == KlMode::Symmetric)
    return scale(add(kl_rows_t(logits_2d, logits_3d), kl_rows_t(logits_3d, logits_2d)),
                 S(0.5));
  return swap_direction ? kl_rows_t(logits_3d, logits_2d)
                        : kl_rows_t(logits_2d, logits_3d);
}

// Weighted total with finiteness diagnostics.
inline LossBundle total_loss(double seg3d, double seg2d, double xm, double gram,
                             double diff, const LossWeights& w) {
  const std::pair<const char*, double> parts[] = {
      {"seg3d", seg3d}, {"seg2d", seg2d}, {"xm", xm}, {"gram", gram}, {"diff", diff}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v))
      throw DivergenceError(std::string("total_loss: non-finite term ") + name);
    if (v < -1e-9)
      throw ValidationError(std::string("total_loss: negative term ") + name);
  }
  LossBundle b = LossBundle::compose(seg3d, seg2d, xm, gram, diff, w);
  if (!std::isfinite(b.total))
    throw DivergenceError("total_loss: non-finite term total");
  return b;
}

template <class S>
Var<S> total_loss_t(Var<S> seg3d, Var<S> seg2d, Var<S> xm, Var<S> gram, Var<S> diff,
                    const LossWeights& w) {
  Var<S> total = add(seg3d, scale(seg2d, S(w.seg2d)));
  total = add(total, scale(xm, S(w.xm)));
  total = add(total, scale(gram, S(w.gram)));
  return add(total, scale(diff, S(w.diff)));
}

// Inverse square-root frequency weights, renormalized to mean 1. Classes
// absent from the split get weight 1.
inline VecXd class_weights_inv_sqrt(const std::vector<Labels>& label_sets,
                                    int n_classes) {
  VecXd counts = VecXd::Zero(n_classes);
  for (const auto& ls : label_sets)
    for (Eigen::Index i = 0; i < ls.size(); ++i) {
      const int l = ls[i];
      if (l == kIgnoreLabel) continue;
      if (l < 0 || l >= n_classes)
        throw ValidationError("class_weights: label out of range");
      counts[l] += 1.0;
    }
  VecXd w(n_classes);
  for (int c = 0; c < n_classes; ++c)
    w[c] = counts[c] > 0.0 ? 1.0 / std::sqrt(counts[c]) : 0.0;
  const double mean_present = [&] {
    double s = 0.0;
    int n = 0;
    for (int c = 0; c < n_classes; ++c)
      if (w[c] > 0.0) s += w[c], ++n;
    return n > 0 ? s / n : 1.0;
  }();
  for (int c = 0; c < n_classes; ++c)
    w[c] = w[c] > 0.0 ? w[c] / mean_present : 1.0;
  return w;
}

}  // namespace spfuse
