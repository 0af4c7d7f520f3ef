// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <type_traits>
#include <stdexcept>
#include <string>
#include <vector>

#include "spfuse/types.hpp"

namespace spfuse {

// Reverse-mode tape over dense Eigen matrices. Every differentiable
// computation in the library is expressed through the free functions below;
// gradients are therefore analytic by construction and can be checked against
// finite differences term by term.
//
// Memory discipline: backward() walks nodes in reverse creation order. Once a
// non-leaf node has propagated its gradient, both its value and gradient
// buffers are released, so peak memory stays near the forward peak.
template <class S>
class Tape {
 public:
  using Mat = MatX<S>;

  struct Node {
    Mat value;
    Mat grad;                                 // empty until touched
    bool requires_grad = false;
    bool leaf = false;                        // parameters: buffers survive backward
    std::function<void(Tape&, int)> backward; // empty for constants/leaves
  };

  int size() const { return static_cast<int>(nodes_.size()); }

  int add(Mat value, bool requires_grad, bool leaf,
          std::function<void(Tape&, int)> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.leaf = leaf;
    n.backward = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Mat& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Accumulation target, allocated lazily as zeros.
  Mat& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }

  // Gradient of a leaf after backward(); zeros if the leaf never
  // participated in the objective.
  Mat leaf_grad(int id) const {
    const Node& n = nodes_[id];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(int root) {
    Node& r = nodes_[root];
    if (r.value.rows() != 1 || r.value.cols() != 1)
      throw std::invalid_argument("tape.backward: root must be a 1x1 scalar");
    if (!r.requires_grad)
      throw std::invalid_argument("tape.backward: root does not require grad");
    grad(root).setConstant(S(1));
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.backward && n.grad.size() != 0) n.backward(*this, id);
      if (!n.leaf) {
        n.value.resize(0, 0);
        n.grad.resize(0, 0);
        n.backward = nullptr;
      }
    }
  }

 private:
  std::vector<Node> nodes_;
};

// Lightweight handle; tapes outlive the handles they issue.
template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const MatX<S>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

namespace detail {

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <class S>
void same_tape(const Var<S>& a, const Var<S>& b) {
  check(a.tape == b.tape, "tape op: operands from different tapes");
}

}  // namespace detail

template <class S>
Var<S> constant(Tape<S>& t, std::type_identity_t<MatX<S>> v) {
  return {&t, t.add(std::move(v), false, false, nullptr)};
}

template <class S>
Var<S> scalar_const(Tape<S>& t, S v) {
  MatX<S> m(1, 1);
  m(0, 0) = v;
  return constant(t, std::move(m));
}

template <class S>
Var<S> leaf(Tape<S>& t, std::type_identity_t<MatX<S>> v, bool requires_grad = true) {
  return {&t, t.add(std::move(v), requires_grad, true, nullptr)};
}

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id, ib = b.id;
  return {&t, t.add(a.value() + b.value(), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, ib](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            if (tp.requires_grad(ia)) tp.grad(ia) += g;
                            if (tp.requires_grad(ib)) tp.grad(ib) += g;
                          })};
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id, ib = b.id;
  return {&t, t.add(a.value() - b.value(), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, ib](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            if (tp.requires_grad(ia)) tp.grad(ia) += g;
                            if (tp.requires_grad(ib)) tp.grad(ib) -= g;
                          })};
}

template <class S>
Var<S> scale(Var<S> a, S c) {
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  return {&t, t.add(a.value() * c, rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, c](Tape<S>& tp, int self) {
                            tp.grad(ia) += tp.grad(self) * c;
                          })};
}

// Elementwise product of two tracked operands.
template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id, ib = b.id;
  return {&t, t.add(a.value().cwiseProduct(b.value()), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, ib](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            if (tp.requires_grad(ia))
                              tp.grad(ia) += g.cwiseProduct(tp.value(ib));
                            if (tp.requires_grad(ib))
                              tp.grad(ib) += g.cwiseProduct(tp.value(ia));
                          })};
}

// Elementwise product with an untracked constant.
template <class S>
Var<S> cmul(Var<S> a, const std::type_identity_t<MatX<S>>& m) {
  detail::check(a.rows() == m.rows() && a.cols() == m.cols(), "cmul: shape mismatch");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  Var<S> c = constant(t, m);
  int ic = c.id;
  return {&t, t.add(a.value().cwiseProduct(m), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, ic](Tape<S>& tp, int self) {
                            tp.grad(ia) += tp.grad(self).cwiseProduct(tp.value(ic));
                          })};
}

// Elementwise addition of an untracked constant.
template <class S>
Var<S> cadd(Var<S> a, const std::type_identity_t<MatX<S>>& m) {
  detail::check(a.rows() == m.rows() && a.cols() == m.cols(), "cadd: shape mismatch");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  return {&t, t.add(a.value() + m, rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia](Tape<S>& tp, int self) {
                            tp.grad(ia) += tp.grad(self);
                          })};
}

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id, ib = b.id;
  return {&t, t.add(a.value() * b.value(), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, ib](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            if (tp.requires_grad(ia))
                              tp.grad(ia).noalias() += g * tp.value(ib).transpose();
                            if (tp.requires_grad(ib))
                              tp.grad(ib).noalias() += tp.value(ia).transpose() * g;
                          })};
}

// a * b^T
template <class S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id, ib = b.id;
  return {&t, t.add(a.value() * b.value().transpose(), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, ib](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            if (tp.requires_grad(ia))
                              tp.grad(ia).noalias() += g * tp.value(ib);
                            if (tp.requires_grad(ib))
                              tp.grad(ib).noalias() += g.transpose() * tp.value(ia);
                          })};
}

// a^T * b
template <class S>
Var<S> matmul_tn(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(a.rows() == b.rows(), "matmul_tn: inner dimension mismatch");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id, ib = b.id;
  return {&t, t.add(a.value().transpose() * b.value(), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, ib](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            if (tp.requires_grad(ia))
                              tp.grad(ia).noalias() += tp.value(ib) * g.transpose();
                            if (tp.requires_grad(ib))
                              tp.grad(ib).noalias() += tp.value(ia) * g;
                          })};
}

// y = x + b with b a 1 x d row broadcast over rows.
template <class S>
Var<S> add_rowvec(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(b.rows() == 1 && a.cols() == b.cols(), "add_rowvec: b must be 1 x cols(a)");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id, ib = b.id;
  return {&t, t.add(a.value().rowwise() + b.value().row(0), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, ib](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            if (tp.requires_grad(ia)) tp.grad(ia) += g;
                            if (tp.requires_grad(ib))
                              tp.grad(ib) += g.colwise().sum();
                          })};
}

// y = x .* gamma with gamma a 1 x d row broadcast over rows.
template <class S>
Var<S> mul_rowvec(Var<S> a, Var<S> g) {
  detail::same_tape(a, g);
  detail::check(g.rows() == 1 && a.cols() == g.cols(), "mul_rowvec: g must be 1 x cols(a)");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad() || g.requires_grad();
  int ia = a.id, ig = g.id;
  MatX<S> out = a.value().array().rowwise() * g.value().row(0).array();
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, ig](Tape<S>& tp, int self) {
                            const MatX<S>& go = tp.grad(self);
                            if (tp.requires_grad(ia))
                              tp.grad(ia).array() +=
                                  go.array().rowwise() * tp.value(ig).row(0).array();
                            if (tp.requires_grad(ig))
                              tp.grad(ig) += go.cwiseProduct(tp.value(ia)).colwise().sum();
                          })};
}

// y = x .* c with c an N x 1 column broadcast over columns.
template <class S>
Var<S> mul_colvec(Var<S> a, Var<S> c) {
  detail::same_tape(a, c);
  detail::check(c.cols() == 1 && a.rows() == c.rows(), "mul_colvec: c must be rows(a) x 1");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad() || c.requires_grad();
  int ia = a.id, ic = c.id;
  MatX<S> out = a.value().array().colwise() * c.value().col(0).array();
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, ic](Tape<S>& tp, int self) {
                            const MatX<S>& go = tp.grad(self);
                            if (tp.requires_grad(ia))
                              tp.grad(ia).array() +=
                                  go.array().colwise() * tp.value(ic).col(0).array();
                            if (tp.requires_grad(ic))
                              tp.grad(ic) += go.cwiseProduct(tp.value(ia)).rowwise().sum();
                          })};
}

template <class S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  MatX<S> out = a.value().unaryExpr([](S x) {
    return x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                     : std::exp(x) / (S(1) + std::exp(x));
  });
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia](Tape<S>& tp, int self) {
                            const MatX<S>& y = tp.value(self);
                            tp.grad(ia).array() +=
                                tp.grad(self).array() * y.array() * (S(1) - y.array());
                          })};
}

template <class S>
Var<S> tanh_op(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  MatX<S> out = a.value().array().tanh();
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia](Tape<S>& tp, int self) {
                            const auto& y = tp.value(self).array();
                            tp.grad(ia).array() += tp.grad(self).array() * (S(1) - y * y);
                          })};
}

// Exact GELU: x * Phi(x). Smooth everywhere, which keeps finite-difference
// gradient checks clean.
template <class S>
Var<S> gelu(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  const S inv_sqrt2 = S(M_SQRT1_2);
  MatX<S> out = a.value().unaryExpr([inv_sqrt2](S x) {
    return x * S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
  });
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, inv_sqrt2](Tape<S>& tp, int self) {
                            const MatX<S>& x = tp.value(ia);
                            MatX<S> d = x.unaryExpr([inv_sqrt2](S v) {
                              const S phi = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
                              const S pdf = std::exp(S(-0.5) * v * v) *
                                            S(0.3989422804014326779);
                              return phi + v * pdf;
                            });
                            tp.grad(ia) += tp.grad(self).cwiseProduct(d);
                          })};
}

template <class S>
Var<S> exp_op(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  MatX<S> out = a.value().array().exp();
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia](Tape<S>& tp, int self) {
                            tp.grad(ia) += tp.grad(self).cwiseProduct(tp.value(self));
                          })};
}

// Row-wise softmax with max subtraction.
template <class S>
Var<S> softmax_rows(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  VecX<S> m = a.value().rowwise().maxCoeff();
  MatX<S> out = (a.value().colwise() - m).array().exp();
  VecX<S> z = out.rowwise().sum();
  out.array().colwise() /= z.array();
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia](Tape<S>& tp, int self) {
                            const MatX<S>& p = tp.value(self);
                            const MatX<S>& g = tp.grad(self);
                            MatX<S> dot = g.cwiseProduct(p).rowwise().sum();
                            tp.grad(ia).array() +=
                                p.array() * (g.array().colwise() - dot.col(0).array());
                          })};
}

// Row-wise log-softmax; backward uses softmax = exp(output).
template <class S>
Var<S> log_softmax_rows(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  VecX<S> m = a.value().rowwise().maxCoeff();
  MatX<S> out = a.value().colwise() - m;
  VecX<S> lse = out.array().exp().rowwise().sum().log();
  out.colwise() -= lse;
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            MatX<S> p = tp.value(self).array().exp();
                            VecX<S> rs = g.rowwise().sum();
                            tp.grad(ia).array() +=
                                g.array() - p.array().colwise() * rs.array();
                          })};
}

// Per-row standardization (x - mean) / sqrt(var + eps), population variance.
template <class S>
Var<S> standardize_rows(Var<S> a, S eps) {
  detail::check(a.cols() >= 1, "standardize_rows: empty rows");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  const Eigen::Index d = a.cols();
  VecX<S> mu = a.value().rowwise().mean();
  MatX<S> out = a.value().colwise() - mu;
  VecX<S> inv_sd =
      (out.array().square().rowwise().sum() / S(d) + eps).sqrt().inverse();
  out.array().colwise() *= inv_sd.array();
  Var<S> isd = constant(t, MatX<S>(inv_sd));
  int iisd = isd.id;
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, iisd, d](Tape<S>& tp, int self) {
                            const MatX<S>& y = tp.value(self);
                            const MatX<S>& g = tp.grad(self);
                            const MatX<S>& is = tp.value(iisd);
                            MatX<S> gm = g.rowwise().mean();
                            MatX<S> gy = g.cwiseProduct(y).rowwise().mean();
                            MatX<S> dx =
                                (g.array().colwise() - gm.col(0).array()) -
                                y.array().colwise() * gy.col(0).array();
                            dx.array().colwise() *= is.col(0).array();
                            (void)d;
                            tp.grad(ia) += dx;
                          })};
}

template <class S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(a.rows() == b.rows(), "concat_cols: row mismatch");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id, ib = b.id;
  const Eigen::Index ca = a.cols(), cb = b.cols();
  MatX<S> out(a.rows(), ca + cb);
  out.leftCols(ca) = a.value();
  out.rightCols(cb) = b.value();
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, ib, ca, cb](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            if (tp.requires_grad(ia)) tp.grad(ia) += g.leftCols(ca);
                            if (tp.requires_grad(ib)) tp.grad(ib) += g.rightCols(cb);
                          })};
}

template <class S>
Var<S> slice_cols(Var<S> a, Eigen::Index j0, Eigen::Index n) {
  detail::check(j0 >= 0 && n >= 0 && j0 + n <= a.cols(), "slice_cols: out of range");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  return {&t, t.add(a.value().middleCols(j0, n), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, j0, n](Tape<S>& tp, int self) {
                            tp.grad(ia).middleCols(j0, n) += tp.grad(self);
                          })};
}

// Row gather: out.row(i) = a.row(idx[i]). Indices may repeat.
template <class S>
Var<S> gather_rows(Var<S> a, std::vector<int> idx) {
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  MatX<S> out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::check(idx[i] >= 0 && idx[i] < a.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, idx = std::move(idx)](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            MatX<S>& ga = tp.grad(ia);
                            for (std::size_t i = 0; i < idx.size(); ++i)
                              ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                          })};
}

// Row scatter into an n_rows x cols(a) zero matrix: out.row(idx[i]) += a.row(i).
template <class S>
Var<S> scatter_rows(Var<S> a, std::vector<int> idx, Eigen::Index n_rows) {
  detail::check(static_cast<Eigen::Index>(idx.size()) == a.rows(),
                "scatter_rows: index count must equal rows(a)");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  MatX<S> out = MatX<S>::Zero(n_rows, a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::check(idx[i] >= 0 && idx[i] < n_rows, "scatter_rows: index out of range");
    out.row(idx[i]) += a.value().row(static_cast<Eigen::Index>(i));
  }
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, idx = std::move(idx)](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            MatX<S>& ga = tp.grad(ia);
                            for (std::size_t i = 0; i < idx.size(); ++i)
                              ga.row(static_cast<Eigen::Index>(i)) += g.row(idx[i]);
                          })};
}

// Segment mean: rows of a pooled by seg id into n_segs rows. Every segment
// in [0, n_segs) must be hit by at least one row.
template <class S>
Var<S> segment_mean_rows(Var<S> a, std::vector<int> seg, Eigen::Index n_segs) {
  detail::check(static_cast<Eigen::Index>(seg.size()) == a.rows(),
                "segment_mean_rows: seg size must equal rows(a)");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  std::vector<S> inv_count(static_cast<std::size_t>(n_segs), S(0));
  for (int s : seg) {
    detail::check(s >= 0 && s < n_segs, "segment_mean_rows: seg id out of range");
    inv_count[static_cast<std::size_t>(s)] += S(1);
  }
  for (auto& c : inv_count) {
    detail::check(c > S(0), "segment_mean_rows: empty segment");
    c = S(1) / c;
  }
  MatX<S> out = MatX<S>::Zero(n_segs, a.cols());
  for (std::size_t i = 0; i < seg.size(); ++i)
    out.row(seg[i]) += a.value().row(static_cast<Eigen::Index>(i));
  for (Eigen::Index s = 0; s < n_segs; ++s)
    out.row(s) *= inv_count[static_cast<std::size_t>(s)];
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, seg = std::move(seg),
                           inv_count = std::move(inv_count)](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            MatX<S>& ga = tp.grad(ia);
                            for (std::size_t i = 0; i < seg.size(); ++i)
                              ga.row(static_cast<Eigen::Index>(i)) +=
                                  g.row(seg[i]) * inv_count[static_cast<std::size_t>(seg[i])];
                          })};
}

// out.row(i) = mean over rows nbrs[i] of a; zero row when nbrs[i] is empty.
template <class S>
Var<S> neighbor_mean_rows(Var<S> a, std::vector<std::vector<int>> nbrs) {
  detail::check(static_cast<Eigen::Index>(nbrs.size()) == a.rows(),
                "neighbor_mean_rows: list size must equal rows(a)");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  MatX<S> out = MatX<S>::Zero(a.rows(), a.cols());
  for (std::size_t i = 0; i < nbrs.size(); ++i) {
    if (nbrs[i].empty()) continue;
    for (int j : nbrs[i]) {
      detail::check(j >= 0 && j < a.rows(), "neighbor_mean_rows: index out of range");
      out.row(static_cast<Eigen::Index>(i)) += a.value().row(j);
    }
    out.row(static_cast<Eigen::Index>(i)) /= S(nbrs[i].size());
  }
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, nbrs = std::move(nbrs)](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            MatX<S>& ga = tp.grad(ia);
                            for (std::size_t i = 0; i < nbrs.size(); ++i) {
                              if (nbrs[i].empty()) continue;
                              const S w = S(1) / S(nbrs[i].size());
                              for (int j : nbrs[i])
                                ga.row(j) += g.row(static_cast<Eigen::Index>(i)) * w;
                            }
                          })};
}

// out[i, 0] = a(i, col[i])
template <class S>
Var<S> pick_per_row(Var<S> a, std::vector<int> col) {
  detail::check(static_cast<Eigen::Index>(col.size()) == a.rows(),
                "pick_per_row: col count must equal rows(a)");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  MatX<S> out(a.rows(), 1);
  for (std::size_t i = 0; i < col.size(); ++i) {
    detail::check(col[i] >= 0 && col[i] < a.cols(), "pick_per_row: column out of range");
    out(static_cast<Eigen::Index>(i), 0) =
        a.value()(static_cast<Eigen::Index>(i), col[i]);
  }
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, col = std::move(col)](Tape<S>& tp, int self) {
                            const MatX<S>& g = tp.grad(self);
                            MatX<S>& ga = tp.grad(ia);
                            for (std::size_t i = 0; i < col.size(); ++i)
                              ga(static_cast<Eigen::Index>(i), col[i]) +=
                                  g(static_cast<Eigen::Index>(i), 0);
                          })};
}

template <class S>
Var<S> sum_all(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  MatX<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia](Tape<S>& tp, int self) {
                            tp.grad(ia).array() += tp.grad(self)(0, 0);
                          })};
}

template <class S>
Var<S> mean_all(Var<S> a) {
  detail::check(a.value().size() > 0, "mean_all: empty operand");
  return scale(sum_all(a), S(1) / S(a.value().size()));
}

// ||a||_F^2 as a 1x1 scalar.
template <class S>
Var<S> frobenius_sq(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  MatX<S> out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia](Tape<S>& tp, int self) {
                            tp.grad(ia) += S(2) * tp.grad(self)(0, 0) * tp.value(ia);
                          })};
}

// Per-row mean as an N x 1 column.
template <class S>
Var<S> rowwise_mean(Var<S> a) {
  detail::check(a.cols() > 0, "rowwise_mean: empty rows");
  Tape<S>& t = *a.tape;
  const bool rg = a.requires_grad();
  int ia = a.id;
  const S inv = S(1) / S(a.cols());
  MatX<S> out = a.value().rowwise().mean();
  return {&t, t.add(std::move(out), rg, false,
                    !rg ? std::function<void(Tape<S>&, int)>()
                        : [ia, inv](Tape<S>& tp, int self) {
                            tp.grad(ia).array().colwise() +=
                                tp.grad(self).col(0).array() * inv;
                          })};
}

}  // namespace spfuse
