// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "spfuse/rng.hpp"
#include "spfuse/tape.hpp"
#include "spfuse/types.hpp"

namespace spfuse {

// Ordered, named parameter set. Order is insertion order and is part of the
// contract: SGD updates, serialization, and digests all iterate it.
template <class S>
class ParamBundle {
 public:
  struct Item {
    std::string name;
    MatX<S> value;
  };

  void add(const std::string& name, MatX<S> value) {
    if (index_.count(name))
      throw ValidationError("params: duplicate name " + name);
    index_[name] = items_.size();
    items_.push_back({name, std::move(value)});
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const MatX<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("params: missing name " + name);
    return items_[it->second].value;
  }

  MatX<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("params: missing name " + name);
    return items_[it->second].value;
  }

  const std::vector<Item>& items() const { return items_; }
  std::vector<Item>& items() { return items_; }
  std::size_t size() const { return items_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& it : items_) n += static_cast<std::size_t>(it.value.size());
    return n;
  }

  ParamBundle zeros_like() const {
    ParamBundle z;
    for (const auto& it : items_)
      z.add(it.name, MatX<S>::Zero(it.value.rows(), it.value.cols()));
    return z;
  }

  // Group = name prefix before the first '.'.
  static std::string group_of(const std::string& name) {
    const auto dot = name.find('.');
    return dot == std::string::npos ? name : name.substr(0, dot);
  }

  // FNV-1a over names, shapes, and raw scalar bytes, in insertion order.
  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& it : items_) {
      h = fnv1a(it.name, h);
      const std::int64_t dims[2] = {it.value.rows(), it.value.cols()};
      h = fnv1a(dims, sizeof(dims), h);
      h = fnv1a(it.value.data(),
                static_cast<std::size_t>(it.value.size()) * sizeof(S), h);
    }
    return h;
  }

 private:
  std::vector<Item> items_;
  std::map<std::string, std::size_t> index_;
};

// FNV-1a digest restricted to one parameter group, for frozen-encoder audits.
template <class S>
std::uint64_t group_digest(const ParamBundle<S>& b, const std::string& group) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& it : b.items()) {
    if (ParamBundle<S>::group_of(it.name) != group) continue;
    h = fnv1a(it.name, h);
    const std::int64_t dims[2] = {it.value.rows(), it.value.cols()};
    h = fnv1a(dims, sizeof(dims), h);
    h = fnv1a(it.value.data(),
              static_cast<std::size_t>(it.value.size()) * sizeof(S), h);
  }
  return h;
}

// Distinct groups in bundle order.
template <class S>
std::vector<std::string> param_groups(const ParamBundle<S>& b) {
  std::vector<std::string> groups;
  for (const auto& it : b.items()) {
    const std::string g = ParamBundle<S>::group_of(it.name);
    if (groups.empty() || std::find(groups.begin(), groups.end(), g) == groups.end())
      groups.push_back(g);
  }
  return groups;
}

// Parameters staged on a tape as leaves. requires_grad can be suppressed per
// group (frozen encoder).
template <class S>
class TapeParams {
 public:
  TapeParams(Tape<S>& tape, const ParamBundle<S>& bundle,
             const std::vector<std::string>& frozen_groups = {}) {
    for (const auto& it : bundle.items()) {
      const std::string g = ParamBundle<S>::group_of(it.name);
      bool frozen = false;
      for (const auto& fg : frozen_groups) frozen = frozen || fg == g;
      vars_[it.name] = leaf(tape, it.value, !frozen);
    }
  }

  Var<S> at(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ValidationError("tape params: missing " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return vars_.count(name) != 0; }

  // Gradients in the bundle's order; zeros for untouched or frozen leaves.
  ParamBundle<S> grads(Tape<S>& tape, const ParamBundle<S>& bundle) const {
    ParamBundle<S> g;
    for (const auto& it : bundle.items())
      g.add(it.name, tape.leaf_grad(at(it.name).id));
    return g;
  }

 private:
  std::map<std::string, Var<S>> vars_;
};

namespace init {

template <class S>
MatX<S> glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  const double sd = std::sqrt(2.0 / static_cast<double>(rows + cols));
  MatX<S> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = S(sd * rng.normal());
  return m;
}

template <class S>
MatX<S> gauss(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sd) {
  MatX<S> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = S(sd * rng.normal());
  return m;
}

// Linear layer: weight (d_in x d_out) named p+".w", bias (1 x d_out) p+".b".
template <class S>
void linear(ParamBundle<S>& b, Rng& rng, const std::string& p, Eigen::Index d_in,
            Eigen::Index d_out, bool bias = true) {
  b.add(p + ".w", glorot<S>(rng, d_in, d_out));
  if (bias) b.add(p + ".b", MatX<S>::Zero(1, d_out));
}

// Layer norm affine: gamma p+".g" ones, beta p+".b" zeros, each 1 x d.
template <class S>
void layer_norm(ParamBundle<S>& b, const std::string& p, Eigen::Index d) {
  b.add(p + ".g", MatX<S>::Ones(1, d));
  b.add(p + ".b", MatX<S>::Zero(1, d));
}

}  // namespace init

inline constexpr double kLayerNormEps = 1e-5;

template <class S>
Var<S> linear_t(const TapeParams<S>& p, const std::string& prefix, Var<S> x) {
  Var<S> y = matmul(x, p.at(prefix + ".w"));
  if (p.has(prefix + ".b")) y = add_rowvec(y, p.at(prefix + ".b"));
  return y;
}

template <class S>
Var<S> layer_norm_t(const TapeParams<S>& p, const std::string& prefix, Var<S> x) {
  Var<S> y = standardize_rows(x, S(kLayerNormEps));
  y = mul_rowvec(y, p.at(prefix + ".g"));
  return add_rowvec(y, p.at(prefix + ".b"));
}

// Dense multi-head self-attention over the rows of x (tokens x d). Uses
// parameters prefix+".wq/.wk/.wv/.wo", each d x d, no biases.
template <class S>
Var<S> mhsa_t(const TapeParams<S>& p, const std::string& prefix, Var<S> x,
              int n_heads) {
  const Eigen::Index d = x.cols();
  if (n_heads <= 0 || d % n_heads != 0)
    throw ValidationError("mhsa: d_hidden must be divisible by n_heads");
  const Eigen::Index dh = d / n_heads;
  Var<S> q = matmul(x, p.at(prefix + ".wq"));
  Var<S> k = matmul(x, p.at(prefix + ".wk"));
  Var<S> v = matmul(x, p.at(prefix + ".wv"));
  const S inv_sqrt = S(1) / S(std::sqrt(static_cast<double>(dh)));
  Var<S> heads;
  for (int h = 0; h < n_heads; ++h) {
    Var<S> qh = slice_cols(q, h * dh, dh);
    Var<S> kh = slice_cols(k, h * dh, dh);
    Var<S> vh = slice_cols(v, h * dh, dh);
    Var<S> a = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
    Var<S> oh = matmul(a, vh);
    heads = h == 0 ? oh : concat_cols(heads, oh);
  }
  return matmul(heads, p.at(prefix + ".wo"));
}

}  // namespace spfuse
