// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "spfuse/rng.hpp"
#include "spfuse/tape.hpp"
#include "spfuse/types.hpp"

namespace spfuse::testutil {

inline MatXd random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
  MatXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = s * rng.normal();
  return m;
}

// Builder maps staged leaves to a 1x1 scalar on the given tape.
using ScalarBuilder =
    std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct FdResult {
  double max_rel = 0.0;
  double max_abs = 0.0;
};

inline double eval_scalar(const ScalarBuilder& build, const std::vector<MatXd>& xs) {
  Tape<double> t;
  std::vector<Var<double>> vars;
  vars.reserve(xs.size());
  for (const auto& x : xs) vars.push_back(leaf(t, x));
  return build(t, vars).value()(0, 0);
}

// Central finite differences against tape gradients, coordinate by coordinate.
inline FdResult fd_check(const ScalarBuilder& build, std::vector<MatXd> xs,
                         double h = 1e-6) {
  std::vector<MatXd> analytic;
  {
    Tape<double> t;
    std::vector<Var<double>> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(leaf(t, x));
    Var<double> y = build(t, vars);
    t.backward(y.id);
    for (const auto& v : vars) analytic.push_back(t.leaf_grad(v.id));
  }
  FdResult res;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (Eigen::Index j = 0; j < xs[k].cols(); ++j) {
      for (Eigen::Index i = 0; i < xs[k].rows(); ++i) {
        const double orig = xs[k](i, j);
        xs[k](i, j) = orig + h;
        const double fp = eval_scalar(build, xs);
        xs[k](i, j) = orig - h;
        const double fm = eval_scalar(build, xs);
        xs[k](i, j) = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = analytic[k](i, j);
        const double abs_err = std::abs(a - fd);
        const double rel =
            abs_err / std::max({1e-6, std::abs(a), std::abs(fd)});
        res.max_abs = std::max(res.max_abs, abs_err);
        res.max_rel = std::max(res.max_rel, rel);
      }
    }
  }
  return res;
}

}  // namespace spfuse::testutil
