#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "edgekt/autograd.hpp"

namespace edgekt {

struct FDReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked = 0;

  bool ok(double tol = 1e-4) const { return max_rel_err <= tol; }
};

/// Central-difference gradient check. `build` must construct the scalar loss
/// afresh from the given leaves on every call (the graph is rebuilt per
/// evaluation). Intended to run at Real = double; relative error uses a
/// denominator floor so near-zero gradients are judged absolutely.
template <class Real>
FDReport finite_difference_check(
    const std::vector<VarPtr<Real>>& leaves,
    const std::function<VarPtr<Real>(const std::vector<VarPtr<Real>>&)>& build,
    Real step = Real(1e-5), std::size_t max_elems_per_leaf = 0) {
  // Analytic pass.
  for (auto& leaf : leaves) leaf->zero_grad();
  VarPtr<Real> loss = build(leaves);
  backward(loss);
  std::vector<TensorT<Real>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) analytic.push_back(leaf->grad);

  FDReport rep;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    TensorT<Real>& v = leaves[li]->value;
    std::size_t count = v.numel();
    std::size_t stride = 1;
    if (max_elems_per_leaf > 0 && count > max_elems_per_leaf) {
      stride = count / max_elems_per_leaf;
      if (stride == 0) stride = 1;
    }
    for (std::size_t i = 0; i < count; i += stride) {
      const Real orig = v.data[i];
      v.data[i] = orig + step;
      const double fp = double(build(leaves)->value.data[0]);
      v.data[i] = orig - step;
      const double fm = double(build(leaves)->value.data[0]);
      v.data[i] = orig;
      const double fd = (fp - fm) / (2.0 * double(step));
      const double an = double(analytic[li].data[i]);
      const double abs_err = std::abs(an - fd);
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-3});
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
      rep.max_rel_err = std::max(rep.max_rel_err, abs_err / denom);
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace edgekt
