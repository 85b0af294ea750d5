#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "edgekt/tensor.hpp"

namespace edgekt {

/// Node in a dynamically built reverse-mode graph. Ops allocate the output
/// value eagerly and register a closure that pushes the output gradient
/// into the parents' gradients; backward() runs closures in reverse
/// topological order. Gradient buffers are allocated on first accumulation.
template <class Real>
class VarT : public std::enable_shared_from_this<VarT<Real>> {
 public:
  TensorT<Real> value;
  TensorT<Real> grad;  // empty until touched; same dims as value afterwards
  bool requires_grad = false;

  std::vector<std::shared_ptr<VarT>> parents;
  std::function<void(VarT&)> backward_fn;

  VarT() = default;
  explicit VarT(TensorT<Real> v, bool req = false)
      : value(std::move(v)), requires_grad(req) {}

  void ensure_grad() {
    if (grad.numel() != value.numel())
      grad = TensorT<Real>(value.n, value.c, value.h, value.w);
  }

  void accumulate_grad(const TensorT<Real>& g) {
    ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) grad.data[i] += g.data[i];
  }

  void zero_grad() {
    ensure_grad();
    grad.fill(Real(0));
  }
};

template <class Real>
using VarPtr = std::shared_ptr<VarT<Real>>;

template <class Real>
VarPtr<Real> make_var(TensorT<Real> v, bool requires_grad = false) {
  return std::make_shared<VarT<Real>>(std::move(v), requires_grad);
}

/// Constant leaf: a detached copy of a tensor, no gradient flow.
template <class Real>
VarPtr<Real> make_const(const TensorT<Real>& v) {
  return std::make_shared<VarT<Real>>(v, false);
}

namespace detail {

template <class Real>
void topo_visit(const VarPtr<Real>& node, std::unordered_set<const VarT<Real>*>& seen,
                std::vector<VarPtr<Real>>& order) {
  // Iterative DFS; graphs can be thousands of nodes deep across steps.
  struct Frame {
    VarPtr<Real> node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  if (seen.count(node.get())) return;
  seen.insert(node.get());
  stack.push_back({node, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      VarPtr<Real> p = f.node->parents[f.next_parent++];
      if (!seen.count(p.get())) {
        seen.insert(p.get());
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

/// Reverse-mode sweep from a scalar root. Seeds d(root)/d(root) = 1 and
/// runs each node's closure exactly once, children before parents.
template <class Real>
void backward(const VarPtr<Real>& root) {
  if (root->value.numel() != 1)
    throw ShapeError("backward: root must be scalar, got " + root->value.dims_str());
  std::unordered_set<const VarT<Real>*> seen;
  std::vector<VarPtr<Real>> order;
  detail::topo_visit(root, seen, order);
  root->ensure_grad();
  root->grad.data[0] = Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    VarT<Real>& node = **it;
    if (node.backward_fn && node.grad.numel() == node.value.numel())
      node.backward_fn(node);
  }
}

template <class Real>
bool any_requires_grad(const std::vector<VarPtr<Real>>& vars) {
  for (const auto& v : vars)
    if (v && v->requires_grad) return true;
  return false;
}

/// Wires up an op's output node: stores parents and the backward closure
/// only when some parent can receive gradient, so grad-free forward passes
/// (e.g. a frozen teacher) build no graph.
template <class Real>
VarPtr<Real> make_op_node(TensorT<Real> value, std::vector<VarPtr<Real>> parents,
                          std::function<void(VarT<Real>&)> backward_fn) {
  auto out = make_var(std::move(value));
  if (any_requires_grad(parents)) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(backward_fn);
  }
  return out;
}

}  // namespace edgekt
