#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "edgekt/autograd.hpp"
#include "edgekt/errors.hpp"

namespace edgekt {

/// Named trainable tensor. The optimizer leaves parameters with
/// trainable == false bitwise untouched.
template <class Real>
struct ParameterT {
  std::string name;
  VarPtr<Real> var;  // requires_grad is always true for parameters
  bool trainable = true;

  ParameterT() = default;
  ParameterT(std::string n, TensorT<Real> v) : name(std::move(n)) {
    var = make_var(std::move(v), true);
  }

  TensorT<Real>& value() { return var->value; }
  const TensorT<Real>& value() const { return var->value; }
};

using Parameter = ParameterT<float>;

enum class OptKind { sgd_nesterov, adam };

template <class Real>
struct OptimizerT {
  OptKind kind = OptKind::sgd_nesterov;
  Real momentum = Real(0.9);
  Real weight_decay = Real(0);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
  long step_count = 0;

  static OptimizerT sgd(Real momentum, Real weight_decay) {
    OptimizerT o;
    o.kind = OptKind::sgd_nesterov;
    o.momentum = momentum;
    o.weight_decay = weight_decay;
    return o;
  }
  static OptimizerT adam_opt(Real weight_decay, Real beta1 = Real(0.9),
                             Real beta2 = Real(0.999), Real eps = Real(1e-8)) {
    OptimizerT o;
    o.kind = OptKind::adam;
    o.weight_decay = weight_decay;
    o.beta1 = beta1;
    o.beta2 = beta2;
    o.eps = eps;
    return o;
  }

  /// Applies one update with the given rate. Parameters must have had their
  /// gradients populated (zero_grad + backward); a parameter whose gradient
  /// buffer was never allocated is an error.
  void step(std::vector<ParameterT<Real>*>& params, Real lr) {
    ++step_count;
    for (ParameterT<Real>* p : params) {
      if (!p->trainable) continue;
      TensorT<Real>& w = p->var->value;
      TensorT<Real>& g = p->var->grad;
      if (g.numel() != w.numel())
        throw Error("optimizer_step: missing gradient for parameter '" + p->name + "'");
      if (kind == OptKind::sgd_nesterov) {
        TensorT<Real>& buf = state_buffer(mom_, p->name, w);
        for (std::size_t i = 0; i < w.numel(); ++i) {
          const Real d = g.data[i] + weight_decay * w.data[i];
          buf.data[i] = momentum * buf.data[i] + d;  // dampening 0
          w.data[i] -= lr * (d + momentum * buf.data[i]);
        }
      } else {
        TensorT<Real>& m = state_buffer(adam_m_, p->name, w);
        TensorT<Real>& v = state_buffer(adam_v_, p->name, w);
        const Real bc1 = Real(1) - Real(std::pow(double(beta1), double(step_count)));
        const Real bc2 = Real(1) - Real(std::pow(double(beta2), double(step_count)));
        for (std::size_t i = 0; i < w.numel(); ++i) {
          const Real d = g.data[i] + weight_decay * w.data[i];
          m.data[i] = beta1 * m.data[i] + (Real(1) - beta1) * d;
          v.data[i] = beta2 * v.data[i] + (Real(1) - beta2) * d * d;
          const Real mhat = m.data[i] / bc1;
          const Real vhat = v.data[i] / bc2;
          w.data[i] -= lr * mhat / (Real(std::sqrt(double(vhat))) + eps);
        }
      }
    }
  }

  void zero_grad(std::vector<ParameterT<Real>*>& params) {
    for (ParameterT<Real>* p : params) p->var->zero_grad();
  }

 private:
  std::unordered_map<std::string, TensorT<Real>> mom_, adam_m_, adam_v_;

  TensorT<Real>& state_buffer(std::unordered_map<std::string, TensorT<Real>>& map,
                              const std::string& name, const TensorT<Real>& like) {
    auto it = map.find(name);
    if (it == map.end())
      it = map.emplace(name, TensorT<Real>(like.n, like.c, like.h, like.w)).first;
    else if (!it->second.same_dims(like))
      throw ShapeError("optimizer state for '" + name + "' has dims " + it->second.dims_str() +
                       " but parameter is " + like.dims_str());
    return it->second;
  }
};

using Optimizer = OptimizerT<float>;

// ---------------------------------------------------------------------------
// Learning-rate schedules
// ---------------------------------------------------------------------------

enum class ScheduleKind { constant, cosine_annealing, exponential, step_drop };

struct LRSchedule {
  ScheduleKind kind = ScheduleKind::constant;
  double base_rate = 0.1;
  int total_epochs = 1;
  double decay_factor = 0.98;          // exponential
  std::vector<int> drop_epochs;        // step_drop
  double drop_factor = 0.1;            // step_drop

  static LRSchedule constant(double base, int total) {
    return {ScheduleKind::constant, base, total, 0.0, {}, 0.0};
  }
  static LRSchedule cosine(double base, int total) {
    return {ScheduleKind::cosine_annealing, base, total, 0.0, {}, 0.0};
  }
  static LRSchedule exponential(double base, int total, double factor) {
    return {ScheduleKind::exponential, base, total, factor, {}, 0.0};
  }
  static LRSchedule step_drop(double base, int total, std::vector<int> drops, double factor) {
    return {ScheduleKind::step_drop, base, total, 0.0, std::move(drops), factor};
  }

  double rate_at(int epoch) const {
    if (epoch < 0 || epoch >= total_epochs)
      throw Error("schedule_rate: epoch " + std::to_string(epoch) + " outside [0," +
                  std::to_string(total_epochs) + ")");
    switch (kind) {
      case ScheduleKind::constant:
        return base_rate;
      case ScheduleKind::cosine_annealing:
        return base_rate * 0.5 *
               (1.0 + std::cos(3.14159265358979323846 * double(epoch) / double(total_epochs)));
      case ScheduleKind::exponential:
        return base_rate * std::pow(decay_factor, double(epoch));
      case ScheduleKind::step_drop: {
        double r = base_rate;
        for (int d : drop_epochs)
          if (epoch >= d) r *= drop_factor;
        return r;
      }
    }
    return base_rate;
  }
};

}  // namespace edgekt
