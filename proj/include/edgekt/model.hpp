#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "edgekt/archspec.hpp"
#include "edgekt/ops.hpp"
#include "edgekt/optim.hpp"
#include "edgekt/rng.hpp"

namespace edgekt {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Thread-local switch for building backward graphs; see NoGradGuard.
inline bool& grad_mode_enabled() {
  thread_local bool on = true;
  return on;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_enabled()) { grad_mode_enabled() = false; }
  ~NoGradGuard() { grad_mode_enabled() = prev; }
};

template <class Real>
struct ForwardOptions {
  bool train = false;  // batchnorm: batch statistics + running-stat updates
  bool collect_layer_acts = false;
};

template <class Real>
struct TapRef {
  int group = 0, block = 0;  // 1-based
  VarPtr<Real> act;          // block output, post final activation
};

template <class Real>
struct LayerActRef {
  std::string name;  // "stem.conv", "groupG.blockB.convK"
  VarPtr<Real> act;  // the layer's post-activation feature map
};

template <class Real>
struct ForwardResult {
  VarPtr<Real> logits;
  std::vector<TapRef<Real>> taps;
  std::vector<LayerActRef<Real>> layer_acts;
};

/// A built network: named parameters, batchnorm running-stat buffers, and
/// the forward pass. Single-owner; not copyable (clone() rebuilds).
template <class Real>
class ModelT {
 public:
  ModelT(const ModelT&) = delete;
  ModelT& operator=(const ModelT&) = delete;
  ModelT(ModelT&&) = default;
  ModelT& operator=(ModelT&&) = default;

  explicit ModelT(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    shapes_ = propagate_shapes(spec_);  // throws ConfigError on a bad spec
    build(seed);
  }

  const NetworkSpec& spec() const { return spec_; }

  std::vector<ParameterT<Real>*> parameters() {
    std::vector<ParameterT<Real>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  ParameterT<Real>* param(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::map<std::string, TensorT<Real>>& buffers() { return buffers_; }
  const std::map<std::string, TensorT<Real>>& buffers() const { return buffers_; }

  long long param_scalar_count() const {
    long long total = 0;
    for (const auto& p : params_) total += static_cast<long long>(p->var->value.numel());
    return total;
  }

  void set_all_trainable(bool trainable) {
    for (auto& p : params_) p->trainable = trainable;
  }

  void zero_grad() {
    for (auto& p : params_) p->var->zero_grad();
  }

  /// Copies parameter values and buffers from another model with an
  /// identical spec (used by checkpoint load and cloning).
  void copy_state_from(const ModelT& other) {
    if (!(other.spec_ == spec_)) throw ConfigError("copy_state_from: spec mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i)
      params_[i]->var->value = other.params_[i]->var->value;
    buffers_ = other.buffers_;
  }

  ModelT clone() const {
    ModelT m(spec_, 0);
    m.copy_state_from(*this);
    return m;
  }

  /// Value snapshot of all parameters and buffers (for best-epoch restore).
  struct Snapshot {
    std::vector<TensorT<Real>> params;
    std::map<std::string, TensorT<Real>> buffers;
  };

  Snapshot snapshot() const {
    Snapshot s;
    s.params.reserve(params_.size());
    for (const auto& p : params_) s.params.push_back(p->var->value);
    s.buffers = buffers_;
    return s;
  }

  void restore(const Snapshot& s) {
    if (s.params.size() != params_.size())
      throw ConfigError("restore: snapshot does not match this model");
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->var->value = s.params[i];
    buffers_ = s.buffers;
  }

  /// Static tap description: one (group, block) entry per block, in
  /// (group, block) lexicographic order.
  std::vector<std::pair<int, int>> tap_points() const {
    std::vector<std::pair<int, int>> out;
    for (std::size_t gi = 0; gi < spec_.groups.size(); ++gi)
      for (std::size_t bi = 0; bi < spec_.groups[gi].blocks.size(); ++bi)
        out.emplace_back(int(gi + 1), int(bi + 1));
    return out;
  }

  ForwardResult<Real> forward(const TensorT<Real>& input, const ForwardOptions<Real>& opts = {}) {
    if (input.c != spec_.input_channels)
      throw ShapeError("forward: input " + input.dims_str() + " vs spec input_channels " +
                       std::to_string(spec_.input_channels));
    ForwardResult<Real> result;
    VarPtr<Real> x = make_const(input);

    x = run_layer(stem_, x, opts, result);
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      for (std::size_t bi = 0; bi < groups_[gi].blocks.size(); ++bi) {
        x = run_block(groups_[gi].blocks[bi], x, opts, result);
        result.taps.push_back({int(gi + 1), int(bi + 1), x});
      }
    }
    auto pooled = global_avg_pool(x);
    result.logits = fully_connected(pooled, fc_weight_->var, fc_bias_->var);
    return result;
  }

  /// Grad-free eval-mode class predictions.
  std::vector<int> predict(const TensorT<Real>& input) {
    NoGradGuard ng;
    ForwardOptions<Real> opts;  // eval mode
    auto res = forward(input, opts);
    return argmax_rows(res.logits->value);
  }

 private:
  struct BuiltLayer {
    ConvLayerSpec cfg;
    ParameterT<Real>* weight = nullptr;
    ParameterT<Real>* bn_scale = nullptr;
    ParameterT<Real>* bn_shift = nullptr;
    std::string bn_prefix;  // empty when no batchnorm
    std::string act_name;   // pruning-map name
  };
  struct BuiltBlock {
    BlockKind kind = BlockKind::plain;
    ShortcutKind shortcut = ShortcutKind::identity;
    std::vector<BuiltLayer> layers;
    ParameterT<Real>* proj_weight = nullptr;
    ParameterT<Real>* proj_bn_scale = nullptr;
    ParameterT<Real>* proj_bn_shift = nullptr;
    std::string proj_bn_prefix;
    int proj_stride = 1;
  };
  struct BuiltGroup {
    std::vector<BuiltBlock> blocks;
  };

  NetworkSpec spec_;
  std::vector<LayerShape> shapes_;
  std::vector<std::unique_ptr<ParameterT<Real>>> params_;
  std::map<std::string, TensorT<Real>> buffers_;
  BuiltLayer stem_;
  std::vector<BuiltGroup> groups_;
  ParameterT<Real>* fc_weight_ = nullptr;
  ParameterT<Real>* fc_bias_ = nullptr;
  std::uint64_t seed_ = 0;

  ParameterT<Real>* add_param(const std::string& name, TensorT<Real> init) {
    params_.push_back(std::make_unique<ParameterT<Real>>(name, std::move(init)));
    return params_.back().get();
  }

  TensorT<Real> he_uniform(int n, int c, int h, int w, int fan_in, const std::string& name) {
    TensorT<Real> t(n, c, h, w);
    Rng rng(mix_seed(seed_, fnv1a(name)));
    const double bound = std::sqrt(6.0 / double(fan_in));
    for (auto& v : t.data) v = Real(rng.uniform(-bound, bound));
    return t;
  }

  void add_bn(const std::string& prefix, int channels, BuiltLayer& layer) {
    TensorT<Real> ones(channels, 1, 1, 1), zeros(channels, 1, 1, 1), var(channels, 1, 1, 1);
    ones.fill(Real(1));
    var.fill(Real(1));
    layer.bn_scale = add_param(prefix + ".scale", std::move(ones));
    layer.bn_shift = add_param(prefix + ".shift", std::move(zeros));
    layer.bn_prefix = prefix;
    buffers_[prefix + ".running_mean"] = TensorT<Real>(channels, 1, 1, 1);
    buffers_[prefix + ".running_var"] = std::move(var);
  }

  BuiltLayer build_layer(const ConvLayerSpec& cfg, int in_c, const std::string& conv_name,
                         const std::string& bn_name) {
    BuiltLayer layer;
    layer.cfg = cfg;
    layer.act_name = conv_name;
    layer.weight = add_param(conv_name + ".weight",
                             he_uniform(cfg.out_channels, in_c, cfg.kernel_h, cfg.kernel_w,
                                        in_c * cfg.kernel_h * cfg.kernel_w, conv_name + ".weight"));
    if (cfg.has_batchnorm) add_bn(bn_name, cfg.out_channels, layer);
    return layer;
  }

  void build(std::uint64_t seed) {
    seed_ = seed;
    std::size_t si = 0;
    stem_ = build_layer(spec_.stem, shapes_[si++].in_channels, "stem.conv", "stem.bn");
    for (std::size_t gi = 0; gi < spec_.groups.size(); ++gi) {
      BuiltGroup group;
      for (std::size_t bi = 0; bi < spec_.groups[gi].blocks.size(); ++bi) {
        const BlockSpec& bspec = spec_.groups[gi].blocks[bi];
        BuiltBlock block;
        block.kind = bspec.kind;
        block.shortcut = bspec.shortcut;
        const std::string bname =
            "group" + std::to_string(gi + 1) + ".block" + std::to_string(bi + 1);
        const int block_in_c = shapes_[si].in_channels;
        int stride_prod = 1;
        for (std::size_t li = 0; li < bspec.layers.size(); ++li) {
          block.layers.push_back(build_layer(bspec.layers[li], shapes_[si].in_channels,
                                             bname + ".conv" + std::to_string(li + 1),
                                             bname + ".bn" + std::to_string(li + 1)));
          stride_prod *= bspec.layers[li].stride;
          ++si;
        }
        if (bspec.kind == BlockKind::residual && bspec.shortcut == ShortcutKind::projection) {
          const int out_c = bspec.layers.back().out_channels;
          block.proj_stride = stride_prod;
          block.proj_weight = add_param(bname + ".shortcut.weight",
                                        he_uniform(out_c, block_in_c, 1, 1, block_in_c,
                                                   bname + ".shortcut.weight"));
          if (bspec.layers.back().has_batchnorm) {
            BuiltLayer tmp;
            add_bn(bname + ".shortcut_bn", out_c, tmp);
            block.proj_bn_scale = tmp.bn_scale;
            block.proj_bn_shift = tmp.bn_shift;
            block.proj_bn_prefix = tmp.bn_prefix;
          }
        }
        group.blocks.push_back(std::move(block));
      }
      groups_.push_back(std::move(group));
    }
    const int feat = spec_.groups.back().blocks.back().layers.back().out_channels;
    fc_weight_ = add_param("head.fc.weight",
                           he_uniform(spec_.class_count, feat, 1, 1, feat, "head.fc.weight"));
    fc_bias_ = add_param("head.fc.bias", TensorT<Real>(spec_.class_count, 1, 1, 1));
  }

  VarPtr<Real> apply_bn(const BuiltLayer& layer, const VarPtr<Real>& x,
                        const ForwardOptions<Real>& opts) {
    return batchnorm(x, layer.bn_scale->var, layer.bn_shift->var,
                     buffers_.at(layer.bn_prefix + ".running_mean"),
                     buffers_.at(layer.bn_prefix + ".running_var"), opts.train);
  }

  /// Conv -> bn -> activation for one layer; records the post-activation map
  /// unless the layer defers its activation to the block (residual tail).
  VarPtr<Real> run_layer(const BuiltLayer& layer, const VarPtr<Real>& x,
                         const ForwardOptions<Real>& opts, ForwardResult<Real>& result,
                         bool defer_activation_map = false) {
    VarPtr<Real> h = conv2d(x, layer.weight->var, layer.cfg.stride, layer.cfg.padding);
    if (layer.cfg.has_batchnorm) h = apply_bn(layer, h, opts);
    if (layer.cfg.activation == Activation::relu) h = relu(h);
    if (opts.collect_layer_acts && !defer_activation_map)
      result.layer_acts.push_back({layer.act_name, h});
    return h;
  }

  VarPtr<Real> run_block(const BuiltBlock& block, const VarPtr<Real>& x,
                         const ForwardOptions<Real>& opts, ForwardResult<Real>& result) {
    if (block.kind == BlockKind::plain) {
      VarPtr<Real> h = x;
      for (const auto& layer : block.layers) h = run_layer(layer, h, opts, result);
      return h;
    }
    VarPtr<Real> h = x;
    for (std::size_t li = 0; li < block.layers.size(); ++li) {
      const bool last = li + 1 == block.layers.size();
      h = run_layer(block.layers[li], h, opts, result, /*defer_activation_map=*/last);
    }
    VarPtr<Real> shortcut = x;
    if (block.shortcut == ShortcutKind::projection) {
      shortcut = conv2d(x, block.proj_weight->var, block.proj_stride, 0);
      if (block.proj_bn_scale) {
        BuiltLayer tmp;
        tmp.bn_scale = block.proj_bn_scale;
        tmp.bn_shift = block.proj_bn_shift;
        tmp.bn_prefix = block.proj_bn_prefix;
        shortcut = apply_bn(tmp, shortcut, opts);
      }
    }
    VarPtr<Real> out = relu(residual_add(h, shortcut));
    if (opts.collect_layer_acts)
      result.layer_acts.push_back({block.layers.back().act_name, out});
    return out;
  }
};

using Model = ModelT<float>;

}  // namespace edgekt
