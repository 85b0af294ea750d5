#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "edgekt/data.hpp"
#include "edgekt/model.hpp"

namespace edgekt {

struct PruningConfig {
  double threshold = 0.9;  // prunable when zero fraction >= threshold
  int sample_count = 128;  // images averaged over
  std::uint64_t calibration_seed = 0;

  void validate() const {
    if (threshold < 0.0 || threshold > 1.0)
      throw ConfigError("pruning threshold must lie in [0,1]");
    if (sample_count < 1) throw ConfigError("pruning sample_count must be >= 1");
  }
};

struct LayerSparsity {
  std::string layer;   // activation-map name, e.g. "group1.block2.conv1"
  int filter_count = 0;
  double avg_prunable = 0.0;
  int reduced_width = 1;  // max(1, filter_count - floor(avg_prunable))
  std::vector<std::vector<double>> fractions;  // [image][filter] zero fractions
};

struct SparsityReport {
  std::vector<LayerSparsity> layers;

  const LayerSparsity* find(const std::string& name) const {
    for (const auto& l : layers)
      if (l.layer == name) return &l;
    return nullptr;
  }
};

/// Exact fraction of elements equal to zero in one filter's map. Relu emits
/// exact zeros, so the comparison is exact, no epsilon.
template <class Real>
double filter_zero_fraction(const Real* map, std::size_t count) {
  if (count == 0) throw ShapeError("filter_zero_fraction: empty map");
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < count; ++i)
    if (map[i] == Real(0)) ++zeros;
  return double(zeros) / double(count);
}

template <class Real>
double filter_zero_fraction(const TensorT<Real>& act, int sample, int filter) {
  const std::size_t hw = std::size_t(act.h) * act.w;
  return filter_zero_fraction(act.data.data() + (std::size_t(sample) * act.c + filter) * hw, hw);
}

/// Number of filters in one image's post-activation maps whose zero
/// fraction reaches the threshold.
template <class Real>
int count_prunable(const TensorT<Real>& act, int sample, double threshold) {
  int n = 0;
  for (int j = 0; j < act.c; ++j)
    if (filter_zero_fraction(act, sample, j) >= threshold) ++n;
  return n;
}

namespace detail {

inline int reduced_width_of(int filters, double avg_prunable) {
  const int w = filters - int(std::floor(avg_prunable));
  return w < 1 ? 1 : w;
}

}  // namespace detail

/// Runs eval-mode forward passes over `sample_count` seed-selected images
/// and averages, per conv layer, how many filters are prunable at the
/// threshold. Model parameters and running stats are untouched.
template <class Real>
SparsityReport average_prunable(ModelT<Real>& model, const Dataset& ds,
                                const PruningConfig& config) {
  config.validate();
  if (int(ds.images.size()) < config.sample_count)
    throw ConfigError("average_prunable: dataset has " + std::to_string(ds.images.size()) +
                      " images, need " + std::to_string(config.sample_count));
  std::vector<int> order(ds.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  Rng rng(mix_seed(config.calibration_seed, 0xca11b));
  rng.shuffle(order);
  order.resize(std::size_t(config.sample_count));

  SparsityReport report;
  std::map<std::string, std::size_t> layer_index;
  NoGradGuard ng;
  const int chunk = 32;
  for (std::size_t begin = 0; begin < order.size(); begin += chunk) {
    const std::size_t end = std::min(order.size(), begin + chunk);
    std::vector<int> idx(order.begin() + std::ptrdiff_t(begin),
                         order.begin() + std::ptrdiff_t(end));
    Batch batch = make_batch(ds, idx, 0, nullptr);  // standardized, unaugmented
    ForwardOptions<Real> opts;
    opts.collect_layer_acts = true;
    auto res = model.forward(batch.input.template cast<Real>(), opts);
    for (const auto& la : res.layer_acts) {
      auto [it, fresh] = layer_index.try_emplace(la.name, report.layers.size());
      if (fresh) {
        LayerSparsity ls;
        ls.layer = la.name;
        ls.filter_count = la.act->value.c;
        report.layers.push_back(std::move(ls));
      }
      LayerSparsity& ls = report.layers[it->second];
      for (int s = 0; s < la.act->value.n; ++s) {
        std::vector<double> fracs(std::size_t(ls.filter_count));
        for (int j = 0; j < ls.filter_count; ++j)
          fracs[std::size_t(j)] = filter_zero_fraction(la.act->value, s, j);
        ls.fractions.push_back(std::move(fracs));
      }
    }
  }
  for (auto& ls : report.layers) {
    double total = 0.0;
    for (const auto& fracs : ls.fractions) {
      int cnt = 0;
      for (double f : fracs)
        if (f >= config.threshold) ++cnt;
      total += double(cnt);
    }
    ls.avg_prunable = total / double(ls.fractions.size());
    ls.reduced_width = detail::reduced_width_of(ls.filter_count, ls.avg_prunable);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Structural reductions
// ---------------------------------------------------------------------------

/// Keeps only the last block of every group. The retained block absorbs the
/// group's entry stride so per-group output resolutions are preserved, and
/// its shortcut becomes a projection when channels or stride demand one.
inline NetworkSpec reduce_depth(const NetworkSpec& teacher) {
  validate_spec(teacher);
  NetworkSpec out = teacher;
  int prev_channels = teacher.stem.out_channels;
  for (auto& group : out.groups) {
    int entry_stride = 1;
    for (const auto& l : group.blocks.front().layers) entry_stride *= l.stride;
    BlockSpec kept = group.blocks.back();
    if (group.blocks.size() > 1) kept.layers.front().stride = entry_stride;
    if (kept.kind == BlockKind::residual) {
      int stride_prod = 1;
      for (const auto& l : kept.layers) stride_prod *= l.stride;
      const int out_channels = kept.layers.back().out_channels;
      kept.shortcut = (prev_channels != out_channels || stride_prod != 1)
                          ? ShortcutKind::projection
                          : ShortcutKind::identity;
    }
    prev_channels = kept.layers.back().out_channels;
    group.blocks = {std::move(kept)};
  }
  validate_spec(out);
  return out;
}

/// Applies the width rule w = max(1, n - floor(avg_prunable)) to every conv
/// layer of the shallow spec. Report entries must match the spec's layer
/// names and widths exactly; shortcut kinds are recomputed afterwards.
inline NetworkSpec reduce_width(const NetworkSpec& shallow, const SparsityReport& report) {
  NetworkSpec out = shallow;
  auto apply = [&report](ConvLayerSpec& layer, const std::string& name) {
    const LayerSparsity* ls = report.find(name);
    if (ls == nullptr)
      throw ConfigError("reduce_width: report has no entry for layer '" + name + "'");
    if (ls->filter_count != layer.out_channels)
      throw ConfigError("reduce_width: report lists " + std::to_string(ls->filter_count) +
                        " filters for '" + name + "' but the spec has " +
                        std::to_string(layer.out_channels));
    layer.out_channels = detail::reduced_width_of(layer.out_channels, ls->avg_prunable);
  };
  apply(out.stem, "stem.conv");
  for (std::size_t gi = 0; gi < out.groups.size(); ++gi)
    for (std::size_t bi = 0; bi < out.groups[gi].blocks.size(); ++bi) {
      auto& block = out.groups[gi].blocks[bi];
      for (std::size_t li = 0; li < block.layers.size(); ++li)
        apply(block.layers[li], "group" + std::to_string(gi + 1) + ".block" +
                                    std::to_string(bi + 1) + ".conv" + std::to_string(li + 1));
    }
  // Width changes can break identity shortcuts; recompute kinds.
  int prev_channels = out.stem.out_channels;
  for (auto& group : out.groups)
    for (auto& block : group.blocks) {
      if (block.kind == BlockKind::residual) {
        int stride_prod = 1;
        for (const auto& l : block.layers) stride_prod *= l.stride;
        block.shortcut = (prev_channels != block.layers.back().out_channels || stride_prod != 1)
                             ? ShortcutKind::projection
                             : ShortcutKind::identity;
      }
      prev_channels = block.layers.back().out_channels;
    }
  validate_spec(out);
  return out;
}

struct CompressionResult {
  NetworkSpec student;
  SparsityReport teacher_report;  // covers every teacher conv layer
  double ratio = 1.0;
};

/// Full pipeline: depth reduction, sparsity statistics on the teacher, then
/// width reduction of the retained layers. The student is a fresh spec; its
/// parameters are meant to be re-initialized and retrained.
template <class Real>
CompressionResult compress(ModelT<Real>& teacher, const Dataset& ds,
                           const PruningConfig& config) {
  const NetworkSpec shallow = reduce_depth(teacher.spec());
  SparsityReport full = average_prunable(teacher, ds, config);

  // The retained layers keep their teacher identities: student layer
  // (g, 1, k) measures what teacher layer (g, last, k) measured.
  SparsityReport retained;
  auto take = [&](const std::string& teacher_name, const std::string& student_name) {
    const LayerSparsity* ls = full.find(teacher_name);
    if (ls == nullptr)
      throw ConfigError("compress: teacher report is missing layer '" + teacher_name + "'");
    LayerSparsity copy = *ls;
    copy.layer = student_name;
    retained.layers.push_back(std::move(copy));
  };
  take("stem.conv", "stem.conv");
  for (std::size_t gi = 0; gi < teacher.spec().groups.size(); ++gi) {
    const std::size_t last = teacher.spec().groups[gi].blocks.size();
    const auto& block = teacher.spec().groups[gi].blocks[last - 1];
    for (std::size_t li = 0; li < block.layers.size(); ++li) {
      const std::string g = std::to_string(gi + 1), k = std::to_string(li + 1);
      take("group" + g + ".block" + std::to_string(last) + ".conv" + k,
           "group" + g + ".block1.conv" + k);
    }
  }

  CompressionResult result;
  result.student = reduce_width(shallow, retained);
  result.student.name = teacher.spec().name + "-student";
  result.teacher_report = std::move(full);
  result.ratio = compression_ratio(teacher.spec(), result.student);
  return result;
}

/// Line-oriented export: `layer=<name> n=<int> avgc=<real> w=<int>`, plus an
/// optional per-filter fraction dump (the numeric stand-in for an
/// activation-map visualization).
inline std::string format_sparsity_report(const SparsityReport& report,
                                          bool with_fractions = false) {
  std::string out;
  char buf[160];
  for (const auto& ls : report.layers) {
    std::snprintf(buf, sizeof buf, "layer=%s n=%d avgc=%.6f w=%d\n", ls.layer.c_str(),
                  ls.filter_count, ls.avg_prunable, ls.reduced_width);
    out += buf;
    if (with_fractions) {
      for (std::size_t m = 0; m < ls.fractions.size(); ++m) {
        std::snprintf(buf, sizeof buf, "  image=%zu fractions=", m);
        out += buf;
        for (std::size_t j = 0; j < ls.fractions[m].size(); ++j) {
          std::snprintf(buf, sizeof buf, "%s%.4f", j ? "," : "", ls.fractions[m][j]);
          out += buf;
        }
        out += "\n";
      }
    }
  }
  return out;
}

}  // namespace edgekt
