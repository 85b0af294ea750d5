#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "edgekt/errors.hpp"

namespace edgekt {

enum class Activation { relu, none };
enum class BlockKind { residual, plain };
enum class ShortcutKind { identity, projection };

/// One convolution layer. Conv layers carry no bias; batchnorm's shift plays
/// that role when present.
struct ConvLayerSpec {
  int out_channels = 1;
  int kernel_h = 3, kernel_w = 3;
  int stride = 1;
  int padding = 1;
  bool has_batchnorm = true;
  Activation activation = Activation::relu;

  bool operator==(const ConvLayerSpec&) const = default;
};

/// A block: residual (layer chain + shortcut + post-add relu) or plain
/// (layer chain only). Residual blocks must end in an activation-free layer;
/// the block-level relu follows the skip join.
struct BlockSpec {
  std::vector<ConvLayerSpec> layers;
  BlockKind kind = BlockKind::residual;
  ShortcutKind shortcut = ShortcutKind::identity;

  bool operator==(const BlockSpec&) const = default;
};

struct GroupSpec {
  std::vector<BlockSpec> blocks;
  bool downsample_at_entry = false;

  bool operator==(const GroupSpec&) const = default;
};

/// Grouped network: stem conv, groups of blocks, global-pool + fc head.
struct NetworkSpec {
  std::string name = "net";
  int input_channels = 3;
  int input_size = 32;
  ConvLayerSpec stem;
  std::vector<GroupSpec> groups;
  int class_count = 2;

  bool operator==(const NetworkSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Shape propagation & validation
// ---------------------------------------------------------------------------

namespace detail {

inline int layer_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

/// Resolved per-layer geometry for one conv layer position in a network.
struct LayerShape {
  int group = 0, block = 0, layer = 0;  // 1-based; group 0 == stem
  int in_channels = 0, out_channels = 0;
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
};

inline std::string layer_shape_name(const LayerShape& s) {
  if (s.group == 0) return "stem.conv";
  return "group" + std::to_string(s.group) + ".block" + std::to_string(s.block) + ".conv" +
         std::to_string(s.layer);
}

/// Walks the spec front to back resolving channel/spatial chains; throws
/// ConfigError naming the offending layer when the chain is inconsistent.
/// Projection shortcut layers are not listed (their geometry is implied).
inline std::vector<LayerShape> propagate_shapes(const NetworkSpec& spec) {
  auto fail = [](const std::string& where, const std::string& why) {
    throw ConfigError("invalid network spec at " + where + ": " + why);
  };
  if (spec.class_count < 2) fail("head", "class_count must be >= 2");
  if (spec.input_channels < 1 || spec.input_size < 1)
    fail("net", "input_channels and input_size must be positive");
  if (spec.groups.empty()) fail("net", "at least one group required");

  std::vector<LayerShape> shapes;
  auto apply_layer = [&](const ConvLayerSpec& l, int g, int b, int k, int in_c, int in_h,
                         int in_w) -> LayerShape {
    const std::string where = g == 0 ? "stem" : ("group." + std::to_string(g) + ".block." +
                                                 std::to_string(b) + ".layer." + std::to_string(k));
    if (l.out_channels < 1) fail(where, "out_channels must be >= 1");
    if (l.kernel_h < 1 || l.kernel_w < 1 || l.stride < 1 || l.padding < 0)
      fail(where, "kernel/stride/padding out of range");
    const int oh = detail::layer_out_extent(in_h, l.kernel_h, l.stride, l.padding);
    const int ow = detail::layer_out_extent(in_w, l.kernel_w, l.stride, l.padding);
    if (oh < 1 || ow < 1) fail(where, "kernel does not fit the incoming feature map");
    return {g, b, k, in_c, l.out_channels, in_h, in_w, oh, ow};
  };

  LayerShape cur = apply_layer(spec.stem, 0, 0, 0, spec.input_channels, spec.input_size,
                               spec.input_size);
  shapes.push_back(cur);
  int ch = spec.stem.out_channels, sh = cur.out_h, sw = cur.out_w;

  for (std::size_t gi = 0; gi < spec.groups.size(); ++gi) {
    const GroupSpec& group = spec.groups[gi];
    const std::string gwhere = "group." + std::to_string(gi + 1);
    if (group.blocks.empty()) fail(gwhere, "at least one block required");
    int group_out_h = -1, group_out_w = -1;
    for (std::size_t bi = 0; bi < group.blocks.size(); ++bi) {
      const BlockSpec& block = group.blocks[bi];
      const std::string bwhere = gwhere + ".block." + std::to_string(bi + 1);
      if (block.layers.empty()) fail(bwhere, "at least one layer required");
      const int block_in_c = ch, block_in_h = sh, block_in_w = sw;
      for (std::size_t li = 0; li < block.layers.size(); ++li) {
        cur = apply_layer(block.layers[li], int(gi + 1), int(bi + 1), int(li + 1), ch, sh, sw);
        shapes.push_back(cur);
        ch = cur.out_channels;
        sh = cur.out_h;
        sw = cur.out_w;
      }
      if (block.kind == BlockKind::residual) {
        if (block.layers.back().activation != Activation::none)
          fail(bwhere, "residual block's last layer must use activation = none");
        if (block.shortcut == ShortcutKind::identity) {
          if (block_in_c != ch)
            fail(bwhere, "identity shortcut joins " + std::to_string(block_in_c) + " and " +
                             std::to_string(ch) + " channels; use a projection shortcut");
          if (block_in_h != sh || block_in_w != sw)
            fail(bwhere, "identity shortcut across a spatial change; use a projection shortcut");
        } else {
          // 1x1 projection with the block's cumulative stride must land on
          // the main path's output extents.
          int stride_prod = 1;
          for (const auto& l : block.layers) stride_prod *= l.stride;
          const int ph = detail::layer_out_extent(block_in_h, 1, stride_prod, 0);
          const int pw = detail::layer_out_extent(block_in_w, 1, stride_prod, 0);
          if (ph != sh || pw != sw)
            fail(bwhere, "projection shortcut output " + std::to_string(ph) + "x" +
                             std::to_string(pw) + " does not match main path " +
                             std::to_string(sh) + "x" + std::to_string(sw));
        }
      }
      if (bi == 0) {
        if (!group.downsample_at_entry && (sh != block_in_h || sw != block_in_w))
          fail(bwhere, "block changes resolution but downsample_at_entry is false");
      } else if (sh != group_out_h || sw != group_out_w) {
        fail(bwhere, "blocks within a group must produce one spatial resolution");
      }
      group_out_h = sh;
      group_out_w = sw;
    }
  }
  return shapes;
}

inline void validate_spec(const NetworkSpec& spec) { propagate_shapes(spec); }

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

namespace detail {

inline long long conv_layer_params(const ConvLayerSpec& l, int in_c) {
  long long n = 1LL * l.out_channels * in_c * l.kernel_h * l.kernel_w;
  if (l.has_batchnorm) n += 2LL * l.out_channels;  // scale + shift
  return n;
}

}  // namespace detail

/// Exact scalar-parameter count: conv weights, batchnorm scale/shift, fc
/// weight and bias. Conv layers are biasless by construction.
inline long long count_params(const NetworkSpec& spec) {
  const auto shapes = propagate_shapes(spec);
  long long total = 0;
  std::size_t si = 0;
  total += detail::conv_layer_params(spec.stem, shapes[si++].in_channels);
  for (const auto& group : spec.groups)
    for (const auto& block : group.blocks) {
      const int block_in_c = shapes[si].in_channels;
      for (const auto& layer : block.layers)
        total += detail::conv_layer_params(layer, shapes[si++].in_channels);
      if (block.kind == BlockKind::residual && block.shortcut == ShortcutKind::projection) {
        const int out_c = block.layers.back().out_channels;
        total += 1LL * out_c * block_in_c;  // 1x1 projection
        if (block.layers.back().has_batchnorm) total += 2LL * out_c;
      }
    }
  const int feat = spec.groups.back().blocks.back().layers.back().out_channels;
  total += 1LL * spec.class_count * feat + spec.class_count;  // fc weight + bias
  return total;
}

inline double compression_ratio(const NetworkSpec& teacher, const NetworkSpec& student) {
  const long long t = count_params(teacher), s = count_params(student);
  if (s <= 0) throw ConfigError("compression_ratio: student has no parameters");
  return double(t) / double(s);
}

/// Display form used in reports: "25x" for ratio 25.507.
inline std::string format_ratio(double ratio) {
  return std::to_string(static_cast<long long>(ratio)) + "x";
}

// ---------------------------------------------------------------------------
// Canonical text form
// ---------------------------------------------------------------------------
//
// Line-oriented `key = value` under [section] headers. Sections, in order:
//   [net]                          name, input_channels, input_size
//   [stem]                         out_channels, kernel, stride, padding,
//                                  batchnorm, activation
//   [group.N]                      downsample_at_entry
//   [group.N.block.M]              kind, shortcut (residual blocks only)
//   [group.N.block.M.layer.K]      same keys as [stem]
//   [head]                         class_count
// Indices are 1-based and contiguous. `#` starts a comment. Unknown
// sections or keys are errors.

namespace detail {

inline std::string activation_str(Activation a) { return a == Activation::relu ? "relu" : "none"; }

inline void write_layer(std::ostringstream& os, const ConvLayerSpec& l) {
  os << "out_channels = " << l.out_channels << "\n";
  os << "kernel = " << l.kernel_h << "x" << l.kernel_w << "\n";
  os << "stride = " << l.stride << "\n";
  os << "padding = " << l.padding << "\n";
  os << "batchnorm = " << (l.has_batchnorm ? "true" : "false") << "\n";
  os << "activation = " << activation_str(l.activation) << "\n";
}

}  // namespace detail

inline std::string serialize_spec(const NetworkSpec& spec) {
  std::ostringstream os;
  os << "[net]\n";
  os << "name = " << spec.name << "\n";
  os << "input_channels = " << spec.input_channels << "\n";
  os << "input_size = " << spec.input_size << "\n";
  os << "\n[stem]\n";
  detail::write_layer(os, spec.stem);
  for (std::size_t gi = 0; gi < spec.groups.size(); ++gi) {
    const auto& group = spec.groups[gi];
    os << "\n[group." << (gi + 1) << "]\n";
    os << "downsample_at_entry = " << (group.downsample_at_entry ? "true" : "false") << "\n";
    for (std::size_t bi = 0; bi < group.blocks.size(); ++bi) {
      const auto& block = group.blocks[bi];
      os << "\n[group." << (gi + 1) << ".block." << (bi + 1) << "]\n";
      os << "kind = " << (block.kind == BlockKind::residual ? "residual" : "plain") << "\n";
      if (block.kind == BlockKind::residual)
        os << "shortcut = "
           << (block.shortcut == ShortcutKind::identity ? "identity" : "projection") << "\n";
      for (std::size_t li = 0; li < block.layers.size(); ++li) {
        os << "\n[group." << (gi + 1) << ".block." << (bi + 1) << ".layer." << (li + 1) << "]\n";
        detail::write_layer(os, block.layers[li]);
      }
    }
  }
  os << "\n[head]\n";
  os << "class_count = " << spec.class_count << "\n";
  return os.str();
}

namespace detail {

struct SpecSection {
  std::string header;
  std::map<std::string, std::string> kv;
  int line = 0;
};

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline int parse_int(const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    const int n = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError("network spec: bad integer '" + v + "' for " + where);
  }
}

inline bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("network spec: bad boolean '" + v + "' for " + where);
}

inline ConvLayerSpec parse_layer_section(const SpecSection& sec) {
  static const std::vector<std::string> known = {"out_channels", "kernel",    "stride",
                                                 "padding",      "batchnorm", "activation"};
  for (const auto& [k, v] : sec.kv) {
    bool ok = false;
    for (const auto& kn : known) ok = ok || kn == k;
    if (!ok) throw ConfigError("network spec: unknown key '" + k + "' in [" + sec.header + "]");
  }
  ConvLayerSpec l;
  auto need = [&](const char* key) -> const std::string& {
    auto it = sec.kv.find(key);
    if (it == sec.kv.end())
      throw ConfigError("network spec: [" + sec.header + "] missing key '" + key + "'");
    return it->second;
  };
  l.out_channels = parse_int(need("out_channels"), sec.header);
  const std::string kern = need("kernel");
  const auto x = kern.find('x');
  if (x == std::string::npos)
    throw ConfigError("network spec: kernel must be KHxKW, got '" + kern + "'");
  l.kernel_h = parse_int(kern.substr(0, x), sec.header);
  l.kernel_w = parse_int(kern.substr(x + 1), sec.header);
  l.stride = parse_int(need("stride"), sec.header);
  l.padding = parse_int(need("padding"), sec.header);
  l.has_batchnorm = parse_bool(need("batchnorm"), sec.header);
  const std::string act = need("activation");
  if (act == "relu")
    l.activation = Activation::relu;
  else if (act == "none")
    l.activation = Activation::none;
  else
    throw ConfigError("network spec: unknown activation '" + act + "'");
  return l;
}

/// Splits "group.N.block.M.layer.K"-style headers into name/index pairs.
inline std::vector<std::pair<std::string, int>> split_header(const std::string& header) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : header) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  if (parts.size() % 2 != 0) throw ConfigError("network spec: bad section [" + header + "]");
  std::vector<std::pair<std::string, int>> out;
  for (std::size_t i = 0; i < parts.size(); i += 2)
    out.emplace_back(parts[i], parse_int(parts[i + 1], header));
  return out;
}

}  // namespace detail

inline NetworkSpec parse_spec(const std::string& text) {
  using detail::SpecSection;
  std::vector<SpecSection> sections;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  SpecSection* cur = nullptr;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("network spec line " + std::to_string(lineno) + ": unterminated section");
      sections.push_back({line.substr(1, line.size() - 2), {}, lineno});
      cur = &sections.back();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || cur == nullptr)
      throw ConfigError("network spec line " + std::to_string(lineno) +
                        ": expected 'key = value' inside a section");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (cur->kv.count(key))
      throw ConfigError("network spec line " + std::to_string(lineno) + ": duplicate key '" +
                        key + "'");
    cur->kv[key] = val;
  }

  NetworkSpec spec;
  bool have_net = false, have_stem = false, have_head = false;
  // groups -> blocks -> layers, gathered by index then checked contiguous.
  std::map<int, SpecSection*> group_secs;
  std::map<std::pair<int, int>, SpecSection*> block_secs;
  std::map<std::tuple<int, int, int>, SpecSection*> layer_secs;

  for (auto& sec : sections) {
    if (sec.header == "net") {
      have_net = true;
      for (const auto& [k, v] : sec.kv) {
        if (k == "name")
          spec.name = v;
        else if (k == "input_channels")
          spec.input_channels = detail::parse_int(v, "net.input_channels");
        else if (k == "input_size")
          spec.input_size = detail::parse_int(v, "net.input_size");
        else
          throw ConfigError("network spec: unknown key '" + k + "' in [net]");
      }
    } else if (sec.header == "stem") {
      have_stem = true;
      spec.stem = detail::parse_layer_section(sec);
    } else if (sec.header == "head") {
      have_head = true;
      for (const auto& [k, v] : sec.kv) {
        if (k == "class_count")
          spec.class_count = detail::parse_int(v, "head.class_count");
        else
          throw ConfigError("network spec: unknown key '" + k + "' in [head]");
      }
    } else {
      const auto parts = detail::split_header(sec.header);
      if (parts.empty() || parts[0].first != "group")
        throw ConfigError("network spec: unknown section [" + sec.header + "]");
      if (parts.size() == 1) {
        group_secs[parts[0].second] = &sec;
      } else if (parts.size() == 2 && parts[1].first == "block") {
        block_secs[{parts[0].second, parts[1].second}] = &sec;
      } else if (parts.size() == 3 && parts[1].first == "block" && parts[2].first == "layer") {
        layer_secs[{parts[0].second, parts[1].second, parts[2].second}] = &sec;
      } else {
        throw ConfigError("network spec: unknown section [" + sec.header + "]");
      }
    }
  }
  if (!have_net || !have_stem || !have_head)
    throw ConfigError("network spec: [net], [stem] and [head] sections are required");

  int expected_group = 1;
  for (const auto& [gidx, gsec] : group_secs) {
    if (gidx != expected_group++)
      throw ConfigError("network spec: group indices must be contiguous from 1");
    GroupSpec group;
    for (const auto& [k, v] : gsec->kv) {
      if (k == "downsample_at_entry")
        group.downsample_at_entry = detail::parse_bool(v, gsec->header);
      else
        throw ConfigError("network spec: unknown key '" + k + "' in [" + gsec->header + "]");
    }
    int expected_block = 1;
    for (const auto& [bkey, bsec] : block_secs) {
      if (bkey.first != gidx) continue;
      if (bkey.second != expected_block++)
        throw ConfigError("network spec: block indices must be contiguous from 1 in group " +
                          std::to_string(gidx));
      BlockSpec block;
      bool have_shortcut = false;
      for (const auto& [k, v] : bsec->kv) {
        if (k == "kind") {
          if (v == "residual")
            block.kind = BlockKind::residual;
          else if (v == "plain")
            block.kind = BlockKind::plain;
          else
            throw ConfigError("network spec: unknown block kind '" + v + "'");
        } else if (k == "shortcut") {
          have_shortcut = true;
          if (v == "identity")
            block.shortcut = ShortcutKind::identity;
          else if (v == "projection")
            block.shortcut = ShortcutKind::projection;
          else
            throw ConfigError("network spec: unknown shortcut '" + v + "'");
        } else {
          throw ConfigError("network spec: unknown key '" + k + "' in [" + bsec->header + "]");
        }
      }
      if (block.kind == BlockKind::residual && !have_shortcut)
        throw ConfigError("network spec: residual block [" + bsec->header +
                          "] must declare a shortcut");
      if (block.kind == BlockKind::plain && have_shortcut)
        throw ConfigError("network spec: plain block [" + bsec->header +
                          "] must not declare a shortcut");
      int expected_layer = 1;
      for (const auto& [lkey, lsec] : layer_secs) {
        if (std::get<0>(lkey) != gidx || std::get<1>(lkey) != bkey.second) continue;
        if (std::get<2>(lkey) != expected_layer++)
          throw ConfigError("network spec: layer indices must be contiguous from 1 in [" +
                            bsec->header + "]");
        block.layers.push_back(detail::parse_layer_section(*lsec));
      }
      if (block.layers.empty())
        throw ConfigError("network spec: block [" + bsec->header + "] has no layers");
      group.blocks.push_back(std::move(block));
    }
    if (group.blocks.empty())
      throw ConfigError("network spec: group " + std::to_string(gidx) + " has no blocks");
    spec.groups.push_back(std::move(group));
  }
  // Reject stray block/layer sections that reference unlisted groups.
  for (const auto& [bkey, bsec] : block_secs)
    if (!group_secs.count(bkey.first))
      throw ConfigError("network spec: [" + bsec->header + "] references a missing group section");
  for (const auto& [lkey, lsec] : layer_secs)
    if (!block_secs.count({std::get<0>(lkey), std::get<1>(lkey)}))
      throw ConfigError("network spec: [" + lsec->header + "] references a missing block section");

  validate_spec(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// Common builders
// ---------------------------------------------------------------------------

/// Residual network in the grouped style: 3x3 stem, `blocks_per_group`
/// two-conv residual blocks per group, groups after the first downsampling
/// at entry with projection shortcuts, then global pool + fc.
inline NetworkSpec make_residual_spec(const std::string& name, int input_channels, int input_size,
                                      const std::vector<int>& group_widths, int blocks_per_group,
                                      int class_count, int stem_width = -1) {
  NetworkSpec spec;
  spec.name = name;
  spec.input_channels = input_channels;
  spec.input_size = input_size;
  spec.class_count = class_count;
  spec.stem = {stem_width > 0 ? stem_width : group_widths.at(0), 3, 3, 1, 1, true,
               Activation::relu};
  int prev = spec.stem.out_channels;
  for (std::size_t gi = 0; gi < group_widths.size(); ++gi) {
    GroupSpec group;
    group.downsample_at_entry = gi > 0;
    const int width = group_widths[gi];
    for (int b = 0; b < blocks_per_group; ++b) {
      BlockSpec block;
      block.kind = BlockKind::residual;
      const bool entry = b == 0;
      const int stride = (entry && group.downsample_at_entry) ? 2 : 1;
      const bool needs_projection = entry && (prev != width || stride != 1);
      block.shortcut = needs_projection ? ShortcutKind::projection : ShortcutKind::identity;
      block.layers.push_back({width, 3, 3, stride, 1, true, Activation::relu});
      block.layers.push_back({width, 3, 3, 1, 1, true, Activation::none});
      group.blocks.push_back(std::move(block));
      prev = width;
    }
    spec.groups.push_back(std::move(group));
  }
  return spec;
}

/// Plain (VGG-style) network: each group is a run of single-conv blocks at
/// one resolution, downsampling via a stride-2 entry conv.
inline NetworkSpec make_plain_spec(const std::string& name, int input_channels, int input_size,
                                   const std::vector<int>& group_widths, int convs_per_group,
                                   int class_count) {
  NetworkSpec spec;
  spec.name = name;
  spec.input_channels = input_channels;
  spec.input_size = input_size;
  spec.class_count = class_count;
  spec.stem = {group_widths.at(0), 3, 3, 1, 1, true, Activation::relu};
  for (std::size_t gi = 0; gi < group_widths.size(); ++gi) {
    GroupSpec group;
    group.downsample_at_entry = gi > 0;
    const int width = group_widths[gi];
    for (int b = 0; b < convs_per_group; ++b) {
      BlockSpec block;
      block.kind = BlockKind::plain;
      const int stride = (b == 0 && group.downsample_at_entry) ? 2 : 1;
      block.layers.push_back({width, 3, 3, stride, 1, true, Activation::relu});
      group.blocks.push_back(std::move(block));
    }
    spec.groups.push_back(std::move(group));
  }
  return spec;
}

}  // namespace edgekt
