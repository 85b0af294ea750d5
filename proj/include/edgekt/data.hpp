#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "edgekt/errors.hpp"
#include "edgekt/rng.hpp"
#include "edgekt/tensor.hpp"

namespace edgekt {

/// One image at rest: channel-plane uint8 pixels (R plane, G plane, B plane,
/// row-major) plus its class index.
struct ImageU8 {
  std::vector<std::uint8_t> pixels;
  int label = 0;
};

struct Dataset {
  int channels = 3, height = 32, width = 32;
  int class_count = 10;
  std::vector<ImageU8> images;
  std::string generator;  // provenance: "cifar10" or a synth version string

  std::size_t image_bytes() const { return std::size_t(channels) * height * width; }
};

/// A standardized (and possibly augmented) image in float space.
struct FloatImage {
  int c = 0, h = 0, w = 0;
  std::vector<float> pix;

  float& at(int ic, int iy, int ix) { return pix[(std::size_t(ic) * h + iy) * w + ix]; }
  float at(int ic, int iy, int ix) const { return pix[(std::size_t(ic) * h + iy) * w + ix]; }
};

// ---------------------------------------------------------------------------
// CIFAR-10 binary records (1 label byte + channel planes)
// ---------------------------------------------------------------------------

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// Reads one record file. The standard batches hold exactly 10,000 records;
/// pass expect_records = 0 to accept any whole number of records (the
/// interchange form used for synthetic exports).
inline Dataset read_cifar10_records(const std::string& path, std::size_t expect_records = 10000,
                                    int class_count = 10) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw DataError("cannot open dataset file: " + path);
  const std::size_t size = std::size_t(is.tellg());
  if (size % kCifarRecordBytes != 0)
    throw DataError(path + ": size " + std::to_string(size) + " is not a whole number of " +
                    std::to_string(kCifarRecordBytes) + "-byte records");
  const std::size_t records = size / kCifarRecordBytes;
  if (expect_records != 0 && records != expect_records)
    throw DataError(path + ": expected " + std::to_string(expect_records) + " records, found " +
                    std::to_string(records));
  is.seekg(0);
  Dataset ds;
  ds.class_count = class_count;
  ds.generator = "cifar10";
  ds.images.reserve(records);
  std::vector<char> rec(kCifarRecordBytes);
  for (std::size_t r = 0; r < records; ++r) {
    if (!is.read(rec.data(), std::streamsize(rec.size())))
      throw DataError(path + ": short read at record " + std::to_string(r));
    ImageU8 img;
    img.label = static_cast<unsigned char>(rec[0]);
    if (img.label >= class_count)
      throw DataError(path + ": record " + std::to_string(r) + " has label byte " +
                      std::to_string(img.label) + " >= " + std::to_string(class_count));
    img.pixels.assign(rec.begin() + 1, rec.end());
    ds.images.push_back(std::move(img));
  }
  return ds;
}

inline void write_cifar10_records(const Dataset& ds, const std::string& path) {
  if (ds.image_bytes() != kCifarRecordBytes - 1)
    throw DataError("write_cifar10_records: images must be 3x32x32");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open dataset file for writing: " + path);
  for (const auto& img : ds.images) {
    const char label = char(img.label);
    os.write(&label, 1);
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             std::streamsize(img.pixels.size()));
  }
  if (!os) throw DataError("write failed: " + path);
}

struct Cifar10 {
  Dataset train, test;
};

/// Loads the standard binary layout: data_batch_1..5.bin + test_batch.bin.
inline Cifar10 load_cifar10_bin(const std::string& dir) {
  Cifar10 out;
  out.train.generator = out.test.generator = "cifar10";
  for (int i = 1; i <= 5; ++i) {
    Dataset part = read_cifar10_records(dir + "/data_batch_" + std::to_string(i) + ".bin");
    out.train.images.insert(out.train.images.end(), part.images.begin(), part.images.end());
  }
  out.test = read_cifar10_records(dir + "/test_batch.bin");
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale task
// ---------------------------------------------------------------------------

inline constexpr const char* kSynthGeneratorVersion = "synth-grating-v1";

/// Class-dependent oriented gratings with per-image phase/amplitude jitter
/// and pixel noise. The class signal is carried primarily by the spatial
/// frequency, which survives crops and left-right flips (orientation alone
/// would not: a flip maps 45 degrees onto 135 degrees). Classes are
/// linearly separable enough for a nearest-centroid baseline yet
/// non-trivial for a conv net.
inline Dataset synth_dataset(int class_count, int per_class, int image_size, std::uint64_t seed) {
  if (class_count < 2) throw ConfigError("synth_dataset: class_count must be >= 2");
  if (per_class < 1 || image_size < 8)
    throw ConfigError("synth_dataset: need per_class >= 1 and image_size >= 8");
  Dataset ds;
  ds.class_count = class_count;
  ds.height = ds.width = image_size;
  ds.generator = kSynthGeneratorVersion;
  ds.images.reserve(std::size_t(class_count) * per_class);
  const double pi = 3.14159265358979323846;
  for (int k = 0; k < class_count; ++k) {
    const double theta = pi * double(k) / double(class_count);
    const double freq = 2.0 + 10.0 * double(k) / double(class_count);
    const double base_phase = 0.7 * double(k);
    const double cs = std::cos(theta), sn = std::sin(theta);
    for (int i = 0; i < per_class; ++i) {
      Rng rng(mix_seed(seed, std::uint64_t(k) * 1000003ULL + std::uint64_t(i)));
      const double phase = base_phase + rng.uniform(-0.4, 0.4);
      const double amp = 110.0 * rng.uniform(0.75, 1.0);
      ImageU8 img;
      img.label = k;
      img.pixels.resize(std::size_t(3) * image_size * image_size);
      for (int ch = 0; ch < 3; ++ch) {
        const double ch_off = 0.15 * ch;
        for (int y = 0; y < image_size; ++y)
          for (int x = 0; x < image_size; ++x) {
            const double u = double(x) / double(image_size);
            const double v = double(y) / double(image_size);
            const double wave =
                std::sin(2.0 * pi * freq * (u * cs + v * sn) + phase + ch_off);
            const double value = 127.5 + amp * wave + 12.0 * rng.normal();
            const double clamped = std::clamp(value, 0.0, 255.0);
            img.pixels[(std::size_t(ch) * image_size + y) * image_size + x] =
                std::uint8_t(std::lround(clamped));
          }
      }
      ds.images.push_back(std::move(img));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Standardization & augmentation
// ---------------------------------------------------------------------------

/// Per-image standardization over the whole pixel vector (all channels
/// pooled). A zero-variance image maps to all zeros.
inline FloatImage standardize(const std::vector<std::uint8_t>& pixels, int channels, int height,
                              int width) {
  FloatImage out;
  out.c = channels;
  out.h = height;
  out.w = width;
  out.pix.resize(pixels.size());
  double sum = 0.0;
  for (auto p : pixels) sum += double(p);
  const double mean = sum / double(pixels.size());
  double var = 0.0;
  for (auto p : pixels) {
    const double d = double(p) - mean;
    var += d * d;
  }
  var /= double(pixels.size());
  const double std_dev = std::sqrt(var);
  if (std_dev == 0.0) return out;  // already zero-filled
  for (std::size_t i = 0; i < pixels.size(); ++i)
    out.pix[i] = float((double(pixels[i]) - mean) / std_dev);
  return out;
}

inline FloatImage standardize(const ImageU8& img, int channels, int height, int width) {
  return standardize(img.pixels, channels, height, width);
}

/// Float-space variant; standardizing twice is idempotent.
inline FloatImage standardize(const FloatImage& img) {
  FloatImage out = img;
  double sum = 0.0;
  for (float p : img.pix) sum += double(p);
  const double mean = sum / double(img.pix.size());
  double var = 0.0;
  for (float p : img.pix) {
    const double d = double(p) - mean;
    var += d * d;
  }
  var /= double(img.pix.size());
  const double std_dev = std::sqrt(var);
  if (std_dev == 0.0) {
    std::fill(out.pix.begin(), out.pix.end(), 0.0f);
    return out;
  }
  for (std::size_t i = 0; i < img.pix.size(); ++i)
    out.pix[i] = float((double(img.pix[i]) - mean) / std_dev);
  return out;
}

struct AugmentConfig {
  int pad_pixels = 4;
  int crop_h = 32, crop_w = 32;
  double flip_prob = 0.5;
  int cutout_h = 16, cutout_w = 16;
  bool enable_pad_crop = true;
  bool enable_flip = true;
  bool enable_cutout = true;
  std::uint64_t seed = 0;  // folded into every per-image stream

  static AugmentConfig disabled() {
    AugmentConfig c;
    c.enable_pad_crop = c.enable_flip = c.enable_cutout = false;
    return c;
  }
};

/// pad -> random crop -> random flip -> cutout, in that order, in
/// standardized space (so pad and cutout fill with the per-image mean).
inline FloatImage augment(const FloatImage& img, const AugmentConfig& cfg,
                          std::uint64_t image_seed) {
  if (cfg.crop_h > img.h + 2 * cfg.pad_pixels || cfg.crop_w > img.w + 2 * cfg.pad_pixels)
    throw ConfigError("augment: crop larger than the padded image");
  Rng rng(mix_seed(cfg.seed, image_seed));
  FloatImage out = img;

  if (cfg.enable_pad_crop) {
    const int pad = cfg.pad_pixels;
    const int dy = int(rng.uniform_int(std::uint64_t(img.h + 2 * pad - cfg.crop_h + 1)));
    const int dx = int(rng.uniform_int(std::uint64_t(img.w + 2 * pad - cfg.crop_w + 1)));
    FloatImage crop;
    crop.c = img.c;
    crop.h = cfg.crop_h;
    crop.w = cfg.crop_w;
    crop.pix.assign(std::size_t(img.c) * cfg.crop_h * cfg.crop_w, 0.0f);
    for (int c = 0; c < img.c; ++c)
      for (int y = 0; y < cfg.crop_h; ++y) {
        const int sy = y + dy - pad;
        if (sy < 0 || sy >= img.h) continue;
        for (int x = 0; x < cfg.crop_w; ++x) {
          const int sx = x + dx - pad;
          if (sx >= 0 && sx < img.w) crop.at(c, y, x) = out.at(c, sy, sx);
        }
      }
    out = std::move(crop);
  }

  if (cfg.enable_flip && rng.bernoulli(cfg.flip_prob)) {
    for (int c = 0; c < out.c; ++c)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w / 2; ++x)
          std::swap(out.at(c, y, x), out.at(c, y, out.w - 1 - x));
  }

  if (cfg.enable_cutout) {
    const int cy = int(rng.uniform_int(std::uint64_t(out.h)));
    const int cx = int(rng.uniform_int(std::uint64_t(out.w)));
    const int y0 = std::max(0, cy - cfg.cutout_h / 2), y1 = std::min(out.h, cy + cfg.cutout_h / 2);
    const int x0 = std::max(0, cx - cfg.cutout_w / 2), x1 = std::min(out.w, cx + cfg.cutout_w / 2);
    for (int c = 0; c < out.c; ++c)
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) out.at(c, y, x) = 0.0f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

enum class Protocol { plain, incremental, unseen };

struct SplitFractions {
  double train = 0.70, val = 0.15, test = 0.15;
};

inline std::vector<int> filter_by_classes(const Dataset& ds, const std::vector<int>& indices,
                                          const std::vector<int>& classes) {
  std::vector<int> out;
  for (int i : indices)
    if (std::find(classes.begin(), classes.end(), ds.images[i].label) != classes.end())
      out.push_back(i);
  return out;
}

struct SplitPlan {
  // Protocol-shaped primary lists. plain: stratified over all classes.
  // incremental: train/val/test span all classes. unseen: train_idx holds
  // seen-class images only; val/test hold unseen-class images only.
  std::vector<int> train_idx, val_idx, test_idx;
  std::vector<int> old_classes, new_classes;      // incremental protocol
  std::vector<int> seen_classes, unseen_classes;  // unseen protocol
  std::vector<int> old_train_idx, new_train_idx;  // incremental per-set train
  std::vector<int> old_val_idx;                   // incremental: pretrain selection
  std::vector<int> transfer_idx;                  // unseen: label-free KT pool
  std::vector<int> seen_val_idx, seen_test_idx;   // unseen: seen-class eval
  std::uint64_t seed = 0;
};

/// Stratified per-class split plus the protocol's category partition.
/// `subset_count` is the old-category count (incremental) or seen-category
/// count (unseen); ignored for plain.
inline SplitPlan make_splits(const Dataset& ds, Protocol protocol, SplitFractions fractions,
                             std::uint64_t seed, int subset_count = 0) {
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 ||
      fractions.train + fractions.val + fractions.test > 1.0 + 1e-12)
    throw ConfigError("make_splits: fractions must be non-negative and sum to <= 1");
  if (protocol != Protocol::plain &&
      (subset_count < 1 || subset_count >= ds.class_count))
    throw ConfigError("make_splits: category subset must be in [1, class_count)");

  SplitPlan plan;
  plan.seed = seed;
  std::vector<std::vector<int>> per_class(ds.class_count);
  for (int i = 0; i < int(ds.images.size()); ++i)
    per_class.at(ds.images[i].label).push_back(i);

  std::vector<int> train_all, val_all, test_all;
  Rng rng(mix_seed(seed, 0xda7a));
  for (int k = 0; k < ds.class_count; ++k) {
    auto& idx = per_class[k];
    rng.shuffle(idx);
    const std::size_t n = idx.size();
    const std::size_t n_train = std::size_t(fractions.train * double(n));
    const std::size_t n_val = std::size_t(fractions.val * double(n));
    const std::size_t n_test = std::size_t(fractions.test * double(n));
    for (std::size_t i = 0; i < n_train; ++i) train_all.push_back(idx[i]);
    for (std::size_t i = n_train; i < n_train + n_val; ++i) val_all.push_back(idx[i]);
    for (std::size_t i = n_train + n_val; i < n_train + n_val + n_test; ++i)
      test_all.push_back(idx[i]);
  }

  std::vector<int> subset, rest;
  if (protocol != Protocol::plain) {
    std::vector<int> classes(ds.class_count);
    std::iota(classes.begin(), classes.end(), 0);
    Rng crng(mix_seed(seed, 0xc1a5));
    crng.shuffle(classes);
    subset.assign(classes.begin(), classes.begin() + subset_count);
    rest.assign(classes.begin() + subset_count, classes.end());
    std::sort(subset.begin(), subset.end());
    std::sort(rest.begin(), rest.end());
  }

  switch (protocol) {
    case Protocol::plain:
      plan.train_idx = std::move(train_all);
      plan.val_idx = std::move(val_all);
      plan.test_idx = std::move(test_all);
      break;
    case Protocol::incremental:
      plan.old_classes = subset;
      plan.new_classes = rest;
      plan.old_train_idx = filter_by_classes(ds, train_all, plan.old_classes);
      plan.new_train_idx = filter_by_classes(ds, train_all, plan.new_classes);
      plan.old_val_idx = filter_by_classes(ds, val_all, plan.old_classes);
      plan.train_idx = std::move(train_all);
      plan.val_idx = std::move(val_all);
      plan.test_idx = std::move(test_all);
      break;
    case Protocol::unseen:
      plan.seen_classes = subset;
      plan.unseen_classes = rest;
      plan.train_idx = filter_by_classes(ds, train_all, plan.seen_classes);
      plan.transfer_idx = filter_by_classes(ds, train_all, plan.unseen_classes);
      plan.val_idx = filter_by_classes(ds, val_all, plan.unseen_classes);
      plan.test_idx = filter_by_classes(ds, test_all, plan.unseen_classes);
      plan.seen_val_idx = filter_by_classes(ds, val_all, plan.seen_classes);
      plan.seen_test_idx = filter_by_classes(ds, test_all, plan.seen_classes);
      break;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
  TensorT<float> input;
  std::vector<int> labels;
  std::vector<int> dataset_indices;
};

/// Seeded per-epoch permutation of the index list, chunked into batches;
/// the final partial batch is kept.
inline std::vector<std::vector<int>> batch_index_plan(std::vector<int> indices, int batch_size,
                                                      std::uint64_t epoch_seed) {
  if (batch_size < 1) throw ConfigError("batch_index_plan: batch_size must be >= 1");
  Rng rng(mix_seed(epoch_seed, 0xba7c4));
  rng.shuffle(indices);
  std::vector<std::vector<int>> plan;
  for (std::size_t i = 0; i < indices.size(); i += std::size_t(batch_size)) {
    const std::size_t end = std::min(indices.size(), i + std::size_t(batch_size));
    plan.emplace_back(indices.begin() + std::ptrdiff_t(i), indices.begin() + std::ptrdiff_t(end));
  }
  return plan;
}

/// Materializes one batch: standardize, then augment with a seed derived
/// from (epoch_seed, dataset index) so results are order-independent.
inline Batch make_batch(const Dataset& ds, const std::vector<int>& indices,
                        std::uint64_t epoch_seed, const AugmentConfig* aug) {
  Batch batch;
  batch.input = TensorT<float>(int(indices.size()), ds.channels, ds.height, ds.width);
  batch.labels.reserve(indices.size());
  batch.dataset_indices = indices;
  for (std::size_t bi = 0; bi < indices.size(); ++bi) {
    const ImageU8& img = ds.images.at(std::size_t(indices[bi]));
    FloatImage f = standardize(img, ds.channels, ds.height, ds.width);
    if (aug) f = augment(f, *aug, mix_seed(epoch_seed, std::uint64_t(indices[bi])));
    std::copy(f.pix.begin(), f.pix.end(),
              batch.input.data.begin() + std::ptrdiff_t(bi * f.pix.size()));
    batch.labels.push_back(img.label);
  }
  return batch;
}

/// One-hot rows for a label vector.
inline TensorT<float> one_hot(const std::vector<int>& labels, int class_count) {
  TensorT<float> out(int(labels.size()), class_count, 1, 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count)
      throw ShapeError("one_hot: label " + std::to_string(labels[i]) + " out of range");
    out.data[i * std::size_t(class_count) + std::size_t(labels[i])] = 1.0f;
  }
  return out;
}

}  // namespace edgekt
