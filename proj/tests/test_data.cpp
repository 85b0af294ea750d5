#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <set>

#include "edgekt/data.hpp"
#include "oracles.hpp"

using namespace edgekt;

namespace {

std::string temp_dir() {
  const std::string dir = "/tmp/edgekt_data_" + std::to_string(::getpid());
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("cifar record format constant") {
  // 1 label byte + 1024 R + 1024 G + 1024 B.
  CHECK(kCifarRecordBytes == 1 + 3 * 32 * 32);
}

TEST_CASE("cifar writer/reader round trip is bitwise") {
  auto ds = synth_dataset(10, 20, 32, 99);
  const std::string path = temp_dir() + "/roundtrip.bin";
  write_cifar10_records(ds, path);
  auto back = read_cifar10_records(path, 0);
  REQUIRE(back.images.size() == ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    CHECK(back.images[i].label == ds.images[i].label);
    CHECK(std::memcmp(back.images[i].pixels.data(), ds.images[i].pixels.data(), 3072) == 0);
  }
  std::remove(path.c_str());
}

TEST_CASE("standard layout load and its error paths") {
  const std::string dir = temp_dir() + "/cifar";
  std::filesystem::create_directories(dir);
  // Synthesize the 5+1 file layout with 10,000 records each (1,000/class).
  auto full = synth_dataset(10, 6000, 32, 4242);
  Rng rng(17);
  std::vector<int> order(full.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  rng.shuffle(order);
  auto write_chunk = [&](const std::string& name, std::size_t begin) {
    Dataset part;
    part.class_count = 10;
    for (std::size_t i = begin; i < begin + 10000; ++i)
      part.images.push_back(full.images[std::size_t(order[i])]);
    write_cifar10_records(part, dir + "/" + name);
  };
  for (int i = 1; i <= 5; ++i)
    write_chunk("data_batch_" + std::to_string(i) + ".bin", std::size_t(i - 1) * 10000);
  write_chunk("test_batch.bin", 50000);

  auto cifar = load_cifar10_bin(dir);
  CHECK(cifar.train.images.size() == 50000);
  CHECK(cifar.test.images.size() == 10000);
  std::vector<int> counts(10, 0);
  for (const auto& img : cifar.train.images) {
    REQUIRE(img.label >= 0);
    REQUIRE(img.label < 10);
    ++counts[std::size_t(img.label)];
  }
  for (const auto& img : cifar.test.images) REQUIRE(img.label < 10);

  // Wrong file size.
  {
    std::ofstream f(dir + "/test_batch.bin", std::ios::binary | std::ios::app);
    f.write("x", 1);
  }
  CHECK_THROWS_AS(load_cifar10_bin(dir), DataError);

  // Label byte >= 10.
  write_chunk("test_batch.bin", 50000);
  {
    std::fstream f(dir + "/test_batch.bin", std::ios::in | std::ios::out | std::ios::binary);
    const char bad = 17;
    f.write(&bad, 1);
  }
  CHECK_THROWS_AS(load_cifar10_bin(dir), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synth_dataset determinism and uniform histogram") {
  auto a = synth_dataset(4, 25, 32, 7);
  auto b = synth_dataset(4, 25, 32, 7);
  REQUIRE(a.images.size() == b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    REQUIRE(a.images[i].label == b.images[i].label);
    REQUIRE(std::memcmp(a.images[i].pixels.data(), b.images[i].pixels.data(), 3072) == 0);
  }
  CHECK(a.generator == std::string(kSynthGeneratorVersion));

  std::vector<int> counts(4, 0);
  for (const auto& img : a.images) ++counts[std::size_t(img.label)];
  for (int c : counts) CHECK(c == 25);

  auto c = synth_dataset(4, 25, 32, 8);
  bool differs = false;
  for (std::size_t i = 0; i < a.images.size() && !differs; ++i)
    differs = std::memcmp(a.images[i].pixels.data(), c.images[i].pixels.data(), 3072) != 0;
  CHECK(differs);
}

TEST_CASE("synth classes separate under a nearest-centroid oracle on raw pixels") {
  auto ds = synth_dataset(4, 60, 32, 12345);
  const std::size_t bytes = ds.image_bytes();
  // Centroids from the first 40 per class, evaluate on the remaining 20.
  std::vector<std::vector<double>> centroid(4, std::vector<double>(bytes, 0.0));
  std::vector<int> n_train(4, 0);
  std::vector<std::size_t> eval_set;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const int k = ds.images[i].label;
    if (n_train[std::size_t(k)] < 40) {
      for (std::size_t j = 0; j < bytes; ++j)
        centroid[std::size_t(k)][j] += double(ds.images[i].pixels[j]);
      ++n_train[std::size_t(k)];
    } else {
      eval_set.push_back(i);
    }
  }
  for (int k = 0; k < 4; ++k)
    for (auto& v : centroid[std::size_t(k)]) v /= double(n_train[std::size_t(k)]);
  int correct = 0;
  for (std::size_t i : eval_set) {
    double best = 1e300;
    int arg = -1;
    for (int k = 0; k < 4; ++k) {
      double d = 0.0;
      for (std::size_t j = 0; j < bytes; ++j) {
        const double diff = double(ds.images[i].pixels[j]) - centroid[std::size_t(k)][j];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        arg = k;
      }
    }
    if (arg == ds.images[i].label) ++correct;
  }
  const double acc = 100.0 * double(correct) / double(eval_set.size());
  INFO("nearest-centroid accuracy " << acc << "%");
  CHECK(acc >= 60.0);
}

TEST_CASE("standardize examples and oracle") {
  ImageU8 constant;
  constant.pixels.assign(3 * 32 * 32, 144);
  auto z = standardize(constant, 3, 32, 32);
  for (float v : z.pix) CHECK(v == 0.0f);

  auto ds = synth_dataset(2, 3, 32, 5);
  for (const auto& img : ds.images) {
    auto f = standardize(img, 3, 32, 32);
    // 64-bit two-pass oracle.
    double mean = 0.0;
    for (auto p : img.pixels) mean += double(p);
    mean /= double(img.pixels.size());
    double var = 0.0;
    for (auto p : img.pixels) var += (double(p) - mean) * (double(p) - mean);
    var /= double(img.pixels.size());
    const double sd = std::sqrt(var);
    for (std::size_t i = 0; i < f.pix.size(); ++i)
      REQUIRE(double(f.pix[i]) ==
              Catch::Approx((double(img.pixels[i]) - mean) / sd).margin(1e-6));

    double m2 = 0.0, s2 = 0.0;
    for (float v : f.pix) m2 += double(v);
    m2 /= double(f.pix.size());
    for (float v : f.pix) s2 += (double(v) - m2) * (double(v) - m2);
    s2 = std::sqrt(s2 / double(f.pix.size()));
    CHECK(std::abs(m2) <= 1e-5);
    CHECK(std::abs(s2 - 1.0) <= 1e-4);

    // Idempotence in float space.
    auto g = standardize(f);
    for (std::size_t i = 0; i < f.pix.size(); ++i)
      REQUIRE(std::abs(g.pix[i] - f.pix[i]) <= 1e-5f);
  }
}

TEST_CASE("augment disabled is the identity") {
  auto ds = synth_dataset(2, 2, 32, 31);
  auto f = standardize(ds.images[0], 3, 32, 32);
  auto out = augment(f, AugmentConfig::disabled(), 9);
  REQUIRE(out.pix.size() == f.pix.size());
  for (std::size_t i = 0; i < f.pix.size(); ++i) CHECK(out.pix[i] == f.pix[i]);
}

TEST_CASE("flip with the same decision is an involution") {
  auto ds = synth_dataset(2, 2, 32, 32);
  auto f = standardize(ds.images[1], 3, 32, 32);
  AugmentConfig cfg = AugmentConfig::disabled();
  cfg.enable_flip = true;
  cfg.flip_prob = 1.0;  // deterministic flip decision
  auto once = augment(f, cfg, 1);
  auto twice = augment(once, cfg, 1);
  for (std::size_t i = 0; i < f.pix.size(); ++i) REQUIRE(twice.pix[i] == f.pix[i]);
  bool changed = false;
  for (std::size_t i = 0; i < f.pix.size() && !changed; ++i) changed = once.pix[i] != f.pix[i];
  CHECK(changed);
}

TEST_CASE("cutout zeroes between 64 and 256 pixels per channel") {
  AugmentConfig cfg = AugmentConfig::disabled();
  cfg.enable_cutout = true;
  FloatImage f;
  f.c = 3;
  f.h = f.w = 32;
  f.pix.assign(3 * 32 * 32, 1.0f);  // no zeros beforehand
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto out = augment(f, cfg, seed);
    for (int c = 0; c < 3; ++c) {
      int zeros = 0;
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          if (out.at(c, y, x) == 0.0f) ++zeros;
      REQUIRE(zeros >= 64);
      REQUIRE(zeros <= 256);
    }
  }
}

TEST_CASE("augment preserves dims") {
  auto ds = synth_dataset(2, 2, 32, 77);
  auto f = standardize(ds.images[0], 3, 32, 32);
  AugmentConfig cfg;  // everything on
  auto out = augment(f, cfg, 3);
  CHECK(out.c == 3);
  CHECK(out.h == 32);
  CHECK(out.w == 32);
}

TEST_CASE("splits: unseen protocol confines labels") {
  auto ds = synth_dataset(10, 30, 32, 2020);
  auto plan = make_splits(ds, Protocol::unseen, {}, 5, 2);
  REQUIRE(plan.seen_classes.size() == 2);
  REQUIRE(plan.unseen_classes.size() == 8);
  std::set<int> seen(plan.seen_classes.begin(), plan.seen_classes.end());
  for (int i : plan.train_idx) CHECK(seen.count(ds.images[std::size_t(i)].label) == 1);
  for (int i : plan.test_idx) CHECK(seen.count(ds.images[std::size_t(i)].label) == 0);
  for (int i : plan.transfer_idx) CHECK(seen.count(ds.images[std::size_t(i)].label) == 0);
}

TEST_CASE("splits: incremental protocol partitions the label space") {
  auto ds = synth_dataset(10, 30, 32, 2021);
  auto plan = make_splits(ds, Protocol::incremental, {}, 5, 9);
  REQUIRE(plan.old_classes.size() == 9);
  REQUIRE(plan.new_classes.size() == 1);
  std::set<int> all;
  for (int c : plan.old_classes) all.insert(c);
  for (int c : plan.new_classes) all.insert(c);
  CHECK(all.size() == 10);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 9);
  std::set<int> old_set(plan.old_classes.begin(), plan.old_classes.end());
  for (int i : plan.old_train_idx) CHECK(old_set.count(ds.images[std::size_t(i)].label) == 1);
  for (int i : plan.new_train_idx) CHECK(old_set.count(ds.images[std::size_t(i)].label) == 0);
}

TEST_CASE("splits are deterministic and disjoint") {
  auto ds = synth_dataset(4, 50, 32, 1);
  auto a = make_splits(ds, Protocol::plain, {}, 123);
  auto b = make_splits(ds, Protocol::plain, {}, 123);
  CHECK(a.train_idx == b.train_idx);
  CHECK(a.val_idx == b.val_idx);
  CHECK(a.test_idx == b.test_idx);
  std::set<int> seen_idx;
  for (int i : a.train_idx) REQUIRE(seen_idx.insert(i).second);
  for (int i : a.val_idx) REQUIRE(seen_idx.insert(i).second);
  for (int i : a.test_idx) REQUIRE(seen_idx.insert(i).second);

  CHECK_THROWS_AS(make_splits(ds, Protocol::plain, {0.8, 0.3, 0.1}, 1), ConfigError);
  CHECK_THROWS_AS(make_splits(ds, Protocol::unseen, {}, 1, 4), ConfigError);
}

TEST_CASE("batch plan: sizes, permutation, order independence") {
  std::vector<int> indices(100);
  for (int i = 0; i < 100; ++i) indices[i] = i;
  auto plan = batch_index_plan(indices, 32, 9);
  REQUIRE(plan.size() == 4);
  CHECK(plan[0].size() == 32);
  CHECK(plan[1].size() == 32);
  CHECK(plan[2].size() == 32);
  CHECK(plan[3].size() == 4);
  std::set<int> union_set;
  for (const auto& b : plan)
    for (int i : b) REQUIRE(union_set.insert(i).second);
  CHECK(union_set.size() == 100);

  // Per-image augmentation seeds depend only on (epoch_seed, index), so
  // materializing batches in any order yields identical bytes.
  auto ds = synth_dataset(4, 30, 32, 3);
  std::vector<int> idx(ds.images.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
  auto plan2 = batch_index_plan(idx, 16, 4);
  AugmentConfig cfg;
  std::vector<Batch> fwd, rev;
  for (const auto& b : plan2) fwd.push_back(make_batch(ds, b, 4, &cfg));
  for (auto it = plan2.rbegin(); it != plan2.rend(); ++it)
    rev.push_back(make_batch(ds, *it, 4, &cfg));
  std::reverse(rev.begin(), rev.end());
  for (std::size_t i = 0; i < fwd.size(); ++i) {
    REQUIRE(fwd[i].labels == rev[i].labels);
    REQUIRE(std::memcmp(fwd[i].input.data.data(), rev[i].input.data.data(),
                        fwd[i].input.numel() * sizeof(float)) == 0);
  }
}
