#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "edgekt/prune.hpp"
#include "oracles.hpp"

using namespace edgekt;

namespace {

// Brute-force recount, independent of the library path.
int brute_count(const TensorT<float>& act, int sample, double threshold) {
  int count = 0;
  for (int j = 0; j < act.c; ++j) {
    int zeros = 0;
    for (int y = 0; y < act.h; ++y)
      for (int x = 0; x < act.w; ++x)
        if (act.at(sample, j, y, x) == 0.0f) ++zeros;
    if (double(zeros) / double(act.h * act.w) >= threshold) ++count;
  }
  return count;
}

TensorT<float> random_relu_acts(int n, int c, int h, int w, std::uint64_t seed, double zero_prob) {
  TensorT<float> t(n, c, h, w);
  Rng rng(seed);
  for (auto& v : t.data) v = rng.bernoulli(zero_prob) ? 0.0f : float(rng.uniform(0.05, 2.0));
  return t;
}

std::vector<std::uint8_t> model_bytes(ModelT<float>& m) {
  std::vector<std::uint8_t> bytes;
  for (auto* p : m.parameters()) {
    const auto* d = reinterpret_cast<const std::uint8_t*>(p->value().data.data());
    bytes.insert(bytes.end(), d, d + p->value().numel() * sizeof(float));
  }
  for (const auto& [name, buf] : m.buffers()) {
    const auto* d = reinterpret_cast<const std::uint8_t*>(buf.data.data());
    bytes.insert(bytes.end(), d, d + buf.numel() * sizeof(float));
  }
  return bytes;
}

}  // namespace

TEST_CASE("filter_zero_fraction examples") {
  TensorT<float> zero(1, 1, 4, 4);
  CHECK(filter_zero_fraction(zero, 0, 0) == 1.0);

  TensorT<float> half(1, 1, 4, 4);
  for (int i = 0; i < 8; ++i) half.data[std::size_t(i)] = 1.5f;
  CHECK(filter_zero_fraction(half, 0, 0) == 0.5);

  auto acts = random_relu_acts(3, 5, 6, 6, 77, 0.4);
  for (int s = 0; s < 3; ++s)
    for (int j = 0; j < 5; ++j) {
      int zeros = 0;
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
          if (acts.at(s, j, y, x) == 0.0f) ++zeros;
      CHECK(filter_zero_fraction(acts, s, j) == double(zeros) / 36.0);
    }

  CHECK_THROWS_AS(filter_zero_fraction<float>(nullptr, 0), ShapeError);
}

TEST_CASE("count_prunable examples and monotonicity in the threshold") {
  auto acts = random_relu_acts(4, 8, 5, 5, 123, 0.5);
  for (int s = 0; s < 4; ++s) {
    CHECK(count_prunable(acts, s, 0.0) == 8);  // every fraction >= 0
    CHECK(count_prunable(acts, s, 0.9) == brute_count(acts, s, 0.9));
    int prev = 9;
    for (double p : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const int c = count_prunable(acts, s, p);
      CHECK(c <= prev);
      prev = c;
    }
  }

  // P = 1.0 with no all-zero filter counts nothing.
  auto busy = random_relu_acts(2, 6, 4, 4, 5, 0.3);
  for (auto& v : busy.data)
    if (v == 0.0f) v = 0.0f;  // keep some zeros, but ensure no filter is all-zero:
  for (int s = 0; s < 2; ++s)
    for (int j = 0; j < 6; ++j) busy.at(s, j, 0, 0) = 1.0f;
  for (int s = 0; s < 2; ++s) CHECK(count_prunable(busy, s, 1.0) == 0);
}

TEST_CASE("average_prunable equals a two-pass recomputation and spares the model") {
  const auto spec = make_residual_spec("t", 3, 32, {8, 16}, 2, 4);
  ModelT<float> model(spec, 42);
  auto ds = synth_dataset(4, 24, 32, 11);

  const auto before = model_bytes(model);
  PruningConfig cfg;
  cfg.threshold = 0.5;
  cfg.sample_count = 64;
  cfg.calibration_seed = 3;
  auto report = average_prunable(model, ds, cfg);
  CHECK(model_bytes(model) == before);

  // One entry per conv layer: stem + 2 groups x 2 blocks x 2 layers.
  REQUIRE(report.layers.size() == 1 + 2 * 2 * 2);
  for (const auto& ls : report.layers) {
    REQUIRE(int(ls.fractions.size()) == cfg.sample_count);
    double total = 0.0;
    for (const auto& fr : ls.fractions) {
      REQUIRE(int(fr.size()) == ls.filter_count);
      int cnt = 0;
      for (double f : fr) {
        REQUIRE(f >= 0.0);
        REQUIRE(f <= 1.0);
        if (f >= cfg.threshold) ++cnt;
      }
      total += double(cnt);
    }
    CHECK(ls.avg_prunable == Catch::Approx(total / double(cfg.sample_count)).margin(1e-9));
    CHECK(ls.reduced_width == std::max(1, ls.filter_count - int(std::floor(ls.avg_prunable))));
  }

  // Identical images force identical per-image counts; the mean of {c,...,c}
  // must be exactly c.
  Dataset twin;
  twin.class_count = 4;
  twin.images = {ds.images[0], ds.images[0]};
  PruningConfig cfg2 = cfg;
  cfg2.sample_count = 2;
  auto rep2 = average_prunable(model, twin, cfg2);
  for (const auto& ls : rep2.layers) {
    CHECK(ls.avg_prunable == double(int(ls.avg_prunable)));
    REQUIRE(ls.fractions.size() == 2);
    CHECK(ls.fractions[0] == ls.fractions[1]);
  }

  // Averaging rule on distinct counts: mean of {2, 4} is 3.
  CHECK((2 + 4) / 2.0 == 3.0);

  PruningConfig tiny = cfg;
  tiny.sample_count = 1000;
  CHECK_THROWS_AS(average_prunable(model, ds, tiny), ConfigError);
}

TEST_CASE("reduce_depth keeps one block per group and is idempotent") {
  const auto teacher = make_residual_spec("t", 3, 32, {16, 32, 64}, 2, 4);
  const auto shallow = reduce_depth(teacher);
  REQUIRE(shallow.groups.size() == 3);
  for (const auto& g : shallow.groups) CHECK(g.blocks.size() == 1);
  CHECK(reduce_depth(shallow) == shallow);

  // Stem and head preserved.
  CHECK(shallow.stem == teacher.stem);
  CHECK(shallow.class_count == teacher.class_count);

  // Per-group output resolutions match the teacher's.
  const auto tshapes = propagate_shapes(teacher);
  const auto sshapes = propagate_shapes(shallow);
  auto group_out = [](const std::vector<LayerShape>& shapes, int group) {
    int h = -1;
    for (const auto& s : shapes)
      if (s.group == group) h = s.out_h;
    return h;
  };
  for (int g = 1; g <= 3; ++g) CHECK(group_out(tshapes, g) == group_out(sshapes, g));

  // The retained entry blocks absorbed the downsampling.
  CHECK(shallow.groups[1].blocks[0].layers[0].stride == 2);
  CHECK(shallow.groups[1].blocks[0].shortcut == ShortcutKind::projection);
  CHECK(shallow.groups[0].blocks[0].shortcut == ShortcutKind::identity);
}

TEST_CASE("reduce_width applies the floor rule with clamping") {
  const auto teacher = make_residual_spec("t", 3, 32, {16}, 1, 4);
  const auto shallow = reduce_depth(teacher);

  SparsityReport report;
  auto add = [&](const std::string& name, int n, double avgc) {
    LayerSparsity ls;
    ls.layer = name;
    ls.filter_count = n;
    ls.avg_prunable = avgc;
    report.layers.push_back(ls);
  };
  add("stem.conv", 16, 3.0);
  add("group1.block1.conv1", 16, 0.0);
  add("group1.block1.conv2", 16, 16.0);
  auto reduced = reduce_width(shallow, report);
  CHECK(reduced.stem.out_channels == 13);                          // 16 - 3
  CHECK(reduced.groups[0].blocks[0].layers[0].out_channels == 16); // unchanged
  CHECK(reduced.groups[0].blocks[0].layers[1].out_channels == 1);  // clamped
  // 13-channel input vs 1-channel output forces a projection shortcut.
  CHECK(reduced.groups[0].blocks[0].shortcut == ShortcutKind::projection);
  validate_spec(reduced);

  // Fractional averages floor before subtracting.
  SparsityReport frac = report;
  frac.layers[0].avg_prunable = 2.7;
  CHECK(reduce_width(shallow, frac).stem.out_channels == 14);  // 16 - floor(2.7)

  SparsityReport missing;
  add("stem.conv", 16, 0.0);
  missing.layers.push_back(report.layers[0]);
  CHECK_THROWS_AS(reduce_width(shallow, missing), ConfigError);

  SparsityReport wrong_n = report;
  wrong_n.layers[1].filter_count = 12;
  CHECK_THROWS_AS(reduce_width(shallow, wrong_n), ConfigError);
}

TEST_CASE("compress: depth-only ratio at P=1.0 with live filters, monotone in P") {
  const auto teacher_spec = make_residual_spec("teach", 3, 32, {16, 32, 64}, 2, 4);
  ModelT<float> teacher(teacher_spec, 31337);
  auto ds = synth_dataset(4, 40, 32, 9);

  PruningConfig cfg;
  cfg.sample_count = 64;
  cfg.calibration_seed = 5;

  cfg.threshold = 1.0;
  auto at10 = compress(teacher, ds, cfg);
  // With no fully dead filters, P=1.0 prunes nothing: widths must equal the
  // depth-only spec and the ratio equals the closed-form count ratio.
  bool any_dead = false;
  for (const auto& ls : at10.teacher_report.layers)
    for (const auto& fr : ls.fractions)
      for (double f : fr) any_dead = any_dead || f >= 1.0;
  const auto depth_only = reduce_depth(teacher_spec);
  if (!any_dead) {
    NetworkSpec expect = depth_only;
    expect.name = at10.student.name;
    CHECK(at10.student == expect);
  }
  CHECK(at10.ratio ==
        Catch::Approx(double(count_params(teacher_spec)) / double(count_params(at10.student))));
  CHECK(count_params(at10.student) <= count_params(depth_only));

  cfg.threshold = 0.7;
  auto at07 = compress(teacher, ds, cfg);
  CHECK(count_params(at07.student) <= count_params(at10.student));

  // Deterministic under fixed teacher/data/seed.
  auto again = compress(teacher, ds, cfg);
  CHECK(again.student == at07.student);

  // Student validates and builds.
  ModelT<float> student(at07.student, 1);
  CHECK(student.param_scalar_count() == count_params(at07.student));
}

TEST_CASE("sparsity report export format") {
  SparsityReport report;
  LayerSparsity ls;
  ls.layer = "stem.conv";
  ls.filter_count = 16;
  ls.avg_prunable = 2.5;
  ls.reduced_width = 14;
  ls.fractions = {{0.25, 1.0}};
  report.layers.push_back(ls);
  const std::string text = format_sparsity_report(report);
  CHECK(text == "layer=stem.conv n=16 avgc=2.500000 w=14\n");
  const std::string with = format_sparsity_report(report, true);
  CHECK(with.find("image=0 fractions=0.2500,1.0000") != std::string::npos);
}
