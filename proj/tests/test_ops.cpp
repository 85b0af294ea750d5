#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "edgekt/fdcheck.hpp"
#include "edgekt/ops.hpp"
#include "edgekt/rng.hpp"
#include "oracles.hpp"

using namespace edgekt;

namespace {

template <class Real>
VarPtr<Real> leaf(TensorT<Real> t, bool grad = true) {
  return make_var(std::move(t), grad);
}

TensorT<double> dtensor(int n, int c, int h, int w, std::initializer_list<double> vals) {
  TensorT<double> t(n, c, h, w);
  std::size_t i = 0;
  for (double v : vals) t.data[i++] = v;
  return t;
}

}  // namespace

TEST_CASE("conv2d scaling identity on all-ones input") {
  TensorT<float> x(1, 1, 3, 3);
  x.fill(1.0f);
  TensorT<float> w(1, 1, 1, 1);
  w.data[0] = 2.0f;
  auto out = conv2d(leaf(std::move(x)), leaf(std::move(w)), 1, 0);
  REQUIRE(out->value.n == 1);
  REQUIRE(out->value.h == 3);
  REQUIRE(out->value.w == 3);
  for (float v : out->value.data) CHECK(v == 2.0f);
}

TEST_CASE("conv2d full-kernel sum reduction") {
  auto x = dtensor(1, 1, 2, 2, {1, 2, 3, 4});
  TensorT<double> w(1, 1, 2, 2);
  w.fill(1.0);
  auto out = conv2d(leaf(std::move(x)), leaf(std::move(w)), 1, 0);
  REQUIRE(out->value.numel() == 1);
  CHECK(out->value.data[0] == Catch::Approx(10.0));
}

TEST_CASE("conv2d matches six-loop reference on random input") {
  Rng rng(20240501);
  TensorT<double> x(2, 3, 8, 8), w(4, 3, 3, 3);
  oracle::fill_uniform(x, rng);
  oracle::fill_uniform(w, rng);
  auto ref = oracle::conv2d_reference(x, w, 1, 1);
  auto out = conv2d(leaf(TensorT<double>(x)), leaf(TensorT<double>(w)), 1, 1);
  REQUIRE(out->value.same_dims(ref));
  for (std::size_t i = 0; i < ref.numel(); ++i)
    CHECK(out->value.data[i] == Catch::Approx(ref.data[i]).margin(1e-12));

  // float instantiation against the 64-bit oracle
  auto xf = x.template cast<float>();
  auto wf = w.template cast<float>();
  auto outf = conv2d(leaf(std::move(xf)), leaf(std::move(wf)), 1, 1);
  for (std::size_t i = 0; i < ref.numel(); ++i)
    CHECK(double(outf->value.data[i]) == Catch::Approx(ref.data[i]).margin(1e-4));
}

TEST_CASE("conv2d strided/padded shapes match reference") {
  Rng rng(7);
  TensorT<double> x(2, 2, 9, 7), w(3, 2, 3, 3);
  oracle::fill_uniform(x, rng);
  oracle::fill_uniform(w, rng);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1, 2}) {
      auto ref = oracle::conv2d_reference(x, w, stride, pad);
      auto out = conv2d(leaf(TensorT<double>(x)), leaf(TensorT<double>(w)), stride, pad);
      REQUIRE(out->value.same_dims(ref));
      for (std::size_t i = 0; i < ref.numel(); ++i)
        REQUIRE(out->value.data[i] == Catch::Approx(ref.data[i]).margin(1e-12));
    }
  }
}

TEST_CASE("conv2d channel mismatch names both shapes") {
  TensorT<float> x(1, 3, 4, 4), w(2, 4, 3, 3);
  try {
    conv2d(leaf(std::move(x)), leaf(std::move(w)), 1, 1);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(1,3,4,4)") != std::string::npos);
    CHECK(msg.find("(2,4,3,3)") != std::string::npos);
  }
}

TEST_CASE("conv2d gradient passes finite differences") {
  Rng rng(101);
  TensorT<double> x(2, 2, 5, 5), w(3, 2, 3, 3), b(3, 1, 1, 1);
  oracle::fill_uniform(x, rng);
  oracle::fill_uniform(w, rng);
  oracle::fill_uniform(b, rng);
  std::vector<VarPtr<double>> leaves = {leaf(std::move(x)), leaf(std::move(w)),
                                        leaf(std::move(b))};
  auto build = [](const std::vector<VarPtr<double>>& ls) {
    auto y = conv2d(ls[0], ls[1], 2, 1, ls[2]);
    // Square-sum head keeps the probe smooth.
    TensorT<double> ones(y->value.n, y->value.c, y->value.h, y->value.w);
    ones.fill(1.0);
    return euclidean_distance(y, make_const(ones));
  };
  auto rep = finite_difference_check<double>(leaves, build);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("relu basic examples") {
  auto x = dtensor(1, 3, 1, 1, {-1, 0, 2});
  auto out = relu(leaf(std::move(x)));
  CHECK(out->value.data[0] == 0.0);
  CHECK(out->value.data[1] == 0.0);
  CHECK(out->value.data[2] == 2.0);

  TensorT<float> neg(2, 2, 2, 2);
  neg.fill(-3.5f);
  auto z = relu(leaf(std::move(neg)));
  for (float v : z->value.data) CHECK(v == 0.0f);
}

TEST_CASE("relu matches elementwise oracle and masks gradient") {
  Rng rng(33);
  TensorT<double> x(2, 3, 4, 4);
  oracle::fill_uniform_away_from_zero(x, rng, 0.05);
  auto xv = leaf(TensorT<double>(x));
  auto out = relu(xv);
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(out->value.data[i] == std::max(0.0, x.data[i]));

  std::vector<VarPtr<double>> leaves = {xv};
  auto build = [](const std::vector<VarPtr<double>>& ls) {
    auto y = relu(ls[0]);
    TensorT<double> zero(y->value.n, y->value.c, y->value.h, y->value.w);
    return euclidean_distance(y, make_const(zero));
  };
  auto rep = finite_difference_check<double>(leaves, build);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("batchnorm train mode standardizes per channel") {
  Rng rng(55);
  TensorT<float> x(8, 3, 6, 6);
  oracle::fill_uniform(x, rng, -2.0, 5.0);
  TensorT<float> scale(3, 1, 1, 1), shift(3, 1, 1, 1), rm(3, 1, 1, 1), rv(3, 1, 1, 1);
  scale.fill(1.0f);
  rv.fill(1.0f);
  auto out = batchnorm(leaf(std::move(x)), leaf(std::move(scale)), leaf(std::move(shift)), rm, rv,
                       true);
  const std::size_t hw = 36;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sumsq = 0.0;
    for (int s = 0; s < 8; ++s)
      for (std::size_t i = 0; i < hw; ++i) {
        const double v = out->value.data[(std::size_t(s) * 3 + c) * hw + i];
        sum += v;
        sumsq += v * v;
      }
    const double mean = sum / (8 * hw);
    const double var = sumsq / (8 * hw) - mean * mean;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("batchnorm is near-identity on an already standardized batch") {
  // Construct per-channel zero-mean unit-variance data exactly.
  TensorT<float> x(2, 1, 1, 2);
  x.data = {1.0f, -1.0f, 1.0f, -1.0f};
  TensorT<float> scale(1, 1, 1, 1), shift(1, 1, 1, 1), rm(1, 1, 1, 1), rv(1, 1, 1, 1);
  scale.fill(1.0f);
  rv.fill(1.0f);
  auto out = batchnorm(leaf(TensorT<float>(x)), leaf(std::move(scale)), leaf(std::move(shift)),
                       rm, rv, true);
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(out->value.data[i] == Catch::Approx(x.data[i]).margin(1e-4));
}

TEST_CASE("batchnorm eval mode equals the closed form") {
  Rng rng(77);
  TensorT<double> x(3, 2, 4, 4), scale(2, 1, 1, 1), shift(2, 1, 1, 1), rm(2, 1, 1, 1),
      rv(2, 1, 1, 1);
  oracle::fill_uniform(x, rng);
  scale.data = {1.3, 0.7};
  shift.data = {-0.2, 0.4};
  rm.data = {0.1, -0.3};
  rv.data = {1.7, 0.9};
  auto out = batchnorm(leaf(TensorT<double>(x)), leaf(TensorT<double>(scale)),
                       leaf(TensorT<double>(shift)), rm, rv, false);
  for (int s = 0; s < 3; ++s)
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 4; ++y)
        for (int w = 0; w < 4; ++w) {
          const double expect = (x.at(s, c, y, w) - rm.data[c]) /
                                    std::sqrt(rv.data[c] + 1e-5) * scale.data[c] +
                                shift.data[c];
          CHECK(out->value.at(s, c, y, w) == Catch::Approx(expect).margin(1e-12));
        }
}

TEST_CASE("batchnorm train-mode gradient passes finite differences") {
  Rng rng(88);
  TensorT<double> x(3, 2, 3, 3), scale(2, 1, 1, 1), shift(2, 1, 1, 1);
  oracle::fill_uniform(x, rng);
  scale.data = {1.1, 0.9};
  shift.data = {0.1, -0.1};
  std::vector<VarPtr<double>> leaves = {leaf(std::move(x)), leaf(std::move(scale)),
                                        leaf(std::move(shift))};
  auto build = [](const std::vector<VarPtr<double>>& ls) {
    TensorT<double> rm(2, 1, 1, 1), rv(2, 1, 1, 1);
    rv.fill(1.0);
    auto y = batchnorm(ls[0], ls[1], ls[2], rm, rv, true);
    TensorT<double> tgt(y->value.n, y->value.c, y->value.h, y->value.w);
    tgt.fill(0.25);
    return euclidean_distance(y, make_const(tgt));
  };
  auto rep = finite_difference_check<double>(leaves, build);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("residual_add identities and gradient routing") {
  Rng rng(11);
  TensorT<float> a(2, 2, 3, 3);
  oracle::fill_uniform(a, rng);
  TensorT<float> zero(2, 2, 3, 3);

  auto sum0 = residual_add(leaf(TensorT<float>(a)), leaf(std::move(zero)));
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(sum0->value.data[i] == a.data[i]);

  auto av = leaf(TensorT<float>(a));
  auto doubled = residual_add(av, av);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(doubled->value.data[i] == 2.0f * a.data[i]);

  // Both branches receive the upstream gradient.
  TensorT<double> ad(1, 1, 2, 2), bd(1, 1, 2, 2);
  oracle::fill_uniform(ad, rng);
  oracle::fill_uniform(bd, rng);
  std::vector<VarPtr<double>> leaves = {leaf(std::move(ad)), leaf(std::move(bd))};
  auto build = [](const std::vector<VarPtr<double>>& ls) {
    auto y = residual_add(ls[0], ls[1]);
    TensorT<double> tgt(1, 1, 2, 2);
    tgt.fill(0.3);
    return euclidean_distance(y, make_const(tgt));
  };
  auto rep = finite_difference_check<double>(leaves, build);
  CHECK(rep.max_rel_err <= 1e-4);

  TensorT<float> bad(2, 2, 3, 4);
  CHECK_THROWS_AS(residual_add(leaf(TensorT<float>(a)), leaf(std::move(bad))), ShapeError);
}

TEST_CASE("global_avg_pool examples and oracle") {
  TensorT<float> k(1, 1, 5, 5);
  k.fill(3.25f);
  auto outk = global_avg_pool(leaf(std::move(k)));
  REQUIRE(outk->value.numel() == 1);
  CHECK(outk->value.data[0] == Catch::Approx(3.25f));

  auto q = dtensor(1, 1, 2, 2, {1, 2, 3, 4});
  auto outq = global_avg_pool(leaf(std::move(q)));
  CHECK(outq->value.data[0] == Catch::Approx(2.5));

  Rng rng(21);
  TensorT<double> x(2, 3, 4, 5);
  oracle::fill_uniform(x, rng);
  auto out = global_avg_pool(leaf(TensorT<double>(x)));
  for (int s = 0; s < 2; ++s)
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int y = 0; y < 4; ++y)
        for (int w = 0; w < 5; ++w) acc += x.at(s, c, y, w);
      CHECK(out->value.at(s, c, 0, 0) == Catch::Approx(acc / 20.0).margin(1e-12));
    }
}

TEST_CASE("fully_connected identities and oracle") {
  // Identity weights, zero bias.
  TensorT<float> w(3, 3, 1, 1), b(3, 1, 1, 1);
  for (int i = 0; i < 3; ++i) w.data[std::size_t(i) * 3 + i] = 1.0f;
  auto x = dtensor(2, 3, 1, 1, {1, 2, 3, 4, 5, 6}).cast<float>();
  auto out = fully_connected(leaf(TensorT<float>(x)), leaf(std::move(w)), leaf(TensorT<float>(b)));
  for (std::size_t i = 0; i < 6; ++i) CHECK(out->value.data[i] == Catch::Approx(x.data[i]));

  // Zero weights, bias only.
  TensorT<float> w0(2, 3, 1, 1), b0(2, 1, 1, 1);
  b0.data = {0.5f, -1.5f};
  auto outb =
      fully_connected(leaf(TensorT<float>(x)), leaf(std::move(w0)), leaf(TensorT<float>(b0)));
  for (int s = 0; s < 2; ++s) {
    CHECK(outb->value.at(s, 0, 0, 0) == 0.5f);
    CHECK(outb->value.at(s, 1, 0, 0) == -1.5f);
  }

  // Random case against a direct 64-bit matrix multiply.
  Rng rng(42);
  TensorT<double> xr(3, 4, 1, 1), wr(2, 4, 1, 1), br(2, 1, 1, 1);
  oracle::fill_uniform(xr, rng);
  oracle::fill_uniform(wr, rng);
  oracle::fill_uniform(br, rng);
  auto outr = fully_connected(leaf(TensorT<double>(xr)), leaf(TensorT<double>(wr)),
                              leaf(TensorT<double>(br)));
  for (int s = 0; s < 3; ++s)
    for (int o = 0; o < 2; ++o) {
      double acc = br.data[o];
      for (int f = 0; f < 4; ++f) acc += xr.data[std::size_t(s) * 4 + f] * wr.data[std::size_t(o) * 4 + f];
      CHECK(outr->value.at(s, o, 0, 0) == Catch::Approx(acc).margin(1e-12));
    }

  std::vector<VarPtr<double>> leaves = {leaf(std::move(xr)), leaf(std::move(wr)),
                                        leaf(std::move(br))};
  auto build = [](const std::vector<VarPtr<double>>& ls) {
    auto y = fully_connected(ls[0], ls[1], ls[2]);
    TensorT<double> tgt(3, 2, 1, 1);
    tgt.fill(0.1);
    return euclidean_distance(y, make_const(tgt));
  };
  auto rep = finite_difference_check<double>(leaves, build);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("softmax_rows examples, shift invariance, oracle") {
  auto z = dtensor(1, 2, 1, 1, {0, 0});
  auto out = softmax_rows(leaf(std::move(z)));
  CHECK(out->value.data[0] == Catch::Approx(0.5));
  CHECK(out->value.data[1] == Catch::Approx(0.5));

  Rng rng(9);
  TensorT<double> logits(4, 6, 1, 1);
  oracle::fill_uniform(logits, rng, -3.0, 3.0);
  auto p1 = softmax_rows(leaf(TensorT<double>(logits)));

  TensorT<double> shifted = logits;
  for (int s = 0; s < 4; ++s)
    for (int j = 0; j < 6; ++j) shifted.at(s, j, 0, 0) += 7.5;
  auto p2 = softmax_rows(leaf(std::move(shifted)));
  for (std::size_t i = 0; i < logits.numel(); ++i)
    CHECK(std::abs(p1->value.data[i] - p2->value.data[i]) <= 1e-7);

  for (int s = 0; s < 4; ++s) {
    std::vector<double> row(6);
    for (int j = 0; j < 6; ++j) row[j] = logits.at(s, j, 0, 0);
    auto ref = oracle::softmax_reference(row);
    double sum = 0.0;
    for (int j = 0; j < 6; ++j) {
      CHECK(p1->value.at(s, j, 0, 0) == Catch::Approx(ref[j]).margin(1e-12));
      sum += p1->value.at(s, j, 0, 0);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("softmax_rows gradient passes finite differences") {
  Rng rng(14);
  TensorT<double> logits(3, 4, 1, 1);
  oracle::fill_uniform(logits, rng, -2.0, 2.0);
  std::vector<VarPtr<double>> leaves = {leaf(std::move(logits))};
  auto build = [](const std::vector<VarPtr<double>>& ls) {
    auto p = softmax_rows(ls[0]);
    TensorT<double> tgt(3, 4, 1, 1);
    tgt.fill(0.25);
    return euclidean_distance(p, make_const(tgt));
  };
  auto rep = finite_difference_check<double>(leaves, build);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("l2_normalize_flat examples") {
  auto x = dtensor(1, 2, 1, 1, {3, 4});
  auto r = l2_normalize_flat(leaf(std::move(x)));
  REQUIRE_FALSE(r.degenerate);
  CHECK(r.out->value.data[0] == Catch::Approx(0.6));
  CHECK(r.out->value.data[1] == Catch::Approx(0.8));

  auto u = dtensor(1, 2, 1, 1, {0.6, 0.8});
  auto r2 = l2_normalize_flat(leaf(std::move(u)));
  CHECK(r2.out->value.data[0] == Catch::Approx(0.6).margin(1e-7));
  CHECK(r2.out->value.data[1] == Catch::Approx(0.8).margin(1e-7));
}

TEST_CASE("l2_normalize_flat unit norm and scale invariance") {
  Rng rng(61);
  for (int trial = 0; trial < 5; ++trial) {
    TensorT<double> x(2, 3, 4, 4);
    oracle::fill_uniform(x, rng);
    auto r = l2_normalize_flat(leaf(TensorT<double>(x)));
    CHECK(std::abs(std::sqrt(r.out->value.sumsq()) - 1.0) <= 1e-6);

    TensorT<double> scaled = x;
    for (auto& v : scaled.data) v *= 37.5;
    auto rs = l2_normalize_flat(leaf(std::move(scaled)));
    for (std::size_t i = 0; i < x.numel(); ++i)
      CHECK(rs.out->value.data[i] == Catch::Approx(r.out->value.data[i]).margin(1e-12));
  }
}

TEST_CASE("l2_normalize_flat degenerate input returns zero vector with flag") {
  TensorT<float> zero(1, 4, 2, 2);
  auto r = l2_normalize_flat(leaf(std::move(zero)));
  CHECK(r.degenerate);
  for (float v : r.out->value.data) CHECK(v == 0.0f);
}

TEST_CASE("l2_normalize_flat gradient passes finite differences") {
  Rng rng(71);
  TensorT<double> x(1, 3, 2, 2);
  oracle::fill_uniform(x, rng, 0.2, 1.0);
  std::vector<VarPtr<double>> leaves = {leaf(std::move(x))};
  auto build = [](const std::vector<VarPtr<double>>& ls) {
    auto r = l2_normalize_flat(ls[0]);
    TensorT<double> tgt(1, 12, 1, 1);
    tgt.fill(0.2);
    return euclidean_distance(r.out, make_const(tgt));
  };
  auto rep = finite_difference_check<double>(leaves, build);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("l2_normalize_flat per-sample mode normalizes rows independently") {
  Rng rng(81);
  TensorT<double> x(3, 2, 2, 2);
  oracle::fill_uniform(x, rng);
  auto r = l2_normalize_flat(leaf(TensorT<double>(x)), true);
  REQUIRE(r.out->value.n == 3);
  REQUIRE(r.out->value.c == 8);
  for (int s = 0; s < 3; ++s) {
    double ss = 0.0;
    for (int i = 0; i < 8; ++i) {
      const double v = r.out->value.data[std::size_t(s) * 8 + i];
      ss += v * v;
    }
    CHECK(std::abs(std::sqrt(ss) - 1.0) <= 1e-6);
  }
}

TEST_CASE("pad_channels preserves content and norm") {
  Rng rng(91);
  TensorT<float> x(2, 13, 3, 3);
  oracle::fill_uniform(x, rng);
  auto xv = leaf(TensorT<float>(x));
  auto out = pad_channels(xv, 16);
  REQUIRE(out->value.c == 16);
  for (int s = 0; s < 2; ++s)
    for (int c = 0; c < 16; ++c)
      for (int y = 0; y < 3; ++y)
        for (int w = 0; w < 3; ++w) {
          if (c < 13)
            CHECK(out->value.at(s, c, y, w) == x.at(s, c, y, w));
          else
            CHECK(out->value.at(s, c, y, w) == 0.0f);
        }
  CHECK(out->value.sumsq() == x.sumsq());

  auto same = pad_channels(xv, 13);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same->value.data[i] == x.data[i]);

  TensorT<float> big(1, 20, 3, 3);
  CHECK_THROWS_AS(pad_channels(leaf(std::move(big)), 16), ShapeError);
}

TEST_CASE("euclidean_distance examples and subgradient at zero") {
  auto a = dtensor(1, 2, 1, 1, {3, 0});
  auto b = dtensor(1, 2, 1, 1, {0, 4});
  auto d = euclidean_distance(leaf(std::move(a)), leaf(std::move(b)));
  CHECK(d->value.data[0] == Catch::Approx(5.0));

  auto same1 = dtensor(1, 2, 1, 1, {1, 2});
  auto same2 = dtensor(1, 2, 1, 1, {1, 2});
  auto v1 = leaf(std::move(same1));
  auto d0 = euclidean_distance(v1, leaf(std::move(same2)));
  CHECK(d0->value.data[0] == 0.0);
  backward(d0);
  REQUIRE(v1->grad.numel() == 2);
  CHECK(v1->grad.data[0] == 0.0);
  CHECK(v1->grad.data[1] == 0.0);
}

TEST_CASE("linear graph finite differences sit at machine-epsilon scale") {
  Rng rng(3);
  TensorT<double> x(1, 4, 1, 1), w(2, 4, 1, 1), b(2, 1, 1, 1);
  oracle::fill_uniform(x, rng);
  oracle::fill_uniform(w, rng);
  oracle::fill_uniform(b, rng);
  std::vector<VarPtr<double>> leaves = {leaf(std::move(x)), leaf(std::move(w)),
                                        leaf(std::move(b))};
  auto build = [](const std::vector<VarPtr<double>>& ls) {
    auto y = fully_connected(ls[0], ls[1], ls[2]);
    std::vector<VarPtr<double>> terms;
    std::vector<double> coeffs;
    // Weighted sum of the two outputs keeps everything linear.
    TensorT<double> pick0(1, 2, 1, 1);
    pick0.data = {1.0, 0.5};
    return euclidean_distance(
        y, make_const(TensorT<double>(1, 2, 1, 1)));  // sqrt of quadratic: still smooth here
  };
  auto rep = finite_difference_check<double>(leaves, build);
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("grad-free forward builds no graph") {
  TensorT<float> x(1, 1, 3, 3), w(1, 1, 1, 1);
  x.fill(1.0f);
  w.data[0] = 2.0f;
  auto out = conv2d(make_const(x), make_const(w), 1, 0);
  CHECK_FALSE(out->requires_grad);
  CHECK(out->parents.empty());
}
