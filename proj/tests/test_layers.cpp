#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pagg/gradcheck.hpp"
#include "pagg/layers.hpp"

using namespace pagg;

TEST_CASE("conv2d with a 1x1 identity kernel is an identity map") {
  Rng rng(1);
  auto x = Tensor<float>::randn({2, 1, 4, 5}, rng);
  auto w = Tensor<float>::from_data({1, 1, 1, 1}, {1.f});
  auto b = Tensor<float>::from_data({1}, {0.f});
  auto y = conv2d(x, w, b, 1, 1, 0, 0);
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d output shapes follow the floor formulas") {
  // 32x128 input: three 2x2 pools, then module 7 (3x3, pad 0x1) and
  // module 8 (2x3, stride 1x2, pad 0x1) leave a 1x8 patch grid.
  Rng rng(2);
  auto x = Tensor<float>::randn({1, 2, 32, 128}, rng);
  auto pool3 = maxpool2x2(maxpool2x2(maxpool2x2(x)));
  REQUIRE(pool3.shape() == Shape{1, 2, 4, 16});
  auto w7 = Tensor<float>::randn({3, 2, 3, 3}, rng, 0.5f);
  auto m7 = conv2d(pool3, w7, Tensor<float>(), 1, 1, 0, 1);
  REQUIRE(m7.shape() == Shape{1, 3, 2, 16});
  auto w8 = Tensor<float>::randn({3, 3, 2, 3}, rng, 0.5f);
  auto m8 = conv2d(m7, w8, Tensor<float>(), 1, 2, 0, 1);
  CHECK(m8.shape() == Shape{1, 3, 1, 8});
}

TEST_CASE("conv2d matches an independent quadruple-loop oracle") {
  Rng rng(3);
  auto x = Tensor<double>::randn({1, 1, 4, 4}, rng);
  auto w = Tensor<double>::randn({1, 1, 3, 3}, rng);
  auto y = conv2d(x, w, Tensor<double>(), 1, 1, 0, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  for (int64_t oy = 0; oy < 2; ++oy) {
    for (int64_t ox = 0; ox < 2; ++ox) {
      double acc = 0;
      for (int64_t ky = 0; ky < 3; ++ky)
        for (int64_t kx = 0; kx < 3; ++kx)
          acc += w.data()[ky * 3 + kx] * x.data()[(oy + ky) * 4 + (ox + kx)];
      CHECK(y.data()[oy * 2 + ox] == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d rejects kernels larger than the padded input") {
  Rng rng(4);
  auto x = Tensor<float>::randn({1, 1, 2, 2}, rng);
  auto w = Tensor<float>::randn({1, 1, 5, 5}, rng);
  CHECK_THROWS_AS(conv2d(x, w, Tensor<float>(), 1, 1, 1, 1), Error);
}

TEST_CASE("global_avg_pool computes per-channel means") {
  auto constant = Tensor<float>::full({2, 3, 4, 4}, 2.5f);
  auto y = global_avg_pool(constant);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(2.5f));

  auto m = Tensor<float>::from_data({1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f});
  CHECK(global_avg_pool(m).data()[0] == doctest::Approx(2.5f));

  Rng rng(5);
  auto x = Tensor<float>::randn({2, 3, 5, 7}, rng);
  auto g = global_avg_pool(x);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 3; ++c) {
      double acc = 0;
      for (int64_t h = 0; h < 5; ++h)
        for (int64_t w = 0; w < 7; ++w) acc += x.data()[((n * 3 + c) * 5 + h) * 7 + w];
      CHECK(g.data()[n * 3 + c] == doctest::Approx(acc / 35.0).epsilon(1e-6));
    }
}

TEST_CASE("global_max_pool picks the strongest patch per class") {
  // two patches with per-class probabilities (0.2,0.8) and (0.5,0.5)
  auto p = Tensor<float>::from_data({1, 2, 1, 2}, {0.2f, 0.5f, 0.8f, 0.5f});
  auto q = global_max_pool(p);
  CHECK(q.data()[0] == doctest::Approx(0.5f));
  CHECK(q.data()[1] == doctest::Approx(0.8f));

  auto uniform = Tensor<float>::full({1, 4, 1, 6}, 0.25f);
  auto qu = global_max_pool(uniform);
  for (int64_t i = 0; i < 4; ++i) CHECK(qu.data()[i] == doctest::Approx(0.25f));
}

TEST_CASE("global_max_pool of patch distributions has mass at least 1") {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const int64_t k = 3 + int64_t(rng.uniform_int(5));
    const int64_t wp = 2 + int64_t(rng.uniform_int(9));
    Tensor<float> probs(Shape{1, k, 1, wp});
    for (int64_t p = 0; p < wp; ++p) {
      double z = 0;
      std::vector<double> e(static_cast<size_t>(k));
      for (int64_t c = 0; c < k; ++c) {
        e[size_t(c)] = std::exp(rng.uniform(-3.0, 3.0));
        z += e[size_t(c)];
      }
      for (int64_t c = 0; c < k; ++c) probs.data()[c * wp + p] = float(e[size_t(c)] / z);
    }
    auto q = global_max_pool(probs);
    double mass = 0;
    for (int64_t c = 0; c < k; ++c) mass += q.data()[c];
    CHECK(mass >= 1.0 - 1e-6);
  }
}

TEST_CASE("maxpool2x2 values and error cases") {
  auto constant = Tensor<float>::full({1, 1, 4, 4}, 3.f);
  auto y = maxpool2x2(constant);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 3.f);

  auto m = Tensor<float>::from_data({1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f});
  CHECK(maxpool2x2(m).data()[0] == 4.f);

  Rng rng(7);
  auto x = Tensor<float>::randn({1, 2, 4, 6}, rng);
  auto pooled = maxpool2x2(x);
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t oy = 0; oy < 2; ++oy)
      for (int64_t ox = 0; ox < 3; ++ox) {
        float best = -1e30f;
        for (int64_t dy = 0; dy < 2; ++dy)
          for (int64_t dx = 0; dx < 2; ++dx)
            best = std::max(best, x.data()[(c * 4 + oy * 2 + dy) * 6 + ox * 2 + dx]);
        CHECK(pooled.data()[(c * 2 + oy) * 3 + ox] == best);
      }

  auto odd = Tensor<float>::full({1, 1, 3, 4}, 1.f);
  CHECK_THROWS_AS(maxpool2x2(odd), Error);
}

TEST_CASE("batch_norm normalizes and its eval mode is a pure function") {
  // an already zero-mean unit-variance batch with identity affine passes
  // through up to epsilon effects
  auto bn = BatchNorm2d<double>::make(1);
  auto x = Tensor<double>::from_data({2, 1, 1, 2}, {-1.0, 1.0, 1.0, -1.0});
  auto y = batch_norm(x, bn, Mode::Train);
  for (int64_t i = 0; i < 4; ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-4));

  // eval forward is idempotent: repeated calls see frozen statistics
  auto e1 = batch_norm(x, bn, Mode::Eval);
  auto e2 = batch_norm(x, bn, Mode::Eval);
  for (int64_t i = 0; i < 4; ++i) CHECK(e1.data()[i] == e2.data()[i]);
  CHECK(bn.running_var.data()[0] > 0.0);

  auto single = Tensor<double>::from_data({1, 1, 1, 2}, {0.0, 1.0});
  CHECK_THROWS_AS(batch_norm(single, bn, Mode::Train), Error);
}

TEST_CASE("batch_norm gradient matches finite differences") {
  Rng rng(8);
  auto x = Tensor<double>::randn({3, 2, 2, 3}, rng, 1.0, true);
  auto bn = std::make_shared<BatchNorm2d<double>>(BatchNorm2d<double>::make(2));
  bn->gamma = Tensor<double>::from_data({2}, {1.2, 0.7}, true);
  bn->beta = Tensor<double>::from_data({2}, {0.1, -0.2}, true);
  auto mix = Tensor<double>::randn({3, 2, 2, 3}, rng);
  auto loss = [=]() { return sum(mul(batch_norm(x, *bn, Mode::Train), mix)); };
  CHECK(fd_max_rel_error(loss, {x, bn->gamma, bn->beta}, 1e-5) < 1e-5);
}

TEST_CASE("linear layer semantics") {
  auto eye = Tensor<float>::from_data({2, 2}, {1.f, 0.f, 0.f, 1.f});
  auto zero_b = Tensor<float>::from_data({2}, {0.f, 0.f});
  auto x = Tensor<float>::from_data({1, 2}, {3.f, -4.f});
  auto y = linear(x, eye, zero_b);
  CHECK(y.data()[0] == 3.f);
  CHECK(y.data()[1] == -4.f);

  auto zero_w = Tensor<float>::from_data({2, 2}, {0.f, 0.f, 0.f, 0.f});
  auto b = Tensor<float>::from_data({2}, {1.5f, -2.f});
  auto yb = linear(x, zero_w, b);
  CHECK(yb.data()[0] == 1.5f);
  CHECK(yb.data()[1] == -2.f);

  Rng rng(9);
  auto xr = Tensor<double>::randn({3, 4}, rng);
  auto wr = Tensor<double>::randn({4, 5}, rng);
  auto br = Tensor<double>::randn({5}, rng);
  auto yr = linear(xr, wr, br);
  for (int64_t n = 0; n < 3; ++n)
    for (int64_t e = 0; e < 5; ++e) {
      double acc = br.data()[e];
      for (int64_t d = 0; d < 4; ++d) acc += xr.data()[n * 4 + d] * wr.data()[d * 5 + e];
      CHECK(yr.data()[n * 5 + e] == doctest::Approx(acc).epsilon(1e-12));
    }

  CHECK_THROWS_AS(linear(x, Tensor<float>::from_data({3, 2}, {0, 0, 0, 0, 0, 0}), b), Error);
}

TEST_CASE("dropout identity cases and keep fraction") {
  Rng rng(10);
  auto x = Tensor<float>::randn({4, 8}, rng);

  Rng r0(1);
  auto zero_rate = dropout(x, 0.0, Mode::Train, r0);
  CHECK(zero_rate.same_storage(x));

  Rng r1(1);
  auto eval = dropout(x, 0.3, Mode::Eval, r1);
  CHECK(eval.same_storage(x));

  CHECK_THROWS_AS(dropout(x, 1.0, Mode::Train, r1), Error);

  // empirical keep fraction over 1e6 draws within 1e-2 of 0.7
  auto big = Tensor<float>::full({1000, 1000}, 1.f);
  Rng r2(77);
  auto dropped = dropout(big, 0.3, Mode::Train, r2);
  int64_t kept = 0;
  for (int64_t i = 0; i < dropped.numel(); ++i)
    if (dropped.data()[i] != 0.f) ++kept;
  const double frac = double(kept) / double(dropped.numel());
  CHECK(frac == doctest::Approx(0.7).epsilon(0.015));
  // survivors are scaled by 1/(1-rate)
  for (int64_t i = 0; i < 64; ++i)
    if (dropped.data()[i] != 0.f) CHECK(dropped.data()[i] == doctest::Approx(1.f / 0.7f));
}

TEST_CASE("softmax rows are distributions and shift-invariant") {
  auto flat = softmax(Tensor<double>::from_data({1, 2}, {0.0, 0.0}));
  CHECK(flat.data()[0] == doctest::Approx(0.5));
  CHECK(flat.data()[1] == doctest::Approx(0.5));

  auto probs = softmax(Tensor<double>::from_data({1, 3}, {2.0, 1.0, 0.0}));
  CHECK(probs.data()[0] == doctest::Approx(0.66524095577482).epsilon(1e-9));
  CHECK(probs.data()[1] == doctest::Approx(0.24472847105479764).epsilon(1e-9));
  CHECK(probs.data()[2] == doctest::Approx(0.09003057317038046).epsilon(1e-9));

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = Tensor<double>::randn({4, 6}, rng, 2.0);
    auto shifted = add_scalar(x, 13.5);
    auto a = softmax(x);
    auto b = softmax(shifted);
    for (int64_t r = 0; r < 4; ++r) {
      double row_sum = 0;
      for (int64_t c = 0; c < 6; ++c) {
        row_sum += a.data()[r * 6 + c];
        CHECK(a.data()[r * 6 + c] == doctest::Approx(b.data()[r * 6 + c]).epsilon(1e-9));
        CHECK(a.data()[r * 6 + c] > 0.0);
        CHECK(a.data()[r * 6 + c] < 1.0);
      }
      CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("softmax_channels normalizes every spatial position") {
  Rng rng(12);
  auto x = Tensor<double>::randn({2, 5, 1, 4}, rng, 2.0);
  auto y = softmax_channels(x);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t p = 0; p < 4; ++p) {
      double z = 0;
      for (int64_t c = 0; c < 5; ++c) z += y.data()[(n * 5 + c) * 4 + p];
      CHECK(z == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("rowwise_lerp realizes the fusion combination exactly") {
  auto gamma = Tensor<float>::from_data({2, 1}, {0.5f, 0.25f});
  auto a = Tensor<float>::from_data({2, 2}, {1.f, 0.f, 4.f, 0.f});
  auto b = Tensor<float>::from_data({2, 2}, {0.f, 1.f, 0.f, 4.f});
  auto y = rowwise_lerp(gamma, a, b);
  CHECK(y.data()[0] == 0.5f);
  CHECK(y.data()[1] == 0.5f);
  CHECK(y.data()[2] == 1.f);
  CHECK(y.data()[3] == 3.f);
}
