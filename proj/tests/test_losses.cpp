#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pagg/gradcheck.hpp"
#include "pagg/layers.hpp"
#include "pagg/losses.hpp"

using namespace pagg;

namespace {

// independent high-precision evaluation used as the oracle throughout
double ce_oracle(const std::vector<double>& logits, int64_t label) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double z = 0;
  for (double v : logits) z += std::exp(v - m);
  return m + std::log(z) - logits[size_t(label)];
}

double softermax_oracle(std::vector<double> x, int64_t k) {
  std::vector<size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] > x[b]; });
  double top = 0, all = 0;
  for (size_t i = 0; i < x.size(); ++i) all += std::exp(x[i]);
  for (int64_t i = 0; i < k; ++i) top += std::exp(x[order[size_t(i)]]);
  return -std::log(top / all);
}

}  // namespace

TEST_CASE("cross entropy hand cases") {
  auto uniform = Tensor<double>::from_data({1, 2}, {0.0, 0.0});
  CHECK(cross_entropy(uniform, {0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  auto saturated = Tensor<double>::from_data({1, 2}, {20.0, 0.0});
  CHECK(cross_entropy(saturated, {0}).item() == doctest::Approx(0.0).epsilon(1e-6));

  CHECK_THROWS_AS(cross_entropy(uniform, {2}), Error);
  CHECK_THROWS_AS(cross_entropy(uniform, {-1}), Error);
}

TEST_CASE("cross entropy matches the high-precision oracle and is shift invariant") {
  Rng rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    const int64_t n = 3, k = 6;
    auto logits = Tensor<double>::randn({n, k}, rng, 2.0);
    std::vector<int64_t> labels;
    for (int64_t i = 0; i < n; ++i) labels.push_back(int64_t(rng.uniform_int(uint64_t(k))));
    double expected = 0;
    for (int64_t i = 0; i < n; ++i) {
      std::vector<double> row(logits.data() + i * k, logits.data() + (i + 1) * k);
      expected += ce_oracle(row, labels[size_t(i)]);
    }
    expected /= double(n);
    CHECK(cross_entropy(logits, labels).item() == doctest::Approx(expected).epsilon(1e-12));

    auto shifted = add_scalar(logits, 7.25);
    CHECK(cross_entropy(shifted, labels).item() ==
          doctest::Approx(cross_entropy(logits, labels).item()).epsilon(1e-9));
  }
}

TEST_CASE("softermax hand case and exact zero at k equal to K") {
  auto x = Tensor<double>::from_data({3}, {2.0, 1.0, 0.0});
  CHECK(softermax(x, 2).item() == doctest::Approx(0.09434).epsilon(1e-3));
  // -ln((e^2+e^1)/(e^2+e^1+e^0)) evaluated directly
  const double expected = -std::log((std::exp(2.0) + std::exp(1.0)) /
                                    (std::exp(2.0) + std::exp(1.0) + 1.0));
  CHECK(softermax(x, 2).item() == doctest::Approx(expected).epsilon(1e-12));

  CHECK(softermax(x, 3).item() == 0.0);  // exactly, not approximately

  CHECK_THROWS_AS(softermax(x, 0), Error);
  CHECK_THROWS_AS(softermax(x, 4), Error);
}

TEST_CASE("softermax properties over random logits") {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t k = 2 + int64_t(rng.uniform_int(7));
    auto x = Tensor<double>::randn({k}, rng, 2.0);

    double prev = std::numeric_limits<double>::infinity();
    for (int64_t top = 1; top <= k; ++top) {
      const double loss = softermax(x, top).item();
      CHECK(loss >= 0.0);
      CHECK(loss <= prev + 1e-12);  // non-increasing in k
      CHECK(loss == doctest::Approx(softermax_oracle(
                        std::vector<double>(x.data(), x.data() + k), top))
                        .epsilon(1e-10));
      prev = loss;
    }

    // never exceeds the top-1 softmax surprise
    auto probs = softmax(Tensor<double>::from_data({1, k},
                                                   std::vector<double>(x.data(), x.data() + k)));
    double top1 = 0;
    for (int64_t i = 0; i < k; ++i) top1 = std::max(top1, probs.data()[i]);
    for (int64_t top = 1; top <= k; ++top)
      CHECK(softermax(x, top).item() <= -std::log(top1) + 1e-9);
  }
}

TEST_CASE("softermax top-k ties break to the lowest index") {
  // both entries equal: k=1 must select index 0, so the gradient treats
  // index 0 as selected
  auto x = Tensor<double>::from_data({2}, {1.0, 1.0}, true);
  GradTape<double> tape;
  auto loss = softermax(x, 1);
  tape.backward(loss);
  // grad = softmax - [selected] = (0.5,0.5) - (1,0)
  CHECK(x.grad()[0] == doctest::Approx(-0.5));
  CHECK(x.grad()[1] == doctest::Approx(0.5));
}

TEST_CASE("L4 reduces to pure CE or pure softermax at the lambda extremes") {
  Rng rng(23);
  auto patch_logits = Tensor<double>::randn({2, 4, 1, 3}, rng, 1.5);
  std::vector<int64_t> labels = {1, 3};

  LossConfig cfg;
  cfg.top_k = 2;

  cfg.lambda = 0.0;
  double ce_mean = 0;
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t p = 0; p < 3; ++p) {
      std::vector<double> col(4);
      for (int64_t c = 0; c < 4; ++c) col[size_t(c)] = patch_logits.data()[(n * 4 + c) * 3 + p];
      ce_mean += ce_oracle(col, labels[size_t(n)]);
    }
  ce_mean /= 6.0;
  CHECK(l4_loss(patch_logits, labels, cfg).item() == doctest::Approx(ce_mean).epsilon(1e-12));

  cfg.lambda = 1.0;
  double softer_mean = 0;
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t p = 0; p < 3; ++p) {
      std::vector<double> col(4);
      for (int64_t c = 0; c < 4; ++c) col[size_t(c)] = patch_logits.data()[(n * 4 + c) * 3 + p];
      softer_mean += softermax_oracle(col, cfg.top_k);
    }
  softer_mean /= 6.0;
  CHECK(l4_loss(patch_logits, labels, cfg).item() ==
        doctest::Approx(softer_mean).epsilon(1e-12));
  // lambda = 1 ignores the labels entirely
  CHECK(l4_loss(patch_logits, {0, 0}, cfg).item() ==
        doctest::Approx(softer_mean).epsilon(1e-12));
}

TEST_CASE("L4 single-patch hand mix") {
  auto patch = Tensor<double>::from_data({1, 3, 1, 1}, {2.0, 1.0, 0.0});
  LossConfig cfg;
  cfg.top_k = 2;
  cfg.lambda = 0.4;
  const double softer = softermax_oracle({2.0, 1.0, 0.0}, 2);
  const double ce = ce_oracle({2.0, 1.0, 0.0}, 1);
  CHECK(l4_loss(patch, {1}, cfg).item() ==
        doctest::Approx(0.4 * softer + 0.6 * ce).epsilon(1e-12));
}

TEST_CASE("softermax and L4 gradients match finite differences") {
  Rng rng(24);
  auto x = Tensor<double>::randn({6}, rng, 1.5, true);
  CHECK(fd_max_rel_error([&]() { return softermax(x, 2); }, {x}, 1e-5) < 1e-5);

  auto patches = Tensor<double>::randn({2, 5, 1, 4}, rng, 1.5, true);
  std::vector<int64_t> labels = {0, 4};
  LossConfig cfg;
  cfg.top_k = 3;
  CHECK(fd_max_rel_error([&]() { return l4_loss(patches, labels, cfg); }, {patches}, 1e-5) <
        1e-5);
}

TEST_CASE("total loss composes the weighted sum and reports components") {
  Rng rng(25);
  auto y_gs = Tensor<double>::randn({2, 4}, rng);
  auto y_pa = Tensor<double>::randn({2, 4}, rng);
  auto y = Tensor<double>::randn({2, 4}, rng);
  auto patches = Tensor<double>::randn({2, 4, 1, 3}, rng);
  std::vector<int64_t> labels = {0, 2};

  LossConfig cfg;  // default eta [0.1, 0.1, 1.0, 0.1], k=3, lambda=0.4
  auto result = total_loss(y_gs, y_pa, y, patches, labels, cfg);
  double expected = 0;
  for (int i = 0; i < 4; ++i) {
    CHECK(result.components[size_t(i)] >= 0.0);
    expected += cfg.eta[size_t(i)] * result.components[size_t(i)];
  }
  CHECK(result.total.item() == doctest::Approx(expected).epsilon(1e-6));

  // eta = [0,0,1,0] reduces to CE on the fused output
  cfg.eta = {0.0, 0.0, 1.0, 0.0};
  auto fused_only = total_loss(y_gs, y_pa, y, patches, labels, cfg);
  CHECK(fused_only.total.item() ==
        doctest::Approx(cross_entropy(y, labels).item()).epsilon(1e-12));
}

TEST_CASE("loss config validation") {
  LossConfig bad;
  bad.lambda = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = LossConfig();
  bad.eta[2] = -0.1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = LossConfig();
  bad.top_k = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}
