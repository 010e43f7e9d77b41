#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pagg/gradcheck.hpp"
#include "pagg/tensor.hpp"

using namespace pagg;

TEST_CASE("tensor shape and storage invariants") {
  Tensor<float> t(Shape{2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.shape() == Shape{2, 3});
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 0}), Error);
  CHECK_THROWS_AS(Tensor<float>(Shape{-1}), Error);
  CHECK_THROWS_AS(Tensor<float>::from_data({2, 2}, {1.f, 2.f, 3.f}), Error);

  Tensor<float> copy = t;  // handles share storage
  copy.data()[0] = 5.f;
  CHECK(t.data()[0] == 5.f);
  CHECK(t.same_storage(copy));
}

TEST_CASE("backward of sum is all-ones") {
  auto w = Tensor<double>::from_data({3}, {1.0, 2.0, 3.0}, true);
  GradTape<double> tape;
  auto loss = sum(w);
  tape.backward(loss);
  for (int i = 0; i < 3; ++i) CHECK(w.grad()[i] == doctest::Approx(1.0));
}

TEST_CASE("backward of sum(w*w) doubles the input") {
  auto w = Tensor<double>::from_data({3}, {1.0, 2.0, 3.0}, true);
  GradTape<double> tape;
  auto loss = sum(mul(w, w));
  tape.backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(2.0));
  CHECK(w.grad()[1] == doctest::Approx(4.0));
  CHECK(w.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("gradients accumulate across multiple uses of a leaf") {
  auto w = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
  GradTape<double> tape;
  auto loss = sum(add(w, w));  // d/dw = 2
  tape.backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(2.0));
  CHECK(w.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("backward rejects non-scalar and detached losses") {
  auto w = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
  {
    GradTape<double> tape;
    auto y = mul(w, w);
    CHECK_THROWS_AS(tape.backward(y), Error);  // not scalar
  }
  {
    Tensor<double> detached = Tensor<double>::scalar(3.0);
    GradTape<double> tape;
    auto y = sum(mul(w, w));
    (void)y;
    CHECK_THROWS_AS(tape.backward(detached), Error);
  }
  {
    GradTape<double> outer;
    Tensor<double> from_other;
    {
      GradTape<double> inner;
      from_other = sum(mul(w, w));
    }
    CHECK_THROWS_AS(outer.backward(from_other), Error);  // recorded on another tape
  }
}

TEST_CASE("elementwise forward values") {
  auto x = Tensor<double>::from_data({3}, {-1.0, 0.0, 2.0});
  auto r = relu(x);
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 0.0);
  CHECK(r.data()[2] == 2.0);

  auto s = sigmoid(Tensor<double>::from_data({1}, {0.0}));
  CHECK(s.data()[0] == doctest::Approx(0.5));

  auto a = Tensor<double>::from_data({2}, {1.0, 2.0});
  auto b = Tensor<double>::from_data({2}, {3.0, 5.0});
  CHECK(add(a, b).data()[1] == 7.0);
  CHECK(mul(a, b).data()[1] == 10.0);
  CHECK(scale(a, 3.0).data()[0] == 3.0);
  CHECK(add_scalar(a, -1.0).data()[0] == 0.0);
  CHECK_THROWS_AS(add(a, Tensor<double>::from_data({3}, {1, 2, 3})), Error);
}

TEST_CASE("log(exp(x)) round-trips on random inputs") {
  Rng rng(42);
  auto x = Tensor<double>(Shape{64});
  for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform(-5.0, 5.0);
  auto y = log_op(exp_op(x));
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("three-layer composition matches finite differences below 1e-6") {
  Rng rng(7);
  auto w1 = Tensor<double>::randn({8, 1}, rng, 0.8, true);
  auto w2 = Tensor<double>::randn({8, 1}, rng, 0.8, true);
  auto w3 = Tensor<double>::randn({8, 1}, rng, 0.8, true);
  // smooth three-layer chain: sigmoid -> exp-scale -> weighted sum
  auto loss_fn = [&]() {
    auto h1 = sigmoid(mul(w1, w2));
    auto h2 = mul(h1, exp_op(scale(w3, 0.5)));
    return sum(mul(h2, h2));
  };
  const double err = fd_max_rel_error(loss_fn, {w1, w2, w3}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("relu and kinked ops stay below 1e-4 on kink-avoiding inputs") {
  Rng rng(11);
  auto w = Tensor<double>(Shape{32}, true);
  for (int64_t i = 0; i < w.numel(); ++i) {
    double v = rng.uniform(0.2, 1.5);
    w.data()[i] = rng.bernoulli(0.5) ? v : -v;  // bounded away from the kink
  }
  auto loss_fn = [&]() { return sum(mul(relu(w), relu(w))); };
  CHECK(fd_max_rel_error(loss_fn, {w}, 1e-5) < 1e-4);
}

TEST_CASE("two backward passes from the same graph state are bit-identical") {
  Rng rng(3);
  auto w = Tensor<double>::randn({16}, rng, 1.0, true);
  GradTape<double> tape;
  auto loss = sum(mul(sigmoid(w), exp_op(scale(w, 0.25))));

  w.zero_grad();
  tape.backward(loss);
  std::vector<double> first(w.grad(), w.grad() + w.numel());

  w.zero_grad();
  loss.zero_grad();
  tape.backward(loss);
  for (int64_t i = 0; i < w.numel(); ++i) CHECK(w.grad()[i] == first[size_t(i)]);
}

TEST_CASE("forward without a tape allocates no gradient state") {
  auto w = Tensor<double>::from_data({4}, {1, 2, 3, 4}, true);
  auto y = mul(sigmoid(w), w);
  CHECK(!y.has_grad());
  CHECK(!y.requires_grad());  // nothing recorded
  CHECK(!w.has_grad());
}

TEST_CASE("finite checks flag catches NaN outputs") {
  finite_checks() = true;
  auto x = Tensor<double>::from_data({2}, {-1.0, 0.5});
  CHECK_THROWS_AS(log_op(x), Error);  // log of a negative value
  finite_checks() = false;
  CHECK_NOTHROW(log_op(x));
}

TEST_CASE("rng streams are deterministic and serializable") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(9);
  c.normal();
  const std::string state = c.serialize();
  Rng d;
  d.deserialize(state);
  for (int i = 0; i < 50; ++i) CHECK(c.normal() == d.normal());

  // child streams differ from the parent and from each other
  Rng root(5);
  CHECK(root.child("a").next_u64() != root.child("b").next_u64());
  CHECK(root.child(1).next_u64() != root.child(2).next_u64());
}
