#include <cmath>
#include <random>
#include <thread>

#include "doctest.h"

#include "altpe/autodiff.hpp"
#include "altpe/errors.hpp"
#include "support/gradcheck.hpp"

using namespace altpe;
using ad::Tensor;

TEST_SUITE("autodiff") {

TEST_CASE("every op passes the finite-difference check") {
  for (const auto& op : gradcheck::op_cases()) {
    CAPTURE(op.name);
    std::mt19937_64 rng(1234);
    for (int instance = 0; instance < 5; ++instance) {
      auto inst = op.make(rng);
      const auto r = gradcheck::check(inst.fn, inst.inputs, rng);
      CHECK(r.checked > 0);
      CHECK(r.max_rel_error <= 1e-4);
    }
  }
}

TEST_CASE("forward values") {
  SUBCASE("identity matmul") {
    const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Tensor a = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    const Tensor p = ad::matmul(eye, a);
    CHECK(std::vector<double>(p.data().begin(), p.data().end()) ==
          std::vector<double>{1, 2, 3, 4, 5, 6});
  }
  SUBCASE("uniform softmax row") {
    const Tensor s = ad::softmax(Tensor::from({1, 4}, {2, 2, 2, 2}));
    for (double v : s.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("softmax rows sum to one, masked slots vanish") {
    std::mt19937_64 rng(2);
    const Tensor x = gradcheck::random_tensor(rng, {2, 3, 5}, false);
    std::vector<double> m(15, 0.0);
    m[1] = m[7] = m[14] = ad::kMaskedLogit;
    const Tensor s = ad::softmax(x, Tensor::from({1, 3, 5}, m));
    for (std::size_t row = 0; row < 6; ++row) {
      double total = 0.0;
      for (std::size_t c = 0; c < 5; ++c) total += s.data()[row * 5 + c];
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
    for (std::size_t g = 0; g < 2; ++g)
      for (std::size_t masked : {1u, 7u, 14u}) CHECK(s.data()[g * 15 + masked] <= 1e-30);
  }
  SUBCASE("layer norm output is standardised") {
    const Tensor x = Tensor::from({1, 4}, {1, 2, 3, 4});
    const Tensor y = ad::layer_norm(x, Tensor::from({4}, {1, 1, 1, 1}), Tensor::from({4}, {0, 0, 0, 0}));
    double mean = 0.0, var = 0.0;
    for (double v : y.data()) mean += v / 4.0;
    for (double v : y.data()) var += (v - mean) * (v - mean) / 4.0;
    CHECK(std::abs(mean) <= 1e-12);
    CHECK(var == doctest::Approx(1.25 / (1.25 + 1e-5)).epsilon(1e-12));
  }
  SUBCASE("heads round-trip") {
    std::mt19937_64 rng(4);
    const Tensor x = gradcheck::random_tensor(rng, {6, 8}, false);
    const Tensor back = ad::merge_heads(ad::split_heads(x, 2, 4), 2, 4);
    CHECK(std::vector<double>(back.data().begin(), back.data().end()) ==
          std::vector<double>(x.data().begin(), x.data().end()));
  }
}

TEST_CASE("gradient of sum of squares is 2x") {
  const Tensor x = Tensor::from({3}, {0.5, -1.0, 2.0}, true);
  ad::backward(ad::sum(ad::mul(x, x)));
  REQUIRE(x.has_grad());
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == -2.0);
  CHECK(x.grad()[2] == 4.0);
}

TEST_CASE("ignored targets receive zero gradient") {
  std::mt19937_64 rng(9);
  const Tensor logits = gradcheck::random_tensor(rng, {4, 5});
  const std::vector<int> targets{1, 3, 3, 0};
  ad::backward(ad::cross_entropy_with_ignore(logits, targets, 3));
  for (std::size_t row : {1u, 2u})
    for (std::size_t c = 0; c < 5; ++c) CHECK(logits.grad()[row * 5 + c] == 0.0);
  CHECK_THROWS_AS(ad::cross_entropy_with_ignore(logits, std::vector<int>{3, 3, 3, 3}, 3), DataError);
}

TEST_CASE("backward contract") {
  SUBCASE("constant loss is a no-op") {
    const Tensor w = Tensor::from({2}, {1, 2}, true);
    CHECK_NOTHROW(ad::backward(Tensor::scalar(3.0)));
    CHECK_FALSE(w.has_grad());
  }
  SUBCASE("non-scalar loss") {
    const Tensor w = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(ad::backward(ad::scale(w, 2.0)), ContractError);
    ad::Tape::current().clear();
  }
  SUBCASE("second backward without a new forward") {
    const Tensor w = Tensor::from({2}, {1, 2}, true);
    const Tensor loss = ad::sum(ad::mul(w, w));
    ad::backward(loss);
    CHECK(ad::Tape::current().size() == 0);
    CHECK_THROWS_AS(ad::backward(loss), ContractError);
  }
  SUBCASE("gradients accumulate across backward calls") {
    const Tensor w = Tensor::from({1}, {3.0}, true);
    ad::backward(ad::sum(w));
    ad::backward(ad::sum(w));
    CHECK(w.grad()[0] == 2.0);
  }
}

TEST_CASE("no-grad guard suppresses recording") {
  const Tensor w = Tensor::from({2}, {1, 2}, true);
  {
    ad::NoGradGuard guard;
    CHECK_FALSE(ad::grad_enabled());
    const Tensor y = ad::sum(ad::mul(w, w));
    CHECK(ad::Tape::current().size() == 0);
  }
  CHECK(ad::grad_enabled());
}

TEST_CASE("shape and numeric errors") {
  CHECK_THROWS_AS(ad::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(ad::add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
  CHECK_THROWS_AS(ad::add_bias(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  CHECK_THROWS_AS(ad::embedding_lookup(Tensor::zeros({4, 2}), std::vector<int>{4}), DataError);
  CHECK_THROWS_AS(ad::embedding_lookup(Tensor::zeros({4, 2}), std::vector<int>{-1}), DataError);
  const Tensor big = Tensor::from({1}, {1e308});
  CHECK_THROWS_AS(ad::scale(big, 10.0), NumericError);
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(1);
  const Tensor x = Tensor::from({1, 1000}, std::vector<double>(1000, 1.0));
  CHECK(ad::dropout(x, 0.1, rng, false).node() == x.node());
  CHECK(ad::dropout(x, 0.0, rng, true).node() == x.node());
  const Tensor y = ad::dropout(x, 0.1, rng, true);
  std::size_t dropped = 0;
  for (double v : y.data()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.9).epsilon(1e-15)));
    dropped += v == 0.0;
  }
  CHECK(dropped > 50);
  CHECK(dropped < 150);
}

TEST_CASE("tapes are per thread") {
  const Tensor w = Tensor::from({1}, {2.0}, true);
  const Tensor loss = ad::sum(ad::mul(w, w));
  std::size_t other = 99;
  std::thread([&] { other = ad::Tape::current().size(); }).join();
  CHECK(other == 0);
  CHECK(ad::Tape::current().size() > 0);
  ad::backward(loss);
}

}  // TEST_SUITE
