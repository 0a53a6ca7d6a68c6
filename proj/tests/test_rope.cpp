#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"

#include "altpe/errors.hpp"
#include "altpe/rope.hpp"

using namespace altpe;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = d(rng);
  return v;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("rope") {

TEST_CASE("config validation") {
  CHECK_THROWS_AS((RopeConfig{3, 1e4, PeriodicKind::Sinusoidal}.validate()), ConfigError);
  CHECK_THROWS_AS((RopeConfig{0, 1e4, PeriodicKind::Sinusoidal}.validate()), ConfigError);
  CHECK_THROWS_AS((RopeConfig{4, 0.0, PeriodicKind::Sinusoidal}.validate()), ConfigError);
}

TEST_CASE("theta schedule") {
  const auto t4 = theta_schedule({4, 1e4, PeriodicKind::Sinusoidal});
  REQUIRE(t4.size() == 2);
  CHECK(t4[0] == 1.0);
  CHECK(t4[1] == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(theta_schedule({2, 1e4, PeriodicKind::Sinusoidal}) == std::vector<double>{1.0});
  for (double t : theta_schedule({16, 1.0, PeriodicKind::Sinusoidal})) CHECK(t == 1.0);
  const auto t64 = theta_schedule({64, 1e4, PeriodicKind::Sinusoidal});
  for (std::size_t j = 1; j < t64.size(); ++j) CHECK(t64[j] < t64[j - 1]);
}

TEST_CASE("rotate examples") {
  const std::vector<double> v{0.3, -1.2, 2.0, 0.7};
  CHECK(rotate(v, 0, {4, 1e4, PeriodicKind::Sinusoidal}) == v);

  const std::vector<double> e0{1.0, 0.0};
  const auto sq = rotate(e0, 0, {2, 1e4, PeriodicKind::Square});
  CHECK(sq == std::vector<double>{-1.0, -1.0});

  // theta_0 = 1 and positions are integers, so the quarter turn is checked on the block.
  const auto quarter = block_transform(PeriodicKind::Sinusoidal, kHalfPi).apply(1.0, 0.0);
  CHECK(quarter[0] == 0.0);
  CHECK(quarter[1] == 1.0);

  CHECK_THROWS_AS(rotate(std::vector<double>(3), 1, {4, 1e4, PeriodicKind::Sinusoidal}), ShapeError);
}

TEST_CASE("pair j uses the block at angle m * theta_j") {
  std::mt19937_64 rng(3);
  for (auto kind : kAllKinds) {
    const RopeConfig cfg{8, 1e4, kind};
    const auto theta = theta_schedule(cfg);
    const auto v = random_vector(rng, 8);
    for (long m : {0L, 1L, 7L, 300L}) {
      const auto out = rotate(v, m, cfg);
      for (std::size_t j = 0; j < 4; ++j) {
        const double a = static_cast<double>(m) * theta[j];
        const double p = phi(kind, a), s = psi(kind, a);
        CHECK(out[2 * j] == doctest::Approx(s * v[2 * j] - p * v[2 * j + 1]).epsilon(1e-14));
        CHECK(out[2 * j + 1] == doctest::Approx(p * v[2 * j] + s * v[2 * j + 1]).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("attention logit") {
  CHECK(attention_logit(std::vector<double>{1, 0, 0, 0}, std::vector<double>{1, 0, 0, 0}) == 0.5);
  CHECK(attention_logit(std::vector<double>{1, 0, 0, 0}, std::vector<double>{0, 1, 0, 0}) == 0.0);
  CHECK_THROWS_AS(attention_logit(std::vector<double>(4), std::vector<double>(2)), ShapeError);

  std::mt19937_64 rng(5);
  const RopeConfig cfg{16, 1e4, PeriodicKind::Sinusoidal};
  const auto q = random_vector(rng, 16), k = random_vector(rng, 16);
  for (long m : {0L, 3L, 99L}) {
    CHECK(std::abs(attention_logit(rotate(q, m, cfg), rotate(k, m, cfg)) - attention_logit(q, k)) <= 1e-12);
  }
}

TEST_CASE("sinusoidal shift invariance") {
  std::mt19937_64 rng(7);
  const RopeConfig cfg{16, 1e4, PeriodicKind::Sinusoidal};
  std::uniform_int_distribution<long> pos(0, 256);
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = random_vector(rng, 16), k = random_vector(rng, 16);
    const long m = pos(rng), n = pos(rng);
    const double e = attention_logit(rotate(q, m, cfg), rotate(k, n, cfg));
    for (long s : {1L, 5L, 64L}) {
      CHECK(std::abs(e - attention_logit(rotate(q, m + s, cfg), rotate(k, n + s, cfg))) <= 1e-9);
    }
  }
}

TEST_CASE("block gains") {
  for (double a : {0.0, 0.3, 1.0, 2.5, 4.0, 100.0}) {
    CHECK(block_transform(PeriodicKind::Square, a).determinant() == 2.0);
    CHECK(std::abs(block_transform(PeriodicKind::Sinusoidal, a).determinant() - 1.0) <= 1e-12);
  }
  CHECK(block_transform(PeriodicKind::Triangular, kPi / 4).determinant() == doctest::Approx(0.5).epsilon(1e-15));

  std::mt19937_64 rng(11);
  const RopeConfig cfg{8, 1e4, PeriodicKind::Square};
  for (long m : {0L, 1L, 17L, 1000L}) {
    const auto v = random_vector(rng, 8);
    CHECK(norm(rotate(v, m, cfg)) == doctest::Approx(std::sqrt(2.0) * norm(v)).epsilon(1e-14));
  }
}

TEST_CASE("rotate is linear") {
  std::mt19937_64 rng(13);
  for (auto kind : kAllKinds) {
    const RopeConfig cfg{8, 1e4, kind};
    const auto v = random_vector(rng, 8), w = random_vector(rng, 8);
    const double a = 0.7, b = -1.9;
    std::vector<double> mix(8);
    for (std::size_t i = 0; i < 8; ++i) mix[i] = a * v[i] + b * w[i];
    const auto rv = rotate(v, 21, cfg), rw = rotate(w, 21, cfg), rm = rotate(mix, 21, cfg);
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(rm[i] - (a * rv[i] + b * rw[i])) <= 1e-12);
  }
}

TEST_CASE("coefficient table agrees with rotate") {
  const RopeConfig cfg{6, 1e4, PeriodicKind::Triangular};
  const auto c = rope_coefficients(cfg, 10);
  CHECK(c.len == 10);
  CHECK(c.pairs == 3);
  const auto theta = theta_schedule(cfg);
  for (std::size_t m = 0; m < 10; ++m)
    for (std::size_t j = 0; j < 3; ++j) {
      const double a = static_cast<double>(m) * theta[j];
      CHECK(c.psi[m * 3 + j] == psi(cfg.kind, a));
      CHECK(c.phi[m * 3 + j] == phi(cfg.kind, a));
    }
}

}  // TEST_SUITE
