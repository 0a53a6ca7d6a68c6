#pragma once
// Central finite-difference checks for the autodiff ops, shared by the unit
// tests and the acceptance gate.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "altpe/autodiff.hpp"
#include "altpe/rope.hpp"

namespace gradcheck {

namespace ad = altpe::ad;
using ad::Tensor;

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

struct Result {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares backward() against central differences of loss = sum(f(x) * w),
/// where w is a fixed random weight per output element. The relative error of
/// one entry is |a - n| / max(|a|, |n|, floor).
inline Result check(const Fn& f, std::vector<Tensor> inputs, std::mt19937_64& rng,
                    double h = 1e-5, double floor = 1e-6) {
  ad::Tape::current().clear();
  Tensor probe;
  {
    ad::NoGradGuard guard;
    probe = f(inputs);
  }
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(probe.numel());
  for (auto& v : w) v = u(rng);
  const Tensor weights = Tensor::from(probe.shape(), w);
  auto loss_of = [&] { return ad::sum(ad::mul(f(inputs), weights)); };

  for (auto& x : inputs) x.zero_grad();
  ad::backward(loss_of());

  Result result;
  ad::NoGradGuard guard;
  for (auto& x : inputs) {
    if (!x.requires_grad()) continue;
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    auto data = x.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double up = loss_of().item();
      data[i] = orig - h;
      const double down = loss_of().item();
      data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) /
                         std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.checked;
    }
  }
  return result;
}

struct Instance {
  Fn fn;
  std::vector<Tensor> inputs;
};

struct OpCase {
  std::string name;
  std::function<Instance(std::mt19937_64&)> make;
};

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Tensor random_tensor(std::mt19937_64& rng, ad::Shape shape, bool requires_grad = true) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Every differentiable op, each with a generator of small random instances
/// (at most 64 elements per input).
inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  cases.push_back({"matmul", [](std::mt19937_64& r) {
                     const auto n = pick(r, 1, 5), k = pick(r, 1, 5), m = pick(r, 1, 5);
                     return Instance{[](const auto& x) { return ad::matmul(x[0], x[1]); },
                                     {random_tensor(r, {n, k}), random_tensor(r, {k, m})}};
                   }});
  cases.push_back({"matmul_batched", [](std::mt19937_64& r) {
                     const auto g = pick(r, 1, 3), n = pick(r, 1, 4), k = pick(r, 1, 4),
                                m = pick(r, 1, 4);
                     return Instance{[](const auto& x) { return ad::matmul(x[0], x[1]); },
                                     {random_tensor(r, {g, n, k}), random_tensor(r, {g, k, m})}};
                   }});
  cases.push_back({"transpose", [](std::mt19937_64& r) {
                     ad::Shape s = pick(r, 0, 1) ? ad::Shape{pick(r, 1, 3), pick(r, 1, 4), pick(r, 1, 4)}
                                                 : ad::Shape{pick(r, 1, 6), pick(r, 1, 6)};
                     return Instance{[](const auto& x) { return ad::transpose(x[0]); },
                                     {random_tensor(r, s)}};
                   }});
  cases.push_back({"reshape", [](std::mt19937_64& r) {
                     const auto n = pick(r, 1, 6), m = pick(r, 1, 6);
                     return Instance{[m, n](const auto& x) { return ad::reshape(x[0], {m, n}); },
                                     {random_tensor(r, {n, m})}};
                   }});
  cases.push_back({"add", [](std::mt19937_64& r) {
                     const ad::Shape s{pick(r, 1, 6), pick(r, 1, 6)};
                     return Instance{[](const auto& x) { return ad::add(x[0], x[1]); },
                                     {random_tensor(r, s), random_tensor(r, s)}};
                   }});
  cases.push_back({"add_bias", [](std::mt19937_64& r) {
                     const auto n = pick(r, 1, 6), m = pick(r, 1, 6);
                     return Instance{[](const auto& x) { return ad::add_bias(x[0], x[1]); },
                                     {random_tensor(r, {n, m}), random_tensor(r, {m})}};
                   }});
  cases.push_back({"mul", [](std::mt19937_64& r) {
                     const ad::Shape s{pick(r, 1, 6), pick(r, 1, 6)};
                     return Instance{[](const auto& x) { return ad::mul(x[0], x[1]); },
                                     {random_tensor(r, s), random_tensor(r, s)}};
                   }});
  cases.push_back({"scale", [](std::mt19937_64& r) {
                     const double c = std::uniform_real_distribution<double>(-3.0, 3.0)(r);
                     return Instance{[c](const auto& x) { return ad::scale(x[0], c); },
                                     {random_tensor(r, {pick(r, 1, 6), pick(r, 1, 6)})}};
                   }});
  cases.push_back({"relu", [](std::mt19937_64& r) {
                     Tensor x = random_tensor(r, {pick(r, 1, 6), pick(r, 1, 6)});
                     // Keep evaluation points away from the kink at 0.
                     for (auto& v : x.mutable_data()) {
                       if (std::abs(v) < 1e-2) v = v < 0 ? v - 0.05 : v + 0.05;
                     }
                     return Instance{[](const auto& x) { return ad::relu(x[0]); }, {x}};
                   }});
  cases.push_back({"sum", [](std::mt19937_64& r) {
                     return Instance{[](const auto& x) { return ad::sum(x[0]); },
                                     {random_tensor(r, {pick(r, 1, 6), pick(r, 1, 6)})}};
                   }});
  cases.push_back({"softmax", [](std::mt19937_64& r) {
                     return Instance{[](const auto& x) { return ad::softmax(x[0]); },
                                     {random_tensor(r, {pick(r, 1, 6), pick(r, 1, 8)})}};
                   }});
  cases.push_back({"softmax_masked", [](std::mt19937_64& r) {
                     const auto gm = pick(r, 1, 2), rep = pick(r, 1, 2), n = pick(r, 1, 3),
                                m = pick(r, 2, 5);
                     std::vector<double> mask(gm * n * m, 0.0);
                     for (std::size_t row = 0; row < gm * n; ++row) {
                       const auto keep = pick(r, 0, m - 1);
                       for (std::size_t c = 0; c < m; ++c) {
                         if (c != keep && pick(r, 0, 2) == 0) mask[row * m + c] = ad::kMaskedLogit;
                       }
                     }
                     const Tensor mt = Tensor::from({gm, n, m}, mask);
                     return Instance{[mt](const auto& x) { return ad::softmax(x[0], mt); },
                                     {random_tensor(r, {gm * rep, n, m})}};
                   }});
  cases.push_back({"layer_norm", [](std::mt19937_64& r) {
                     const auto n = pick(r, 1, 5), d = pick(r, 2, 8);
                     return Instance{
                         [](const auto& x) { return ad::layer_norm(x[0], x[1], x[2]); },
                         {random_tensor(r, {n, d}), random_tensor(r, {d}), random_tensor(r, {d})}};
                   }});
  cases.push_back({"embedding_lookup", [](std::mt19937_64& r) {
                     const auto v = pick(r, 1, 6), d = pick(r, 1, 6), n = pick(r, 1, 8);
                     std::vector<int> ids(n);
                     for (auto& id : ids) id = static_cast<int>(pick(r, 0, v - 1));
                     return Instance{[ids](const auto& x) { return ad::embedding_lookup(x[0], ids); },
                                     {random_tensor(r, {v, d})}};
                   }});
  cases.push_back({"split_heads", [](std::mt19937_64& r) {
                     const auto b = pick(r, 1, 2), t = pick(r, 1, 3), h = pick(r, 1, 3),
                                dk = pick(r, 1, 3);
                     return Instance{[b, h](const auto& x) { return ad::split_heads(x[0], b, h); },
                                     {random_tensor(r, {b * t, h * dk})}};
                   }});
  cases.push_back({"merge_heads", [](std::mt19937_64& r) {
                     const auto b = pick(r, 1, 2), t = pick(r, 1, 3), h = pick(r, 1, 3),
                                dk = pick(r, 1, 3);
                     return Instance{[b, h](const auto& x) { return ad::merge_heads(x[0], b, h); },
                                     {random_tensor(r, {b * h, t, dk})}};
                   }});
  cases.push_back({"block_rotate", [](std::mt19937_64& r) {
                     const auto g = pick(r, 1, 3), t = pick(r, 1, 4), pairs = pick(r, 1, 3);
                     const auto kind = altpe::kAllKinds[pick(r, 0, 3)];
                     auto coeffs = std::make_shared<altpe::RopeCoefficients>(altpe::rope_coefficients(
                         {static_cast<int>(2 * pairs), 10000.0, kind}, t));
                     return Instance{[coeffs](const auto& x) { return ad::block_rotate(x[0], *coeffs); },
                                     {random_tensor(r, {g, t, 2 * pairs})}};
                   }});
  cases.push_back({"dropout", [](std::mt19937_64& r) {
                     const std::uint64_t seed = r();
                     return Instance{[seed](const auto& x) {
                                       std::mt19937_64 mask_rng(seed);
                                       return ad::dropout(x[0], 0.3, mask_rng, true);
                                     },
                                     {random_tensor(r, {pick(r, 1, 6), pick(r, 1, 6)})}};
                   }});
  cases.push_back({"cross_entropy_with_ignore", [](std::mt19937_64& r) {
                     const auto n = pick(r, 1, 6), v = pick(r, 2, 8);
                     const int ignore = static_cast<int>(v);  // never a real class
                     std::vector<int> targets(n);
                     for (auto& t : targets) {
                       t = pick(r, 0, 3) == 0 ? ignore : static_cast<int>(pick(r, 0, v - 1));
                     }
                     targets[pick(r, 0, n - 1)] = static_cast<int>(pick(r, 0, v - 1));
                     return Instance{[targets, ignore](const auto& x) {
                                       return ad::cross_entropy_with_ignore(x[0], targets, ignore);
                                     },
                                     {random_tensor(r, {n, v})}};
                   }});
  return cases;
}

}  // namespace gradcheck
