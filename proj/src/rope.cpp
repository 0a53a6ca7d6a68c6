#include "altpe/rope.hpp"

#include <cmath>
#include <string>

#include "altpe/errors.hpp"

namespace altpe {

void RopeConfig::validate() const {
  if (d_k <= 0 || d_k % 2 != 0) {
    throw ConfigError("rope d_k must be a positive even integer, got " +
                      std::to_string(d_k));
  }
  if (!(base > 0.0) || !std::isfinite(base)) {
    throw ConfigError("rope base must be positive");
  }
}

BlockTransform block_transform(PeriodicKind kind, double angle) {
  return {psi(kind, angle), phi(kind, angle)};
}

std::vector<double> theta_schedule(const RopeConfig& config) {
  config.validate();
  const int pairs = config.d_k / 2;
  std::vector<double> theta(static_cast<std::size_t>(pairs));
  for (int j = 0; j < pairs; ++j) {
    theta[static_cast<std::size_t>(j)] =
        std::pow(config.base, -2.0 * j / config.d_k);
  }
  return theta;
}

std::vector<double> rotate(std::span<const double> v, long position,
                           const RopeConfig& config) {
  if (v.size() != static_cast<std::size_t>(config.d_k)) {
    throw ShapeError("rope input has length " + std::to_string(v.size()) +
                     ", expected d_k = " + std::to_string(config.d_k));
  }
  const auto theta = theta_schedule(config);
  std::vector<double> out(v.size());
  const auto m = static_cast<double>(position);
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const auto block = block_transform(config.kind, m * theta[j]);
    const auto [x, y] = block.apply(v[2 * j], v[2 * j + 1]);
    out[2 * j] = x;
    out[2 * j + 1] = y;
  }
  return out;
}

RopeCoefficients rope_coefficients(const RopeConfig& config, std::size_t len) {
  const auto theta = theta_schedule(config);
  RopeCoefficients c;
  c.len = len;
  c.pairs = theta.size();
  c.psi.resize(len * c.pairs);
  c.phi.resize(len * c.pairs);
  for (std::size_t m = 0; m < len; ++m) {
    for (std::size_t j = 0; j < c.pairs; ++j) {
      const auto block =
          block_transform(config.kind, static_cast<double>(m) * theta[j]);
      c.psi[m * c.pairs + j] = block.psi_val;
      c.phi[m * c.pairs + j] = block.phi_val;
    }
  }
  return c;
}

double attention_logit(std::span<const double> q_rot, std::span<const double> k_rot) {
  if (q_rot.size() != k_rot.size()) {
    throw ShapeError("attention_logit: query and key lengths differ");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < q_rot.size(); ++i) dot += q_rot[i] * k_rot[i];
  return dot / std::sqrt(static_cast<double>(q_rot.size()));
}

}  // namespace altpe
