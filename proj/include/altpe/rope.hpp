#pragma once

#include <array>
#include <span>
#include <vector>

#include "altpe/periodic_kernels.hpp"

namespace altpe {

struct RopeConfig {
  int d_k = 16;
  double base = 10000.0;
  PeriodicKind kind = PeriodicKind::Sinusoidal;

  void validate() const;
};

/// One 2x2 block [[psi, -phi], [phi, psi]] of the rotary transform.
///
/// Orthogonal only for the sinusoidal pair; in general it is a rotation
/// scaled by sqrt(phi^2 + psi^2).
struct BlockTransform {
  double psi_val = 1.0;
  double phi_val = 0.0;

  std::array<double, 2> apply(double x, double y) const {
    return {psi_val * x - phi_val * y, phi_val * x + psi_val * y};
  }
  double determinant() const { return psi_val * psi_val + phi_val * phi_val; }
};

BlockTransform block_transform(PeriodicKind kind, double angle);

/// theta_j = base^(-2j/d_k), j = 0 .. d_k/2 - 1.
std::vector<double> theta_schedule(const RopeConfig& config);

/// Applies the block-diagonal transform R(m) to v; pair j is (v[2j], v[2j+1]).
std::vector<double> rotate(std::span<const double> v, long position,
                           const RopeConfig& config);

/// Per-position transform coefficients for positions [0, len):
/// psi/phi values laid out as len x (d_k/2), row-major.
struct RopeCoefficients {
  std::size_t len = 0;
  std::size_t pairs = 0;
  std::vector<double> psi;
  std::vector<double> phi;
};

RopeCoefficients rope_coefficients(const RopeConfig& config, std::size_t len);

/// q . k / sqrt(d_k). Throws ShapeError on length mismatch.
double attention_logit(std::span<const double> q_rot, std::span<const double> k_rot);

}  // namespace altpe
