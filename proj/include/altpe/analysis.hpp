#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "altpe/periodic_kernels.hpp"

namespace altpe {

// Probes of encoding properties that need no trained model.

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
  /// max bin / min bin; +inf when some bin is empty.
  double uniformity_ratio = 0.0;

  std::size_t occupied_bins() const;
};

/// Histogram of every entry of the len x d_model table over equal-width bins
/// of the kind's range ([-1, 1], or [-pi, pi] for the sawtooth).
/// Throws ConfigError for bins < 10.
Histogram output_histogram(PeriodicKind kind, int d_model, int len, int bins,
                           double base = 10000.0);

struct ShiftStats {
  long shift = 0;
  double max_deviation = 0.0;
  double mean_deviation = 0.0;
};

struct ShiftProfile {
  std::vector<ShiftStats> per_shift;
  /// Range of phi^2 + psi^2 over every block and position visited.
  double min_block_gain = 0.0;
  double max_block_gain = 0.0;
};

/// For `trials` random unit q, k and positions m, n in [0, max_position],
/// measures |e(m, n) - e(m + s, n + s)| of the rotary logits for every shift s.
ShiftProfile shift_invariance_profile(PeriodicKind kind, int d_k, long max_position,
                                      std::span<const long> shifts, int trials,
                                      std::uint64_t seed, double base = 10000.0);

struct SlopeProfile {
  std::vector<double> points;
  std::vector<double> slopes;
  std::size_t skipped = 0;
  double min_slope = 0.0;
  double max_slope = 0.0;
};

/// Central-difference slopes of phi at each grid point. Points within
/// `exclusion` of a jump or kink are skipped and counted.
SlopeProfile slope_profile(PeriodicKind kind, std::span<const double> grid, double h = 1e-7,
                           double exclusion = 1e-6);

/// Distance from m to the nearest point where phi(kind, .) is not differentiable
/// (+inf for the sinusoid).
double distance_to_singularity(PeriodicKind kind, double m);

/// bin,lo,hi,count
void write_histogram_csv(std::ostream& out, const Histogram& h);
/// shift,max_deviation,mean_deviation
void write_shift_csv(std::ostream& out, const ShiftProfile& p);
/// x,slope
void write_slope_csv(std::ostream& out, const SlopeProfile& p);

}  // namespace altpe
