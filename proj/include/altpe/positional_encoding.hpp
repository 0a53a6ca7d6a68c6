#pragma once

#include <iosfwd>

#include "altpe/matrix.hpp"
#include "altpe/periodic_kernels.hpp"

namespace altpe {

struct PEConfig {
  int d_model = 64;
  int max_len = 256;
  double base = 10000.0;
  PeriodicKind kind = PeriodicKind::Sinusoidal;

  /// Throws ConfigError unless d_model is even and positive, max_len >= 1
  /// and base > 1.
  void validate() const;
};

/// Absolute positional-encoding table, max_len x d_model.
///
/// Row m, column 2i holds phi(kind, m / base^(2i/d_model)); column 2i+1 holds
/// psi of the same argument. Immutable after construction.
class PETable {
 public:
  PETable(PEConfig config, Matrix values);

  const PEConfig& config() const { return config_; }
  const Matrix& values() const { return values_; }
  std::size_t max_len() const { return values_.rows(); }
  std::size_t d_model() const { return values_.cols(); }
  double operator()(std::size_t m, std::size_t c) const { return values_(m, c); }
  std::span<const double> row(std::size_t m) const { return values_.row(m); }

 private:
  PEConfig config_;
  Matrix values_;
};

/// Argument fed to phi/psi for position m and pair index i.
double pe_argument(const PEConfig& config, std::size_t m, std::size_t pair);

PETable build_table(const PEConfig& config);

/// embeddings[m] + table[m] for every row m. No scaling is applied.
/// Throws ShapeError on width mismatch, LengthError if rows > max_len.
Matrix add_positional(const Matrix& embeddings, const PETable& table);

/// CSV with header pos,dim0,...,dim{d-1}; values printed with 17 significant digits.
void write_pe_csv(std::ostream& out, const PETable& table);

}  // namespace altpe
