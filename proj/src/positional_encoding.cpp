#include "altpe/positional_encoding.hpp"

#include <cmath>
#include <ostream>
#include <string>
#include <utility>

#include "altpe/csv.hpp"
#include "altpe/errors.hpp"

namespace altpe {

void PEConfig::validate() const {
  if (d_model <= 0 || d_model % 2 != 0) {
    throw ConfigError("d_model must be a positive even integer, got " +
                      std::to_string(d_model));
  }
  if (max_len < 1) {
    throw ConfigError("max_len must be >= 1, got " + std::to_string(max_len));
  }
  if (!(base > 1.0) || !std::isfinite(base)) {
    throw ConfigError("positional encoding base must be > 1");
  }
}

PETable::PETable(PEConfig config, Matrix values)
    : config_(config), values_(std::move(values)) {}

double pe_argument(const PEConfig& config, std::size_t m, std::size_t pair) {
  const double exponent = 2.0 * static_cast<double>(pair) / config.d_model;
  return static_cast<double>(m) / std::pow(config.base, exponent);
}

PETable build_table(const PEConfig& config) {
  config.validate();
  const auto len = static_cast<std::size_t>(config.max_len);
  const auto width = static_cast<std::size_t>(config.d_model);
  Matrix values(len, width);
  for (std::size_t m = 0; m < len; ++m) {
    for (std::size_t i = 0; i < width / 2; ++i) {
      const double arg = pe_argument(config, m, i);
      values(m, 2 * i) = phi(config.kind, arg);
      values(m, 2 * i + 1) = psi(config.kind, arg);
    }
  }
  return PETable(config, std::move(values));
}

Matrix add_positional(const Matrix& embeddings, const PETable& table) {
  if (embeddings.cols() != table.d_model()) {
    throw ShapeError("embedding width " + std::to_string(embeddings.cols()) +
                     " does not match table width " + std::to_string(table.d_model()));
  }
  if (embeddings.rows() > table.max_len()) {
    throw LengthError("sequence length " + std::to_string(embeddings.rows()) +
                      " exceeds max_len " + std::to_string(table.max_len()));
  }
  Matrix out = embeddings;
  for (std::size_t m = 0; m < out.rows(); ++m) {
    auto dst = out.row(m);
    auto pe = table.row(m);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += pe[c];
  }
  return out;
}

void write_pe_csv(std::ostream& out, const PETable& table) {
  out << "pos";
  for (std::size_t c = 0; c < table.d_model(); ++c) out << ",dim" << c;
  out << '\n';
  for (std::size_t m = 0; m < table.max_len(); ++m) {
    out << m;
    for (double v : table.row(m)) out << ',' << format_double(v);
    out << '\n';
  }
}

}  // namespace altpe
