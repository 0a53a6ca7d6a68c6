#include "altpe/periodic_kernels.hpp"

#include <cmath>

#include "altpe/errors.hpp"

namespace altpe {

PeriodicKind parse_kind(std::string_view name) {
  if (name == "sin") return PeriodicKind::Sinusoidal;
  if (name == "tri") return PeriodicKind::Triangular;
  if (name == "sqw") return PeriodicKind::Square;
  if (name == "saw") return PeriodicKind::Sawtooth;
  throw ConfigError("unknown encoding '" + std::string(name) +
                    "' (expected sin, tri, sqw or saw)");
}

std::string_view to_string(PeriodicKind kind) {
  switch (kind) {
    case PeriodicKind::Sinusoidal: return "sin";
    case PeriodicKind::Triangular: return "tri";
    case PeriodicKind::Square: return "sqw";
    case PeriodicKind::Sawtooth: return "saw";
  }
  return "?";
}

double wrap(double m) {
  if (!std::isfinite(m)) {
    throw DomainError("periodic kernel argument is not finite");
  }
  double r = std::fmod(m, kTwoPi);
  if (r < 0.0) {
    r += kTwoPi;
    // -tiny + 2pi can round up to exactly 2pi
    if (r >= kTwoPi) r = 0.0;
  }
  return r;
}

namespace {

double triangular(double r) {
  if (r <= kHalfPi) return 2.0 * r / kPi;
  if (r <= 3.0 * kHalfPi) return -2.0 / kPi * r + 2.0;
  return 2.0 * r / kPi - 4.0;
}

double square(double r) { return r < kPi ? -1.0 : 1.0; }

double sawtooth(double r) { return r < kPi ? r : r - kTwoPi; }

}  // namespace

double phi(PeriodicKind kind, double m) {
  const double r = wrap(m);
  switch (kind) {
    case PeriodicKind::Sinusoidal: return std::sin(m);
    case PeriodicKind::Triangular: return triangular(r);
    case PeriodicKind::Square: return square(r);
    case PeriodicKind::Sawtooth: return sawtooth(r);
  }
  return 0.0;
}

double psi(PeriodicKind kind, double m) { return phi(kind, kHalfPi - m); }

}  // namespace altpe
