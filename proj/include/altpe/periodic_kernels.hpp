#pragma once

#include <array>
#include <numbers>
#include <string>
#include <string_view>

namespace altpe {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kHalfPi = 0.5 * std::numbers::pi;

/// Family of the periodic function pair used for positional encoding.
///
/// Each family is defined by its even-column function phi with period 2*pi;
/// the odd-column partner is always psi(m) = phi(pi/2 - m).
enum class PeriodicKind { Sinusoidal, Triangular, Square, Sawtooth };

inline constexpr std::array<PeriodicKind, 4> kAllKinds = {
    PeriodicKind::Sinusoidal, PeriodicKind::Triangular, PeriodicKind::Square,
    PeriodicKind::Sawtooth};

/// Parses "sin", "tri", "sqw" or "saw". Throws ConfigError otherwise.
PeriodicKind parse_kind(std::string_view name);

/// Canonical short name ("sin", "tri", "sqw", "saw").
std::string_view to_string(PeriodicKind kind);

/// Euclidean remainder of m modulo 2*pi, always in [0, 2*pi).
/// Throws DomainError for NaN or infinite input.
double wrap(double m);

/// Even-column function phi(m).
///
///   sin : sin(m)
///   tri : 2r/pi on [0, pi/2], 2 - 2r/pi on [pi/2, 3pi/2], 2r/pi - 4 on [3pi/2, 2pi)
///   sqw : -1 on [0, pi), +1 on [pi, 2pi)
///   saw : r on [0, pi), r - 2pi on [pi, 2pi)
///
/// where r = wrap(m). The sawtooth is not normalised; its range is [-pi, pi).
double phi(PeriodicKind kind, double m);

/// Odd-column function, always evaluated as phi(kind, pi/2 - m).
double psi(PeriodicKind kind, double m);

}  // namespace altpe
