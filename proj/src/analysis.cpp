#include "altpe/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

#include "altpe/csv.hpp"
#include "altpe/errors.hpp"
#include "altpe/positional_encoding.hpp"
#include "altpe/rope.hpp"

namespace altpe {

std::size_t Histogram::occupied_bins() const {
  return static_cast<std::size_t>(
      std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }));
}

Histogram output_histogram(PeriodicKind kind, int d_model, int len, int bins, double base) {
  if (bins < 10) throw ConfigError("histogram needs at least 10 bins");
  const PETable table = build_table({d_model, len, base, kind});
  Histogram h;
  h.hi = kind == PeriodicKind::Sawtooth ? kPi : 1.0;
  h.lo = -h.hi;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  const double width = (h.hi - h.lo) / bins;
  for (double v : table.values().data()) {
    auto b = static_cast<long>(std::floor((v - h.lo) / width));
    b = std::clamp(b, 0L, static_cast<long>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  const auto [mn, mx] = std::minmax_element(h.counts.begin(), h.counts.end());
  h.uniformity_ratio = *mn == 0 ? std::numeric_limits<double>::infinity()
                                : static_cast<double>(*mx) / static_cast<double>(*mn);
  return h;
}

ShiftProfile shift_invariance_profile(PeriodicKind kind, int d_k, long max_position,
                                      std::span<const long> shifts, int trials,
                                      std::uint64_t seed, double base) {
  const RopeConfig config{d_k, base, kind};
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<long> position(0, max_position);
  auto unit = [&] {
    std::vector<double> v(static_cast<std::size_t>(d_k));
    double n2 = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      n2 += x * x;
    }
    for (auto& x : v) x /= std::sqrt(n2);
    return v;
  };

  ShiftProfile profile;
  for (long s : shifts) profile.per_shift.push_back({s, 0.0, 0.0});
  for (int t = 0; t < trials; ++t) {
    const auto q = unit();
    const auto k = unit();
    const long m = position(rng), n = position(rng);
    const double base_logit = attention_logit(rotate(q, m, config), rotate(k, n, config));
    for (auto& st : profile.per_shift) {
      const double shifted =
          attention_logit(rotate(q, m + st.shift, config), rotate(k, n + st.shift, config));
      const double dev = std::abs(base_logit - shifted);
      st.max_deviation = std::max(st.max_deviation, dev);
      st.mean_deviation += dev / trials;
    }
  }

  long max_shift = 0;
  for (long s : shifts) max_shift = std::max(max_shift, s);
  const auto theta = theta_schedule(config);
  profile.min_block_gain = std::numeric_limits<double>::infinity();
  profile.max_block_gain = -std::numeric_limits<double>::infinity();
  for (long p = 0; p <= max_position + max_shift; ++p) {
    for (double th : theta) {
      const double gain = block_transform(kind, static_cast<double>(p) * th).determinant();
      profile.min_block_gain = std::min(profile.min_block_gain, gain);
      profile.max_block_gain = std::max(profile.max_block_gain, gain);
    }
  }
  return profile;
}

double distance_to_singularity(PeriodicKind kind, double m) {
  double offset = 0.0, period = kPi;
  switch (kind) {
    case PeriodicKind::Sinusoidal: return std::numeric_limits<double>::infinity();
    case PeriodicKind::Square: offset = 0.0; period = kPi; break;
    case PeriodicKind::Sawtooth: offset = kPi; period = kTwoPi; break;
    case PeriodicKind::Triangular: offset = kHalfPi; period = kPi; break;
  }
  double r = std::fmod(m - offset, period);
  if (r < 0.0) r += period;
  return std::min(r, period - r);
}

SlopeProfile slope_profile(PeriodicKind kind, std::span<const double> grid, double h,
                           double exclusion) {
  SlopeProfile p;
  p.min_slope = std::numeric_limits<double>::infinity();
  p.max_slope = -std::numeric_limits<double>::infinity();
  for (double x : grid) {
    if (distance_to_singularity(kind, x) < exclusion) {
      ++p.skipped;
      continue;
    }
    const double slope = (phi(kind, x + h) - phi(kind, x - h)) / (2.0 * h);
    p.points.push_back(x);
    p.slopes.push_back(slope);
    p.min_slope = std::min(p.min_slope, slope);
    p.max_slope = std::max(p.max_slope, slope);
  }
  return p;
}

void write_histogram_csv(std::ostream& out, const Histogram& h) {
  out << "bin,lo,hi,count\n";
  const double width = (h.hi - h.lo) / static_cast<double>(h.counts.size());
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out << b << ',' << format_double(h.lo + width * static_cast<double>(b)) << ','
        << format_double(h.lo + width * static_cast<double>(b + 1)) << ',' << h.counts[b] << '\n';
  }
}

void write_shift_csv(std::ostream& out, const ShiftProfile& p) {
  out << "shift,max_deviation,mean_deviation\n";
  for (const auto& s : p.per_shift) {
    out << s.shift << ',' << format_double(s.max_deviation) << ','
        << format_double(s.mean_deviation) << '\n';
  }
}

void write_slope_csv(std::ostream& out, const SlopeProfile& p) {
  out << "x,slope\n";
  for (std::size_t i = 0; i < p.points.size(); ++i) {
    out << format_double(p.points[i]) << ',' << format_double(p.slopes[i]) << '\n';
  }
}

}  // namespace altpe
