#include "altpe/metrics.hpp"

#include <limits>
#include <string>

namespace altpe {

namespace {

void check_rows(std::span<const double> logits, std::size_t vocab,
                std::span<const int> targets) {
  if (vocab == 0 || logits.size() != targets.size() * vocab) {
    throw DataError("metric: " + std::to_string(targets.size()) + " targets do not match " +
                    std::to_string(logits.size()) + " logits of width " +
                    std::to_string(vocab));
  }
}

}  // namespace

double cross_entropy(std::span<const double> logits, std::size_t vocab,
                     std::span<const int> targets, int ignore_index) {
  check_rows(logits, vocab, targets);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] == ignore_index) continue;
    const auto row = logits.subspan(r * vocab, vocab);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    total += mx + std::log(z) - row[static_cast<std::size_t>(targets[r])];
    ++count;
  }
  if (count == 0) throw DataError("cross entropy: mean over zero non-ignored positions");
  return total / static_cast<double>(count);
}

double token_accuracy(std::span<const double> logits, std::size_t vocab,
                      std::span<const int> targets, int ignore_index) {
  check_rows(logits, vocab, targets);
  std::size_t hit = 0, count = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] == ignore_index) continue;
    const auto row = logits.subspan(r * vocab, vocab);
    const auto arg = std::max_element(row.begin(), row.end()) - row.begin();
    hit += arg == targets[r] ? 1 : 0;
    ++count;
  }
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(hit) / static_cast<double>(count);
}

}  // namespace altpe
