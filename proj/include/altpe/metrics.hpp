#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "altpe/errors.hpp"

namespace altpe {

/// Mean negative log-likelihood over rows of `logits` (row-major, rows x vocab)
/// whose target is not ignore_index. Throws DataError when every row is ignored.
double cross_entropy(std::span<const double> logits, std::size_t vocab,
                     std::span<const int> targets, int ignore_index);

/// Fraction of non-ignored rows whose argmax equals the target. NaN if none.
double token_accuracy(std::span<const double> logits, std::size_t vocab,
                      std::span<const int> targets, int ignore_index);

struct BleuReport {
  double bleu4 = 0.0;  // 0..100
  std::array<double, 4> precisions{};
  double brevity_penalty = 0.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

/// Numerator substituted for a zero 2..4-gram match count.
inline constexpr double kBleuSmoothingEpsilon = 1e-9;

namespace detail {

template <class Token>
std::map<std::vector<Token>, std::size_t> ngram_counts(const std::vector<Token>& seq,
                                                       std::size_t n) {
  std::map<std::vector<Token>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[std::vector<Token>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                                seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace detail

/// Corpus BLEU-4 with one reference per hypothesis.
///
/// Modified n-gram precisions are pooled over the corpus. A zero match count
/// for n >= 2 is replaced by kBleuSmoothingEpsilon; a zero unigram precision
/// yields BLEU 0. BP = exp(1 - ref_len / hyp_len) when hyp_len < ref_len.
template <class Token>
BleuReport bleu4(std::span<const std::vector<Token>> hypotheses,
                 std::span<const std::vector<Token>> references) {
  if (hypotheses.size() != references.size()) {
    throw DataError("BLEU: hypothesis and reference counts differ");
  }
  if (hypotheses.empty()) throw DataError("BLEU: empty corpus");

  std::array<double, 4> matches{}, totals{};
  BleuReport report;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    report.hyp_len += hyp.size();
    report.ref_len += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hyp_counts = detail::ngram_counts(hyp, n);
      const auto ref_counts = detail::ngram_counts(ref, n);
      for (const auto& [gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += static_cast<double>(std::min(count, it->second));
        totals[n - 1] += static_cast<double>(count);
      }
    }
  }

  for (std::size_t n = 0; n < 4; ++n) {
    const double denom = std::max(totals[n], 1.0);
    if (matches[n] > 0.0) {
      report.precisions[n] = matches[n] / denom;
    } else {
      report.precisions[n] = n == 0 ? 0.0 : kBleuSmoothingEpsilon / denom;
    }
  }
  if (report.hyp_len == 0) {
    report.brevity_penalty = 0.0;
  } else if (report.hyp_len < report.ref_len) {
    report.brevity_penalty = std::exp(1.0 - static_cast<double>(report.ref_len) /
                                                static_cast<double>(report.hyp_len));
  } else {
    report.brevity_penalty = 1.0;
  }
  if (report.precisions[0] == 0.0 || report.brevity_penalty == 0.0) {
    report.bleu4 = 0.0;
    return report;
  }
  double log_mean = 0.0;
  for (double p : report.precisions) log_mean += std::log(p);
  report.bleu4 = 100.0 * report.brevity_penalty * std::exp(log_mean / 4.0);
  return report;
}

}  // namespace altpe
