// SPDX-License-Identifier: Apache-2.0
//
// Recognition metrics: BLEU-4, normalized character edit distance and
// ExpRate with an edit tolerance.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mathrec/errors.hpp"

namespace mathrec {

/// Unit-cost Levenshtein distance over arbitrary symbol sequences.
template <class T>
std::size_t levenshtein(std::span<const T> a, std::span<const T> b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[b.size()];
}

template <class T>
std::size_t levenshtein(const std::vector<T>& a, const std::vector<T>& b) {
  return levenshtein(std::span<const T>(a), std::span<const T>(b));
}

/// Decodes UTF-8 into code points; invalid bytes map to themselves.
std::u32string utf8_code_points(std::string_view s);

/// Levenshtein distance over code points.
std::size_t char_levenshtein(std::string_view a, std::string_view b);

/// Character distance divided by the longer length; 0 when both are empty.
double edit_distance(std::string_view prediction, std::string_view reference);

/// Pooled n-gram statistics; corpus BLEU sums these over all pairs.
struct BleuStats {
  static constexpr int kMaxOrder = 4;
  std::array<std::int64_t, kMaxOrder> matches{};
  std::array<std::int64_t, kMaxOrder> totals{};
  std::int64_t prediction_length = 0;
  std::int64_t reference_length = 0;

  BleuStats& operator+=(const BleuStats& o) {
    for (int n = 0; n < kMaxOrder; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    prediction_length += o.prediction_length;
    reference_length += o.reference_length;
    return *this;
  }
};

template <class T>
BleuStats bleu_stats(std::span<const T> prediction, std::span<const T> reference) {
  BleuStats s;
  s.prediction_length = static_cast<std::int64_t>(prediction.size());
  s.reference_length = static_cast<std::int64_t>(reference.size());
  for (int n = 1; n <= BleuStats::kMaxOrder; ++n) {
    std::map<std::vector<T>, std::int64_t> ref_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i) {
      ++ref_counts[std::vector<T>(reference.begin() + i, reference.begin() + i + n)];
    }
    std::map<std::vector<T>, std::int64_t> pred_counts;
    for (std::size_t i = 0; i + n <= prediction.size(); ++i) {
      ++pred_counts[std::vector<T>(prediction.begin() + i, prediction.begin() + i + n)];
    }
    std::int64_t matched = 0;
    std::int64_t total = 0;
    for (const auto& [gram, count] : pred_counts) {
      total += count;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    s.matches[n - 1] = matched;
    s.totals[n - 1] = total;
  }
  return s;
}

/// BLEU-4 from pooled statistics: uniform weights, brevity penalty, and
/// (m+1)/(t+1) for orders with zero matches. Empty reference scores 0.
double bleu_score(const BleuStats& stats);

template <class T>
double bleu(std::span<const T> prediction, std::span<const T> reference) {
  return bleu_score(bleu_stats(prediction, reference));
}

template <class T>
double bleu(const std::vector<T>& prediction, const std::vector<T>& reference) {
  return bleu(std::span<const T>(prediction), std::span<const T>(reference));
}

/// Fraction of pairs whose token Levenshtein distance is at most `k`.
template <class Seq>
double exprate(const std::vector<Seq>& predictions, const std::vector<Seq>& references, int k) {
  if (predictions.size() != references.size()) {
    throw Error(ErrorKind::LengthMismatch, "exprate: " + std::to_string(predictions.size()) +
                                              " predictions vs " + std::to_string(references.size()) +
                                              " references");
  }
  if (predictions.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (levenshtein(predictions[i], references[i]) <= static_cast<std::size_t>(k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

}  // namespace mathrec
