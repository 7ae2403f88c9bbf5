// SPDX-License-Identifier: Apache-2.0
#include "mathrec/metrics.hpp"

#include <spdlog/spdlog.h>

namespace mathrec {

std::u32string utf8_code_points(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    char32_t cp = c;
    if ((c >> 5) == 0x6) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c >> 4) == 0xE) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c >> 3) == 0x1E) {
      len = 4;
      cp = c & 0x07;
    }
    if (i + len > s.size()) {
      len = 1;
      cp = c;
    } else {
      for (std::size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::size_t char_levenshtein(std::string_view a, std::string_view b) {
  const std::u32string ua = utf8_code_points(a);
  const std::u32string ub = utf8_code_points(b);
  return levenshtein(std::span<const char32_t>(ua.data(), ua.size()), std::span<const char32_t>(ub.data(), ub.size()));
}

double edit_distance(std::string_view prediction, std::string_view reference) {
  const std::u32string p = utf8_code_points(prediction);
  const std::u32string r = utf8_code_points(reference);
  const std::size_t denom = std::max(p.size(), r.size());
  if (denom == 0) return 0.0;
  const std::size_t d = levenshtein(std::span<const char32_t>(p.data(), p.size()), std::span<const char32_t>(r.data(), r.size()));
  return static_cast<double>(d) / static_cast<double>(denom);
}

double bleu_score(const BleuStats& stats) {
  if (stats.reference_length == 0) {
    spdlog::warn("BLEU requested against an empty reference; scoring 0");
    return 0.0;
  }
  if (stats.prediction_length == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < BleuStats::kMaxOrder; ++n) {
    const double m = static_cast<double>(stats.matches[n]);
    const double t = static_cast<double>(stats.totals[n]);
    const double p = stats.matches[n] > 0 ? m / t : 1.0 / (t + 1.0);
    log_sum += std::log(p) / BleuStats::kMaxOrder;
  }
  const double c = static_cast<double>(stats.prediction_length);
  const double r = static_cast<double>(stats.reference_length);
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum);
}

}  // namespace mathrec
