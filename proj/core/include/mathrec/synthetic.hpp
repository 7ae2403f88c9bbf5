// SPDX-License-Identifier: Apache-2.0
//
// Random formula generator for fixtures and demos. Output is raw LaTeX
// in mixed styles (x^2, \frac a b, \le ...) so normalization is exercised.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mathrec {

struct SynthOptions {
  int min_tokens = 1;   // inclusive, measured after normalization
  int max_tokens = 32;  // inclusive
  int max_depth = 3;
};

/// `count` distinct formulas (distinct after normalization) whose token
/// length lies in [min_tokens, max_tokens]. Deterministic in `seed`.
std::vector<std::string> synthesize_formulas(std::size_t count, std::uint64_t seed, const SynthOptions& options);

}  // namespace mathrec
