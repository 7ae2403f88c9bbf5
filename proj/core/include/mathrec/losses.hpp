// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Each returns the value together with its analytic
// gradient so the same code backs the autograd graph and the
// finite-difference checks.
#pragma once

#include <span>
#include <vector>

#include "mathrec/latex_norm.hpp"

namespace mathrec {

struct LossWeights {
  double lm = 1.0;   // weight of the language-modeling term
  double len = 0.5;  // weight of the length term

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossValue {
  double value = 0.0;
  std::vector<double> grad;  // d value / d input, same layout as the input
};

/// Mean next-token cross-entropy over rows whose target is not `pad_id`.
/// `logits` is row-major [targets.size(), classes]. All-pad input yields 0
/// (with a warning) and a zero gradient.
LossValue language_modeling_loss(std::span<const double> logits, std::span<const TokenId> targets,
                                 int classes, TokenId pad_id = Vocabulary::kPad);

/// SmoothL1 with unit breakpoint, averaged over every element.
LossValue length_loss(std::span<const double> predicted, std::span<const double> target);

/// Elementwise SmoothL1 term.
double smooth_l1(double predicted, double target) noexcept;

/// Weighted sum; throws Error{NonFiniteLoss} when either term is not finite.
double total_loss(double lm, double len, const LossWeights& weights);

}  // namespace mathrec
