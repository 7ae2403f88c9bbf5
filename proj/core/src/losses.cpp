// SPDX-License-Identifier: Apache-2.0
#include "mathrec/losses.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "mathrec/errors.hpp"

namespace mathrec {

LossValue language_modeling_loss(std::span<const double> logits, std::span<const TokenId> targets, int classes,
                                 TokenId pad_id) {
  if (classes <= 0 || logits.size() != targets.size() * static_cast<std::size_t>(classes)) {
    throw Error(ErrorKind::ShapeMismatch, "language_modeling_loss: logits hold " + std::to_string(logits.size()) +
                                              " values for " + std::to_string(targets.size()) + " targets x " +
                                              std::to_string(classes) + " classes");
  }
  LossValue out;
  out.grad.assign(logits.size(), 0.0);
  const auto active = std::count_if(targets.begin(), targets.end(), [&](TokenId t) { return t != pad_id; });
  if (active == 0) {
    spdlog::warn("language_modeling_loss: every target position is padding; loss defined as 0");
    return out;
  }
  const double inv = 1.0 / static_cast<double>(active);
  const auto c = static_cast<std::size_t>(classes);
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const TokenId target = targets[r];
    if (target == pad_id) continue;
    if (target < 0 || target >= classes) {
      throw Error(ErrorKind::ShapeMismatch, "language_modeling_loss: target id " + std::to_string(target) +
                                                " outside " + std::to_string(classes) + " classes");
    }
    const double* row = logits.data() + r * c;
    const auto argmax = static_cast<std::size_t>(std::max_element(row, row + c) - row);
    const double mx = row[argmax];
    double rest = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      if (k != argmax) rest += std::exp(row[k] - mx);
    }
    const double log_z = mx + std::log1p(rest);
    out.value += (log_z - row[target]) * inv;
    double* g = out.grad.data() + r * c;
    for (std::size_t k = 0; k < c; ++k) g[k] = std::exp(row[k] - log_z) * inv;
    g[target] -= inv;
  }
  return out;
}

double smooth_l1(double predicted, double target) noexcept {
  const double d = std::abs(predicted - target);
  return d < 1.0 ? 0.5 * d * d : d - 0.5;
}

LossValue length_loss(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) {
    throw Error(ErrorKind::ShapeMismatch, "length_loss: " + std::to_string(predicted.size()) +
                                              " predictions vs " + std::to_string(target.size()) + " targets");
  }
  LossValue out;
  out.grad.assign(predicted.size(), 0.0);
  if (predicted.empty()) return out;
  const double inv = 1.0 / static_cast<double>(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double diff = predicted[i] - target[i];
    out.value += smooth_l1(predicted[i], target[i]) * inv;
    out.grad[i] = (std::abs(diff) < 1.0 ? diff : (diff > 0 ? 1.0 : -1.0)) * inv;
  }
  return out;
}

double total_loss(double lm, double len, const LossWeights& weights) {
  if (!std::isfinite(lm) || !std::isfinite(len)) {
    throw Error(ErrorKind::NonFiniteLoss, "non-finite loss term (lm=" + std::to_string(lm) +
                                              ", len=" + std::to_string(len) + ")");
  }
  return weights.lm * lm + weights.len * len;
}

}  // namespace mathrec
