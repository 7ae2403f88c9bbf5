// SPDX-License-Identifier: Apache-2.0
//
// Training-time corruptions of formula images: morphology, weather noise
// at severities 1..5, blur, JPEG artifacts and mild perspective.
#pragma once

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "mathrec/rng.hpp"

namespace mathrec {

/// Declaration order is the pipeline application order.
enum class AugmentKind { Dilate, Erode, Fog, Frost, Rain, Snow, Shadow, Blur, Jpeg, Perspective };
inline constexpr std::size_t kAugmentKindCount = 10;
inline constexpr std::array<AugmentKind, kAugmentKindCount> kAllAugmentKinds = {
    AugmentKind::Dilate, AugmentKind::Erode,  AugmentKind::Fog,  AugmentKind::Frost, AugmentKind::Rain,
    AugmentKind::Snow,   AugmentKind::Shadow, AugmentKind::Blur, AugmentKind::Jpeg,  AugmentKind::Perspective};

std::string_view to_string(AugmentKind kind) noexcept;
/// Throws Error{UnknownKind}.
AugmentKind parse_augment_kind(std::string_view name);
bool is_weather(AugmentKind kind) noexcept;

struct KindSettings {
  bool enabled = true;
  double probability = 0.15;
  int min_severity = 1;
  int max_severity = 5;

  friend bool operator==(const KindSettings&, const KindSettings&) = default;
};

struct AugmentConfig {
  std::array<KindSettings, kAugmentKindCount> kinds{};
  std::uint64_t seed = 0;

  KindSettings& operator[](AugmentKind k) { return kinds[static_cast<std::size_t>(k)]; }
  const KindSettings& operator[](AugmentKind k) const { return kinds[static_cast<std::size_t>(k)]; }

  /// Every kind disabled.
  static AugmentConfig none();
  /// Throws Error{ConfigError}.
  void validate() const;

  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

/// `{"seed": s, "kinds": {"fog": {"probability": p, "severity": [lo, hi]}, ...}}`.
/// When "kinds" is present, kinds not listed are disabled.
nlohmann::json to_json(const AugmentConfig& cfg);
AugmentConfig augment_config_from_json(const nlohmann::json& j, const std::string& path = "augment");

/// Grayscale morphology per channel. Dilate grows dark ink (min filter),
/// erode thins it (max filter). Throws Error{InvalidKernel} unless the
/// kernel is odd and >= 1, and Error{UnknownKind} for other kinds.
cv::Mat morphological(const cv::Mat& image, AugmentKind kind, int kernel);

/// fog: haze blended in through a low-frequency field; frost: textured
/// patches blended in; rain: oriented streaks; snow: flakes; shadow:
/// multiplicative polygonal darkening. The random layout is drawn
/// independently of severity, which only scales the effect, so the
/// corruption grows monotonically with severity for a fixed rng state.
/// Throws Error{UnknownKind} for non-weather kinds.
cv::Mat weather_noise(const cv::Mat& image, AugmentKind kind, int severity, Rng& rng);

/// Applies a single kind at `severity` (any of the ten).
cv::Mat apply_augmentation(const cv::Mat& image, AugmentKind kind, int severity, Rng& rng);

/// Kernel used by dilate/erode at a severity.
int morph_kernel(int severity);

/// Draws each enabled kind with its probability in declaration order;
/// dilate and erode share one draw so at most one of them fires.
/// `applied` receives the kinds that fired.
cv::Mat augment_pipeline(const cv::Mat& image, const AugmentConfig& config, Rng& rng,
                         std::vector<AugmentKind>* applied = nullptr);

/// Number of augment_pipeline calls in this process.
std::uint64_t augment_pipeline_calls() noexcept;

}  // namespace mathrec
