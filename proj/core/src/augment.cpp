// SPDX-License-Identifier: Apache-2.0
#include "mathrec/augment.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>

#include "mathrec/errors.hpp"
#include "mathrec/json_util.hpp"

namespace mathrec {

namespace {

constexpr std::array<std::string_view, kAugmentKindCount> kNames = {
    "dilate", "erode", "fog", "frost", "rain", "snow", "shadow", "blur", "jpeg", "perspective"};

std::atomic<std::uint64_t> g_pipeline_calls{0};

void check_severity(int severity) {
  if (severity < 1 || severity > 5) {
    throw Error(ErrorKind::ConfigError, "severity " + std::to_string(severity) + " outside 1..5");
  }
}

cv::Mat to_float(const cv::Mat& image) {
  cv::Mat f;
  image.convertTo(f, CV_32F);
  return f;
}

cv::Mat to_u8(const cv::Mat& f) {
  cv::Mat out;
  f.convertTo(out, CV_8U);  // rounds and saturates
  return out;
}

// Broadcasts a single-channel field to the channel count of `like`.
cv::Mat expand(const cv::Mat& field, const cv::Mat& like) {
  if (like.channels() == 1) return field;
  std::vector<cv::Mat> planes(static_cast<std::size_t>(like.channels()), field);
  cv::Mat out;
  cv::merge(planes, out);
  return out;
}

// Smooth random field in [0, 1] at the given cell size.
cv::Mat smooth_field(cv::Size size, int cell, Rng& rng) {
  cv::Mat1f coarse(size.height / cell + 2, size.width / cell + 2);
  for (int y = 0; y < coarse.rows; ++y)
    for (int x = 0; x < coarse.cols; ++x) coarse(y, x) = static_cast<float>(uniform01(rng));
  cv::Mat1f fine;
  cv::resize(coarse, fine, cv::Size(coarse.cols * cell, coarse.rows * cell), 0, 0, cv::INTER_CUBIC);
  fine = fine(cv::Rect(cell / 2, cell / 2, size.width, size.height)).clone();
  cv::min(cv::max(fine, 0.0), 1.0, fine);
  return fine;
}

// out = img * (1 - w) + w * target, with w a per-pixel weight in [0, 1].
cv::Mat blend_toward(const cv::Mat& img, const cv::Mat1f& weight, const cv::Mat& target) {
  const cv::Mat w = expand(weight, img);
  cv::Mat one_minus;
  cv::subtract(cv::Scalar::all(1.0), w, one_minus);
  return img.mul(one_minus) + target.mul(w);
}

cv::Mat fog(const cv::Mat& image, int severity, Rng& rng) {
  const cv::Mat img = to_float(image);
  cv::Mat1f field = smooth_field(image.size(), 24, rng);
  field = 0.5f + 0.5f * field;
  const cv::Mat1f weight = field * (0.12f * severity);
  const cv::Mat haze(image.size(), img.type(), cv::Scalar::all(170.0));
  return to_u8(blend_toward(img, weight, haze));
}

cv::Mat frost(const cv::Mat& image, int severity, Rng& rng) {
  const cv::Mat img = to_float(image);
  cv::Mat1f mask(image.size(), 0.0f);
  const int patches = 6;
  for (int i = 0; i < patches; ++i) {
    const cv::Point center(static_cast<int>(uniform(rng, 0, image.cols)), static_cast<int>(uniform(rng, 0, image.rows)));
    const cv::Size axes(std::max(2, static_cast<int>(uniform(rng, 0.1, 0.35) * image.cols)),
                        std::max(2, static_cast<int>(uniform(rng, 0.2, 0.6) * image.rows)));
    cv::ellipse(mask, center, axes, uniform(rng, 0, 180), 0, 360, cv::Scalar(1.0), cv::FILLED);
  }
  cv::GaussianBlur(mask, mask, cv::Size(0, 0), 3.0);
  cv::Mat1f grain = smooth_field(image.size(), 3, rng);
  std::vector<cv::Mat> planes;
  for (int c = 0; c < img.channels(); ++c) {
    planes.push_back(cv::Mat1f(140.0f + 90.0f * grain + 15.0f * static_cast<float>(c == 0)));
  }
  cv::Mat texture;
  cv::merge(planes, texture);
  const cv::Mat1f weight = mask * (0.12f * severity);
  return to_u8(blend_toward(img, weight, texture));
}

cv::Mat streaks(const cv::Mat& image, int severity, Rng& rng, bool flakes) {
  const double area = static_cast<double>(image.rows) * image.cols;
  const int per_level = std::max(4, static_cast<int>(area / (flakes ? 500.0 : 700.0)));
  const int total = per_level * 5;
  const double angle = uniform(rng, -0.35, 0.35);
  cv::Mat1f layer(image.size(), 255.0f);
  const float shade = flakes ? 185.0f : 150.0f;
  for (int i = 0; i < total; ++i) {
    const double x = uniform(rng, 0, image.cols);
    const double y = uniform(rng, 0, image.rows);
    const double len = uniform(rng, 3.0, std::max(6.0, image.rows / 3.0));
    const double r = uniform(rng, 0.8, 2.0);
    if (i >= per_level * severity) continue;  // draws above still consumed
    if (flakes) {
      cv::circle(layer, cv::Point(static_cast<int>(x), static_cast<int>(y)), static_cast<int>(std::lround(r)),
                 cv::Scalar(shade), cv::FILLED);
    } else {
      const cv::Point a(static_cast<int>(x), static_cast<int>(y));
      const cv::Point b(static_cast<int>(x + len * std::sin(angle)), static_cast<int>(y + len * std::cos(angle)));
      cv::line(layer, a, b, cv::Scalar(shade), 1);
    }
  }
  cv::Mat img = to_float(image);
  cv::Mat out;
  cv::min(img, expand(layer, img), out);
  return to_u8(out);
}

cv::Mat shadow(const cv::Mat& image, int severity, Rng& rng) {
  const cv::Mat img = to_float(image);
  std::vector<cv::Point> poly;
  const int vertices = 3 + static_cast<int>(uniform_int(rng, 0, 2));
  const double cx = uniform(rng, 0, image.cols);
  const double cy = uniform(rng, 0, image.rows);
  for (int i = 0; i < vertices; ++i) {
    const double a = 2.0 * 3.141592653589793 * (i + uniform(rng, 0.0, 0.8)) / vertices;
    const double r = uniform(rng, 0.3, 0.9) * std::max(image.cols, image.rows);
    poly.emplace_back(static_cast<int>(cx + r * std::cos(a)), static_cast<int>(cy + r * std::sin(a)));
  }
  cv::Mat1f mask(image.size(), 0.0f);
  cv::fillPoly(mask, std::vector<std::vector<cv::Point>>{poly}, cv::Scalar(1.0));
  cv::GaussianBlur(mask, mask, cv::Size(0, 0), 2.0);
  const cv::Mat1f keep = 1.0f - mask * (0.1f * severity);
  return to_u8(img.mul(expand(keep, img)));
}

cv::Mat blur(const cv::Mat& image, int severity) {
  cv::Mat out;
  cv::GaussianBlur(image, out, cv::Size(0, 0), 0.3 + 0.3 * severity);
  return out;
}

cv::Mat jpeg(const cv::Mat& image, int severity) {
  static constexpr int kQuality[] = {85, 70, 55, 40, 25};
  std::vector<uchar> buf;
  cv::imencode(".jpg", image, buf, {cv::IMWRITE_JPEG_QUALITY, kQuality[severity - 1]});
  return cv::imdecode(buf, image.channels() == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
}

cv::Mat perspective(const cv::Mat& image, int severity, Rng& rng) {
  const float w = static_cast<float>(image.cols - 1);
  const float h = static_cast<float>(image.rows - 1);
  const cv::Point2f src[4] = {{0, 0}, {w, 0}, {w, h}, {0, h}};
  cv::Point2f dst[4];
  const double mx = 0.01 * severity * image.cols;
  const double my = 0.02 * severity * image.rows;
  for (int i = 0; i < 4; ++i) {
    dst[i] = src[i] + cv::Point2f(static_cast<float>(uniform(rng, -mx, mx)), static_cast<float>(uniform(rng, -my, my)));
  }
  cv::Mat out;
  cv::warpPerspective(image, out, cv::getPerspectiveTransform(src, dst), image.size(), cv::INTER_LINEAR,
                      cv::BORDER_CONSTANT, cv::Scalar::all(255));
  return out;
}

}  // namespace

std::string_view to_string(AugmentKind kind) noexcept { return kNames[static_cast<std::size_t>(kind)]; }

AugmentKind parse_augment_kind(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<AugmentKind>(i);
  }
  throw Error(ErrorKind::UnknownKind, "unknown augmentation kind '" + std::string(name) + "'");
}

bool is_weather(AugmentKind kind) noexcept {
  return kind == AugmentKind::Fog || kind == AugmentKind::Frost || kind == AugmentKind::Rain ||
         kind == AugmentKind::Snow || kind == AugmentKind::Shadow;
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  for (auto& k : c.kinds) k.enabled = false;
  return c;
}

void AugmentConfig::validate() const {
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    const auto& k = kinds[i];
    const std::string where = "augment.kinds." + std::string(kNames[i]);
    if (!(k.probability >= 0.0 && k.probability <= 1.0)) throw Error(ErrorKind::ConfigError, where + ".probability: outside [0, 1]");
    if (k.min_severity < 1 || k.max_severity > 5 || k.min_severity > k.max_severity) {
      throw Error(ErrorKind::ConfigError, where + ".severity: need 1 <= lo <= hi <= 5");
    }
  }
}

nlohmann::json to_json(const AugmentConfig& cfg) {
  nlohmann::json kinds = nlohmann::json::object();
  for (AugmentKind k : kAllAugmentKinds) {
    const auto& s = cfg[k];
    if (!s.enabled) continue;
    kinds[std::string(to_string(k))] = {{"probability", s.probability}, {"severity", {s.min_severity, s.max_severity}}};
  }
  return {{"seed", cfg.seed}, {"kinds", kinds}};
}

AugmentConfig augment_config_from_json(const nlohmann::json& j, const std::string& path) {
  AugmentConfig cfg;
  JsonFields f(j, path);
  f.get("seed", cfg.seed);
  if (const auto* kinds = f.child("kinds")) {
    if (!kinds->is_object()) f.fail("kinds", "expected an object keyed by kind name");
    for (auto& k : cfg.kinds) k.enabled = false;
    for (auto it = kinds->begin(); it != kinds->end(); ++it) {
      AugmentKind kind;
      try {
        kind = parse_augment_kind(it.key());
      } catch (const Error&) {
        throw Error(ErrorKind::ConfigError, f.field("kinds." + it.key()) + ": unknown augmentation kind");
      }
      auto& s = cfg[kind];
      s.enabled = true;
      JsonFields kf(*it, f.field("kinds." + it.key()));
      kf.get("probability", s.probability);
      std::vector<int> severity;
      if (kf.get("severity", severity)) {
        if (severity.size() != 2) kf.fail("severity", "expected [lo, hi]");
        s.min_severity = severity[0];
        s.max_severity = severity[1];
      }
      kf.finish();
    }
  }
  f.finish();
  cfg.validate();
  return cfg;
}

int morph_kernel(int severity) {
  check_severity(severity);
  return severity <= 3 ? 3 : 5;
}

cv::Mat morphological(const cv::Mat& image, AugmentKind kind, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw Error(ErrorKind::InvalidKernel, "kernel must be odd and >= 1, got " + std::to_string(kernel));
  }
  if (kind != AugmentKind::Dilate && kind != AugmentKind::Erode) {
    throw Error(ErrorKind::UnknownKind, "morphological expects dilate or erode, got " + std::string(to_string(kind)));
  }
  if (kernel == 1) return image.clone();
  const cv::Mat element = cv::getStructuringElement(cv::MORPH_RECT, cv::Size(kernel, kernel));
  cv::Mat out;
  // Ink is dark on a light background: growing it is a minimum filter.
  if (kind == AugmentKind::Dilate) {
    cv::erode(image, out, element, cv::Point(-1, -1), 1, cv::BORDER_REPLICATE);
  } else {
    cv::dilate(image, out, element, cv::Point(-1, -1), 1, cv::BORDER_REPLICATE);
  }
  return out;
}

cv::Mat weather_noise(const cv::Mat& image, AugmentKind kind, int severity, Rng& rng) {
  check_severity(severity);
  switch (kind) {
    case AugmentKind::Fog: return fog(image, severity, rng);
    case AugmentKind::Frost: return frost(image, severity, rng);
    case AugmentKind::Rain: return streaks(image, severity, rng, false);
    case AugmentKind::Snow: return streaks(image, severity, rng, true);
    case AugmentKind::Shadow: return shadow(image, severity, rng);
    default: break;
  }
  throw Error(ErrorKind::UnknownKind, std::string(to_string(kind)) + " is not a weather kind");
}

cv::Mat apply_augmentation(const cv::Mat& image, AugmentKind kind, int severity, Rng& rng) {
  check_severity(severity);
  switch (kind) {
    case AugmentKind::Dilate:
    case AugmentKind::Erode: return morphological(image, kind, morph_kernel(severity));
    case AugmentKind::Blur: return blur(image, severity);
    case AugmentKind::Jpeg: return jpeg(image, severity);
    case AugmentKind::Perspective: return perspective(image, severity, rng);
    default: return weather_noise(image, kind, severity, rng);
  }
}

cv::Mat augment_pipeline(const cv::Mat& image, const AugmentConfig& config, Rng& rng,
                         std::vector<AugmentKind>* applied) {
  ++g_pipeline_calls;
  cv::Mat out = image.clone();
  auto fire = [&](AugmentKind kind) {
    const auto& s = config[kind];
    const int severity = static_cast<int>(uniform_int(rng, s.min_severity, s.max_severity));
    out = apply_augmentation(out, kind, severity, rng);
    if (applied != nullptr) applied->push_back(kind);
  };
  const auto& dil = config[AugmentKind::Dilate];
  const auto& ero = config[AugmentKind::Erode];
  const double pd = dil.enabled ? dil.probability : 0.0;
  const double pe = ero.enabled ? ero.probability : 0.0;
  const double u = uniform01(rng);
  if (u < pd) {
    fire(AugmentKind::Dilate);
  } else if (u < pd + pe) {
    fire(AugmentKind::Erode);
  }
  for (std::size_t i = 2; i < kAllAugmentKinds.size(); ++i) {
    const AugmentKind kind = kAllAugmentKinds[i];
    const auto& s = config[kind];
    const double v = uniform01(rng);
    if (s.enabled && v < s.probability) fire(kind);
  }
  return out;
}

std::uint64_t augment_pipeline_calls() noexcept { return g_pipeline_calls.load(); }

}  // namespace mathrec
