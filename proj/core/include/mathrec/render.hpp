// SPDX-License-Identifier: Apache-2.0
//
// Formula rasterization. Production rendering goes through an external
// command (for example a XeLaTeX + ImageMagick script); the built-in stub
// draws deterministic synthetic glyphs so tests never need TeX.
#pragma once

#include <opencv2/core.hpp>

#include <filesystem>
#include <memory>
#include <string>

#include "mathrec/latex_norm.hpp"

namespace mathrec {

inline constexpr int kRenderMargin = 8;

/// Crops to the bounding box of non-white pixels and adds a white margin.
/// Returns a 3-channel 8-bit image. Throws Error{CompileFailure} when the
/// image holds no ink.
cv::Mat crop_with_margin(const cv::Mat& image, int margin = kRenderMargin);

/// Synthetic rasterizer: every symbol is a 5x7 hash-derived glyph scaled by
/// round(dpi / 40); scripts, fractions, radicals, accents and font switches
/// are laid out structurally. Throws Error{CompileFailure} on commands it
/// does not know or on malformed structure.
cv::Mat stub_render(const NormalizedLatex& latex, const std::string& font, int dpi);

class Renderer {
 public:
  virtual ~Renderer() = default;
  /// Renders and post-processes to a cropped, margined 3-channel PNG.
  virtual void render(const NormalizedLatex& latex, const std::string& font, int dpi,
                      const std::filesystem::path& out_png) const = 0;
  virtual std::string describe() const = 0;
};

/// Runs the stub rasterizer in process.
class StubRenderer final : public Renderer {
 public:
  void render(const NormalizedLatex& latex, const std::string& font, int dpi,
              const std::filesystem::path& out_png) const override;
  std::string describe() const override { return "builtin stub renderer"; }
};

/// Runs a shell command template with {latex_file} {out_png} {dpi} {font}
/// placeholders. Exit 0 means success; exit 127 or a missing executable is
/// Error{RendererUnavailable}; any other failure is Error{CompileFailure}.
class CommandRenderer final : public Renderer {
 public:
  /// `scratch_dir` holds the temporary .tex inputs.
  CommandRenderer(std::string command_template, std::filesystem::path scratch_dir);

  /// Throws Error{RendererUnavailable} if the program cannot be found.
  void check_available() const;

  void render(const NormalizedLatex& latex, const std::string& font, int dpi,
              const std::filesystem::path& out_png) const override;
  std::string describe() const override { return template_; }
  const std::string& command_template() const noexcept { return template_; }

 private:
  std::string template_;
  std::filesystem::path scratch_;
};

inline constexpr const char* kDefaultRendererTemplate = "mathrec-stub-render {latex_file} {out_png} {dpi} {font}";

/// Writes `image` as PNG; throws Error{CompileFailure} on encoder failure.
void write_png(const std::filesystem::path& path, const cv::Mat& image);

}  // namespace mathrec
