// SPDX-License-Identifier: Apache-2.0
#include "mathrec/render.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "mathrec/errors.hpp"
#include "mathrec/rng.hpp"

namespace mathrec {

namespace fs = std::filesystem;

cv::Mat crop_with_margin(const cv::Mat& image, int margin) {
  if (image.empty()) throw Error(ErrorKind::CompileFailure, "renderer produced an empty image");
  cv::Mat gray;
  if (image.channels() == 1) {
    gray = image;
  } else if (image.channels() == 3) {
    cv::cvtColor(image, gray, cv::COLOR_BGR2GRAY);
  } else {
    cv::cvtColor(image, gray, cv::COLOR_BGRA2GRAY);
  }
  if (gray.depth() != CV_8U) gray.convertTo(gray, CV_8U);
  cv::Mat ink = gray < 255;
  std::vector<cv::Point> points;
  cv::findNonZero(ink, points);
  if (points.empty()) throw Error(ErrorKind::CompileFailure, "rendered formula has no visible content");
  const cv::Rect box = cv::boundingRect(points);
  cv::Mat padded;
  cv::copyMakeBorder(gray(box), padded, margin, margin, margin, margin, cv::BORDER_CONSTANT, cv::Scalar(255));
  cv::Mat out;
  cv::cvtColor(padded, out, cv::COLOR_GRAY2BGR);
  return out;
}

void write_png(const fs::path& path, const cv::Mat& image) {
  if (!cv::imwrite(path.string(), image)) throw Error(ErrorKind::CompileFailure, "cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Stub rasterizer

namespace {

// Ink mask (255 = ink) with the baseline measured from the top row.
struct Box {
  cv::Mat1b ink;
  int baseline = 0;

  int width() const { return ink.cols; }
  int height() const { return ink.rows; }
  int ascent() const { return baseline; }
  int descent() const { return ink.rows - baseline; }
};

Box blank(int width, int ascent, int descent) {
  return Box{cv::Mat1b(std::max(ascent + descent, 0), std::max(width, 0), uchar{0}), ascent};
}

struct Placed {
  const Box* box;
  int x;
  int y;  // baseline position relative to the composite baseline
};

Box compose(const std::vector<Placed>& parts) {
  int top = 0, bottom = 0, right = 0;
  for (const auto& p : parts) {
    top = std::min(top, p.y - p.box->ascent());
    bottom = std::max(bottom, p.y + p.box->descent());
    right = std::max(right, p.x + p.box->width());
  }
  Box out = blank(right, -top, bottom);
  for (const auto& p : parts) {
    if (p.box->ink.empty()) continue;
    cv::Mat dst = out.ink(cv::Rect(p.x, p.y - p.box->ascent() - top, p.box->width(), p.box->height()));
    cv::max(dst, static_cast<const cv::Mat&>(p.box->ink), dst);
  }
  return out;
}

Box rule(int width, int thickness) {
  Box b{cv::Mat1b(thickness, width, uchar{255}), thickness};
  return b;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Box pattern_box(std::uint64_t bits, int cols, int rows, int k) {
  Box b = blank(cols * k, rows * k, 0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if ((bits >> (r * cols + c)) & 1U) b.ink(cv::Rect(c * k, r * k, k, k)).setTo(255);
    }
  }
  return b;
}

Box glyph(const std::string& token, const std::string& style, int k) {
  std::uint64_t bits = mix64(fnv1a(style + '\x1f' + token)) & ((1ULL << 35) - 1);
  // Keep every glyph visibly non-empty and anchored on the baseline row.
  bits |= 1ULL << 17;
  bits |= 1ULL << (30 + static_cast<int>(bits % 5));
  return pattern_box(bits, 5, 7, k);
}

const std::set<std::string>& symbol_commands() {
  static const std::set<std::string> s = {
      "\\alpha", "\\beta", "\\gamma", "\\delta", "\\epsilon", "\\varepsilon", "\\zeta", "\\eta", "\\theta",
      "\\vartheta", "\\iota", "\\kappa", "\\lambda", "\\mu", "\\nu", "\\xi", "\\pi", "\\varpi", "\\rho",
      "\\varrho", "\\sigma", "\\varsigma", "\\tau", "\\upsilon", "\\phi", "\\varphi", "\\chi", "\\psi", "\\omega",
      "\\Gamma", "\\Delta", "\\Theta", "\\Lambda", "\\Xi", "\\Pi", "\\Sigma", "\\Upsilon", "\\Phi", "\\Psi",
      "\\Omega", "\\leq", "\\geq", "\\neq", "\\approx", "\\equiv", "\\sim", "\\simeq", "\\cong", "\\propto",
      "\\ll", "\\gg", "\\subset", "\\supset", "\\subseteq", "\\supseteq", "\\in", "\\notin", "\\ni", "\\cup",
      "\\cap", "\\setminus", "\\emptyset", "\\forall", "\\exists", "\\neg", "\\wedge", "\\vee", "\\cdot",
      "\\times", "\\div", "\\pm", "\\mp", "\\ast", "\\star", "\\circ", "\\bullet", "\\oplus", "\\otimes",
      "\\infty", "\\partial", "\\nabla", "\\sum", "\\prod", "\\int", "\\iint", "\\oint", "\\lim", "\\sin",
      "\\cos", "\\tan", "\\log", "\\ln", "\\exp", "\\max", "\\min", "\\sup", "\\inf", "\\det", "\\rightarrow",
      "\\leftarrow", "\\Rightarrow", "\\Leftarrow", "\\leftrightarrow", "\\Leftrightarrow", "\\mapsto",
      "\\uparrow", "\\downarrow", "\\langle", "\\rangle", "\\lfloor", "\\rfloor", "\\lceil", "\\rceil", "\\{",
      "\\}", "\\|", "\\ldots", "\\cdots", "\\vdots", "\\ddots", "\\prime", "\\hbar", "\\ell", "\\Re", "\\Im",
      "\\aleph", "\\angle", "\\perp", "\\parallel", "\\mid", "\\top", "\\bot", "\\dagger", "\\%", "\\$", "\\#",
      "\\&", "\\_", "\\bigcup", "\\bigcap", "\\coprod", "\\to", "\\gets"};
  return s;
}

const std::set<std::string>& font_commands() {
  static const std::set<std::string> s = {"\\mathrm", "\\mathbf", "\\mathit",   "\\mathsf",     "\\mathtt",
                                          "\\mathcal", "\\mathbb", "\\mathfrak", "\\boldsymbol", "\\pmb",
                                          "\\text",    "\\textbf", "\\textit",   "\\operatorname", "\\mbox"};
  return s;
}

const std::set<std::string>& over_accents() {
  static const std::set<std::string> s = {"\\hat",      "\\bar",        "\\tilde",     "\\vec",
                                          "\\dot",      "\\ddot",       "\\check",     "\\breve",
                                          "\\acute",    "\\grave",      "\\widehat",   "\\widetilde",
                                          "\\overline", "\\overrightarrow", "\\overleftarrow", "\\overbrace"};
  return s;
}

int space_width(const std::string& t, int k) {
  if (t == "\\!") return 0;
  if (t == "\\," || t == "\\:" || t == "~" || t == "\\ ") return 2 * k;
  if (t == "\\;") return 3 * k;
  if (t == "\\quad") return 7 * k;
  if (t == "\\qquad") return 14 * k;
  return -1;
}

class StubLayout {
 public:
  StubLayout(std::vector<std::string> tokens, std::string font) : toks_(std::move(tokens)), font_(std::move(font)) {}

  Box run(int k) {
    Box b = list(k, font_, nullptr);
    if (pos_ != toks_.size()) fail("unexpected '" + toks_[pos_] + "'");
    return b;
  }

 private:
  [[noreturn]] static void fail(const std::string& msg) { throw Error(ErrorKind::CompileFailure, msg); }

  static int small(int k) { return std::max(1, k - 1); }

  Box list(int k, const std::string& style, const char* closer) {
    std::vector<Box> items;
    while (pos_ < toks_.size()) {
      const std::string& t = toks_[pos_];
      if (closer != nullptr && t == closer) {
        ++pos_;
        return row(items, k);
      }
      if (t == "}") fail("unmatched '}'");
      if (t == "^" || t == "_") {
        if (items.empty()) items.push_back(blank(0, 7 * k, 0));
        items.back() = scripts(std::move(items.back()), k, style);
        continue;
      }
      items.push_back(atom(k, style));
    }
    if (closer != nullptr) fail(std::string("missing '") + closer + "'");
    return row(items, k);
  }

  static Box row(const std::vector<Box>& items, int k) {
    std::vector<Placed> parts;
    int x = 0;
    for (const auto& b : items) {
      parts.push_back({&b, x, 0});
      x += b.width() + k;
    }
    if (parts.empty()) return blank(0, 0, 0);
    return compose(parts);
  }

  Box scripts(Box base, int k, const std::string& style) {
    std::optional<Box> sup, sub;
    while (pos_ < toks_.size() && (toks_[pos_] == "^" || toks_[pos_] == "_")) {
      const bool up = toks_[pos_] == "^";
      ++pos_;
      if (pos_ >= toks_.size()) fail("missing script argument");
      auto& slot = up ? sup : sub;
      if (slot) fail(up ? "double superscript" : "double subscript");
      slot = atom(small(k), style);
    }
    std::vector<Placed> parts{{&base, 0, 0}};
    const int x = base.width() + std::max(1, k / 2);
    if (sup) parts.push_back({&*sup, x, -(base.ascent() + 1) / 2});
    if (sub) parts.push_back({&*sub, x, (sub->ascent() + 1) / 2});
    return compose(parts);
  }

  const std::string& next(const char* what) {
    if (pos_ >= toks_.size()) fail(std::string("missing argument for ") + what);
    return toks_[pos_++];
  }

  Box fraction(const Box& num, const Box& den, int k, bool with_rule) {
    const int t = std::max(1, k / 2);
    const int w = std::max(num.width(), den.width()) + 2 * k;
    const int axis = (7 * k) / 2;
    const Box line = with_rule ? rule(w, t) : blank(w, t, 0);
    const int line_top = -axis - t / 2;
    const int line_bottom = line_top + t;
    std::vector<Placed> parts{
        {&line, 0, line_bottom},
        {&num, (w - num.width()) / 2, line_top - k - num.descent()},
        {&den, (w - den.width()) / 2, line_bottom + k + den.ascent()},
    };
    return compose(parts);
  }

  Box radical(const Box& body, const Box* index, int k) {
    const int t = std::max(1, k / 2);
    const int hook = 3 * k;
    const int asc = body.ascent() + k + t;
    const int width = hook + k + body.width() + k;
    Box b = blank(width, asc, body.descent());
    const int bottom = b.height() - 1;
    cv::line(b.ink, {0, b.height() / 2}, {k, bottom}, 255, t);
    cv::line(b.ink, {k, bottom}, {hook, 0}, 255, t);
    cv::line(b.ink, {hook, t / 2}, {width - 1, t / 2}, 255, t);
    std::vector<Placed> parts{{&b, 0, 0}, {&body, hook + k, 0}};
    Box out = compose(parts);
    if (index == nullptr) return out;
    std::vector<Placed> with_index{{index, 0, -asc / 2}, {&out, index->width(), 0}};
    return compose(with_index);
  }

  Box accent(const std::string& cmd, const Box& body, int k, bool below) {
    const int t = std::max(1, k / 2);
    Box mark;
    if (cmd == "\\overline" || cmd == "\\underline" || cmd.rfind("\\wide", 0) == 0 || cmd.rfind("\\over", 0) == 0 ||
        cmd == "\\underbrace") {
      mark = rule(std::max(body.width(), 3 * k), t);
    } else {
      mark = pattern_box((mix64(fnv1a(cmd)) & 0x7fffULL) | 0x4ULL, 5, 3, small(k));
    }
    const int x = std::max(0, (body.width() - mark.width()) / 2);
    std::vector<Placed> parts{{&body, 0, 0}};
    if (below) {
      parts.push_back({&mark, x, body.descent() + k + mark.ascent()});
    } else {
      parts.push_back({&mark, x, -body.ascent() - k});
    }
    return compose(parts);
  }

  Box atom(int k, const std::string& style) {
    if (pos_ >= toks_.size()) fail("unexpected end of formula");
    const std::string t = toks_[pos_++];
    if (t == "{") return list(k, style, "}");
    if (t == "}") fail("unmatched '}'");
    if (t == "^" || t == "_") fail("misplaced script marker");
    if (t == "&" || t == "\\\\") fail("alignment outside of an environment");
    if (t == "\\frac" || t == "\\dfrac" || t == "\\tfrac") {
      Box num = atom(k, style);
      Box den = atom(k, style);
      return fraction(num, den, k, true);
    }
    if (t == "\\binom") {
      Box top = atom(k, style);
      Box bot = atom(k, style);
      Box body = fraction(top, bot, k, false);
      Box open = glyph("(", style, k);
      Box close = glyph(")", style, k);
      return row({open, body, close}, k);
    }
    if (t == "\\sqrt") {
      std::optional<Box> index;
      if (pos_ < toks_.size() && toks_[pos_] == "[") {
        ++pos_;
        index = list(small(k), style, "]");
      }
      Box body = atom(k, style);
      return radical(body, index ? &*index : nullptr, k);
    }
    if (t == "\\overset" || t == "\\stackrel" || t == "\\underset") {
      Box small_part = atom(small(k), style);
      Box body = atom(k, style);
      const bool below = t == "\\underset";
      const int x = std::max(0, (body.width() - small_part.width()) / 2);
      const int bx = std::max(0, (small_part.width() - body.width()) / 2);
      std::vector<Placed> parts{{&body, bx, 0}};
      parts.push_back(below ? Placed{&small_part, x, body.descent() + k + small_part.ascent()}
                            : Placed{&small_part, x, -body.ascent() - k - small_part.descent()});
      return compose(parts);
    }
    if (over_accents().contains(t)) return accent(t, atom(k, style), k, false);
    if (t == "\\underline" || t == "\\underbrace") return accent(t, atom(k, style), k, true);
    if (font_commands().contains(t)) return atom(k, style + t);
    if (t == "\\left" || t == "\\right" || t == "\\middle" || t == "\\big" || t == "\\Big" || t == "\\bigg" ||
        t == "\\Bigg") {
      const std::string& d = next(t.c_str());
      if (d == ".") return blank(k, 7 * k, 0);
      if (d.size() > 1 && d[0] == '\\' && !symbol_commands().contains(d) && d != "\\|") {
        fail("undefined delimiter " + d);
      }
      return glyph(d, style, k);
    }
    if (const int w = space_width(t, k); w >= 0) return blank(w, 7 * k, 0);
    if (t.size() > 1 && t[0] == '\\') {
      if (!symbol_commands().contains(t)) fail("undefined control sequence " + t);
    }
    return glyph(t, style, k);
  }

  std::vector<std::string> toks_;
  std::size_t pos_ = 0;
  std::string font_;
};

}  // namespace

cv::Mat stub_render(const NormalizedLatex& latex, const std::string& font, int dpi) {
  if (dpi <= 0) throw Error(ErrorKind::CompileFailure, "dpi must be positive");
  const int k = std::max(1, static_cast<int>(std::lround(dpi / 40.0)));
  StubLayout layout(lex_latex(latex.text), font);
  Box box = layout.run(k);
  if (box.ink.empty() || cv::countNonZero(box.ink) == 0) {
    throw Error(ErrorKind::CompileFailure, "formula has no visible content");
  }
  cv::Mat1b page = 255 - box.ink;
  return crop_with_margin(page);
}

void StubRenderer::render(const NormalizedLatex& latex, const std::string& font, int dpi,
                          const fs::path& out_png) const {
  write_png(out_png, stub_render(latex, font, dpi));
}

// ---------------------------------------------------------------------------
// External command

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

bool is_executable(const fs::path& p) {
  std::error_code ec;
  return fs::is_regular_file(p, ec) && ::access(p.c_str(), X_OK) == 0;
}

}  // namespace

CommandRenderer::CommandRenderer(std::string command_template, fs::path scratch_dir)
    : template_(std::move(command_template)), scratch_(std::move(scratch_dir)) {}

void CommandRenderer::check_available() const {
  std::istringstream in(template_);
  std::string program;
  in >> program;
  if (program.empty()) throw Error(ErrorKind::RendererUnavailable, "empty renderer command template");
  bool found = false;
  if (program.find('/') != std::string::npos) {
    found = is_executable(program);
  } else if (const char* path = std::getenv("PATH")) {
    std::stringstream dirs(path);
    std::string dir;
    while (!found && std::getline(dirs, dir, ':')) found = is_executable(fs::path(dir.empty() ? "." : dir) / program);
  }
  if (!found) {
    throw Error(ErrorKind::RendererUnavailable, "renderer program '" + program + "' not found (template: " + template_ + ")");
  }
}

void CommandRenderer::render(const NormalizedLatex& latex, const std::string& font, int dpi,
                             const fs::path& out_png) const {
  fs::create_directories(scratch_);
  const std::string stem = out_png.stem().string();
  const fs::path tex = scratch_ / (stem + ".tex");
  const fs::path log = scratch_ / (stem + ".log");
  {
    std::ofstream f(tex, std::ios::trunc);
    f << latex.text << '\n';
    if (!f) throw Error(ErrorKind::RendererUnavailable, "cannot write scratch file " + tex.string());
  }
  std::string cmd = template_;
  replace_all(cmd, "{latex_file}", shell_quote(tex.string()));
  replace_all(cmd, "{out_png}", shell_quote(out_png.string()));
  replace_all(cmd, "{dpi}", std::to_string(dpi));
  replace_all(cmd, "{font}", shell_quote(font));
  cmd += " >" + shell_quote(log.string()) + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::error_code ec;
  fs::remove(tex, ec);
  std::string detail;
  {
    std::ifstream f(log);
    std::getline(f, detail);
  }
  fs::remove(log, ec);
  const int code = (status != -1 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  if (code == 127 || code == 126) {
    throw Error(ErrorKind::RendererUnavailable, "renderer command failed to start (template: " + template_ + ")");
  }
  if (code != 0) {
    throw Error(ErrorKind::CompileFailure, "renderer exit " + std::to_string(code) + (detail.empty() ? "" : ": " + detail));
  }
  cv::Mat raw = cv::imread(out_png.string(), cv::IMREAD_COLOR);
  if (raw.empty()) throw Error(ErrorKind::CompileFailure, "renderer produced no readable PNG at " + out_png.string());
  write_png(out_png, crop_with_margin(raw));
}

}  // namespace mathrec
