// SPDX-License-Identifier: Apache-2.0
#include "mathrec/synthetic.hpp"

#include <array>
#include <string_view>
#include <unordered_set>

#include "mathrec/errors.hpp"
#include "mathrec/latex_norm.hpp"
#include "mathrec/rng.hpp"

namespace mathrec {

namespace {

constexpr std::array<std::string_view, 12> kGreek = {"\\alpha", "\\beta",  "\\gamma", "\\delta", "\\theta", "\\lambda",
                                                     "\\mu",    "\\pi",    "\\sigma", "\\phi",   "\\omega", "\\infty"};
constexpr std::array<std::string_view, 10> kOps = {"+", "-", "=", "\\cdot", "\\times", "<", ">", "\\le", "\\ge", "\\pm"};
constexpr std::array<std::string_view, 6> kFuncs = {"\\sin", "\\cos", "\\log", "\\exp", "\\tan", "\\ln"};

class Generator {
 public:
  Generator(std::uint64_t seed, int max_depth) : rng_(seed), max_depth_(max_depth) {}

  std::string expression(int budget, int depth = 0) {
    std::string out;
    int used = 0;
    while (used < budget) {
      if (!out.empty()) {
        out += ' ';
        out += pick(kOps);
        ++used;
      }
      int cost = 0;
      out += ' ' + term(std::max(1, budget - used), depth, cost);
      used += cost;
    }
    return out;
  }

 private:
  template <std::size_t N>
  std::string_view pick(const std::array<std::string_view, N>& a) {
    return a[static_cast<std::size_t>(uniform_int(rng_, 0, N - 1))];
  }

  std::string atom() {
    const double r = uniform01(rng_);
    if (r < 0.55) return std::string(1, static_cast<char>('a' + uniform_int(rng_, 0, 25)));
    if (r < 0.8) return std::string(1, static_cast<char>('0' + uniform_int(rng_, 0, 9)));
    if (r < 0.9) return std::string(1, static_cast<char>('A' + uniform_int(rng_, 0, 25)));
    return std::string(pick(kGreek));
  }

  std::string braced(const std::string& inner) { return "{" + inner + "}"; }

  std::string term(int room, int depth, int& cost) {
    const bool nest = depth < max_depth_;
    const double r = uniform01(rng_);
    if (nest && room >= 9 && r < 0.2) {
      const int inner = room - 5;
      const int top = static_cast<int>(uniform_int(rng_, 1, std::max(1, inner / 2)));
      const int bottom = static_cast<int>(uniform_int(rng_, 1, std::max(1, inner - top)));
      cost = 5 + top + bottom;
      if (top == 1 && bottom == 1 && uniform01(rng_) < 0.5) return "\\frac " + atom() + " " + atom();
      return "\\frac" + braced(expression(top, depth + 1)) + braced(expression(bottom, depth + 1));
    }
    if (nest && room >= 5 && r < 0.3) {
      const int inner = static_cast<int>(uniform_int(rng_, 1, std::min(room - 3, 6)));
      cost = 3 + inner;
      return "\\sqrt" + braced(expression(inner, depth + 1));
    }
    if (nest && room >= 6 && r < 0.4) {
      const int inner = static_cast<int>(uniform_int(rng_, 1, std::min(room - 4, 8)));
      cost = 4 + inner;
      return "\\left( " + expression(inner, depth + 1) + " \\right)";
    }
    if (room >= 5 && r < 0.65) {
      const bool sup = uniform01(rng_) < 0.6;
      const std::string base = atom();
      if (uniform01(rng_) < 0.4) {
        cost = 5;
        return base + (sup ? "^" : "_") + atom();
      }
      const int inner = static_cast<int>(uniform_int(rng_, 1, std::min(room - 4, 4)));
      cost = 4 + inner;
      return base + (sup ? "^" : "_") + braced(expression(inner, depth + 1));
    }
    if (room >= 2 && r < 0.72) {
      cost = 2;
      return std::string(pick(kFuncs)) + " " + atom();
    }
    cost = 1;
    return atom();
  }

  Rng rng_;
  int max_depth_;
};

int token_count(const NormalizedLatex& n) {
  if (n.empty()) return 0;
  int c = 1;
  for (char ch : n.text) c += ch == ' ' ? 1 : 0;
  return c;
}

}  // namespace

std::vector<std::string> synthesize_formulas(std::size_t count, std::uint64_t seed, const SynthOptions& options) {
  if (options.min_tokens < 1 || options.max_tokens < options.min_tokens) {
    throw Error(ErrorKind::ConfigError, "synthetic formulas need 1 <= min_tokens <= max_tokens");
  }
  Generator gen(derive_seed(seed, 0x73796e7468ULL), options.max_depth);
  Rng budget_rng(derive_seed(seed, 0x62756467ULL));
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  const std::size_t max_attempts = 2000 * count + 10000;
  for (std::size_t attempt = 0; out.size() < count; ++attempt) {
    if (attempt >= max_attempts) {
      throw Error(ErrorKind::ConfigError, "could not generate enough distinct formulas in the requested length range");
    }
    // Budgets below the target compensate for structural tokens.
    const int target = static_cast<int>(uniform_int(budget_rng, options.min_tokens, options.max_tokens));
    const int budget = std::max(1, target * 2 / 3);
    std::string raw = gen.expression(budget);
    raw.erase(0, raw.find_first_not_of(' '));
    const NormalizedLatex norm = normalize(raw);
    const int len = token_count(norm);
    if (len < options.min_tokens || len > options.max_tokens) continue;
    if (!seen.insert(norm.text).second) continue;
    out.push_back(std::move(raw));
  }
  return out;
}

}  // namespace mathrec
