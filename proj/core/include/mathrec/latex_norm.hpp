// SPDX-License-Identifier: Apache-2.0
//
// Canonical LaTeX normalization, command-level tokenization and the
// symbol vocabulary shared by the model and the metrics.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mathrec {

/// Canonical markup: tokens joined by single spaces, no tabs or newlines.
struct NormalizedLatex {
  std::string text;

  NormalizedLatex() = default;
  explicit NormalizedLatex(std::string t) : text(std::move(t)) {}

  bool empty() const noexcept { return text.empty(); }
  friend bool operator==(const NormalizedLatex&, const NormalizedLatex&) = default;
};

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

/// Token-sequence rewrite: every non-overlapping occurrence of `pattern`
/// is replaced by `replacement` (which may be empty).
struct RewriteRule {
  std::vector<std::string> pattern;
  std::vector<std::string> replacement;
};

/// Ordered synonym table. Text form is one rule per line,
/// `pattern<TAB>replacement`, with space-separated tokens on each side.
/// Lines starting with '#' are comments; `# version: N` sets the version.
class RewriteTable {
 public:
  RewriteTable() = default;

  static const RewriteTable& builtin();
  static std::string_view builtin_text();
  static RewriteTable parse(std::string_view text);
  static RewriteTable load(const std::filesystem::path& path);

  int version() const noexcept { return version_; }
  const std::vector<RewriteRule>& rules() const noexcept { return rules_; }

  /// Applies every rule in file order, one left-to-right pass per rule.
  std::vector<std::string> apply(std::vector<std::string> tokens) const;

 private:
  int version_ = 0;
  std::vector<RewriteRule> rules_;
};

/// Splits markup into lexemes: `\name` commands, `\x` control symbols,
/// and single (UTF-8) characters. Whitespace separates and is dropped.
/// With `strip_comments`, an unescaped '%' discards the rest of its line.
std::vector<std::string> lex_latex(std::string_view text, bool strip_comments = true);

/// Number of arguments the normalizer braces for `command`, or 0.
int command_arity(std::string_view command) noexcept;

/// Throws Error{UnbalancedBraces}. Empty or blank input yields an empty result.
NormalizedLatex normalize(std::string_view raw, const RewriteTable& table = RewriteTable::builtin());

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kNumSpecials = 4;

  Vocabulary();
  /// `tokens` are the non-special symbols in id order (id = index + 4).
  explicit Vocabulary(std::vector<std::string> tokens);

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::int32_t size() const noexcept { return static_cast<std::int32_t>(tokens_.size()); }
  TokenId id_of(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  static bool is_special(TokenId id) noexcept { return id >= 0 && id < kNumSpecials; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;  // includes the specials
  std::unordered_map<std::string, TokenId> ids_;
};

/// Frequency-ordered vocabulary (descending count, then lexicographic).
/// Throws Error{EmptyCorpus} when no token reaches `min_frequency`.
Vocabulary build_vocabulary(const std::vector<NormalizedLatex>& corpus, int min_frequency = 1);

TokenSequence tokenize(const NormalizedLatex& latex, const Vocabulary& vocab);

/// Throws Error{InvalidTokenId}.
NormalizedLatex detokenize(const TokenSequence& tokens, const Vocabulary& vocab);

struct CountVector {
  std::vector<double> counts;
  double total = 0.0;
};

/// Per-symbol multiplicities; special ids count as zero.
CountVector symbol_counts(const TokenSequence& tokens, const Vocabulary& vocab);

}  // namespace mathrec
