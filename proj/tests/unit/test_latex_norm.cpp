// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <set>

#include "mathrec/errors.hpp"
#include "mathrec/latex_norm.hpp"
#include "mathrec/synthetic.hpp"
#include "support.hpp"

using namespace mathrec;

namespace {

std::vector<std::string> token_strings(const TokenSequence& seq, const Vocabulary& v) {
  std::vector<std::string> out;
  for (TokenId id : seq) out.push_back(v.token(id));
  return out;
}

}  // namespace

TEST_CASE("normalize canonical forms", "[latex_norm]") {
  CHECK(normalize("\\frac a b").text == "\\frac { a } { b }");
  CHECK(normalize("x^{2}").text == "x ^ { 2 }");
  CHECK(normalize("x^2").text == "x ^ { 2 }");
  CHECK(normalize("a \\le b").text == "a \\leq b");
  CHECK(normalize("\\lbrace x \\rbrace").text == "\\{ x \\}");
  CHECK(normalize("a_i^2").text == "a _ { i } ^ { 2 }");
  CHECK(normalize("x^{ab}").text == "x ^ { a b }");
  CHECK(normalize("\\sqrt x").text == "\\sqrt { x }");
  CHECK(normalize("x^\\alpha").text == "x ^ { \\alpha }");
}

TEST_CASE("normalize strips comments and collapses whitespace", "[latex_norm]") {
  CHECK(normalize("a  +\tb % trailing remark\n+ c").text == "a + b + c");
  CHECK(normalize("a \\% b").text == "a \\% b");
  const auto n = normalize("  x \n\n =\t 1 ");
  CHECK(n.text == "x = 1");
  CHECK(n.text.find('\t') == std::string::npos);
  CHECK(n.text.find('\n') == std::string::npos);
  CHECK(n.text.find("  ") == std::string::npos);
}

TEST_CASE("\\over is rewritten to \\frac", "[latex_norm]") {
  CHECK(normalize("{a \\over b}").text == normalize("\\frac{a}{b}").text);
}

TEST_CASE("empty and blank input", "[latex_norm]") {
  CHECK(normalize("").empty());
  CHECK(normalize("   \t\n").empty());
  CHECK(normalize("% only a comment").empty());
}

TEST_CASE("unbalanced braces are rejected", "[latex_norm]") {
  for (const char* bad : {"{a", "a}", "\\frac{a}{b", "}{"}) {
    INFO(bad);
    try {
      normalize(bad);
      FAIL("expected UnbalancedBraces");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::UnbalancedBraces);
    }
  }
}

TEST_CASE("rewrite table parsing and version", "[latex_norm]") {
  const auto& t = RewriteTable::builtin();
  CHECK(t.version() >= 1);
  CHECK_FALSE(t.rules().empty());
  const auto custom = RewriteTable::parse("# version: 7\n\\foo\t\\bar\n\\gone\t\n");
  CHECK(custom.version() == 7);
  REQUIRE(custom.rules().size() == 2);
  CHECK(custom.apply({"\\foo", "x", "\\gone"}) == std::vector<std::string>{"\\bar", "x"});
}

TEST_CASE("tokenize examples", "[latex_norm]") {
  const Vocabulary v({"\\frac", "{", "}", "a", "b", "+"});
  CHECK(token_strings(tokenize(NormalizedLatex("\\frac { a } { b }"), v), v) ==
        std::vector<std::string>{"\\frac", "{", "a", "}", "{", "b", "}"});
  CHECK(tokenize(NormalizedLatex(""), v).empty());
  CHECK(token_strings(tokenize(NormalizedLatex("a + b"), v), v) == std::vector<std::string>{"a", "+", "b"});
  const auto with_unknown = tokenize(NormalizedLatex("a - b"), v);
  REQUIRE(with_unknown.size() == 3);
  CHECK(with_unknown[1] == Vocabulary::kUnk);
}

TEST_CASE("detokenize examples", "[latex_norm]") {
  const Vocabulary v({"\\frac", "{", "}", "a", "b", "+"});
  auto ids = [&](std::initializer_list<const char*> toks) {
    TokenSequence s;
    for (const char* t : toks) s.push_back(v.id_of(t));
    return s;
  };
  CHECK(detokenize(ids({"a", "+", "b"}), v).text == "a + b");
  CHECK(detokenize({}, v).text.empty());
  CHECK(detokenize(ids({"\\frac", "{", "a", "}", "{", "b", "}"}), v).text == "\\frac { a } { b }");
  try {
    detokenize({v.size()}, v);
    FAIL("expected InvalidTokenId");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidTokenId);
  }
  CHECK_THROWS_AS(detokenize({-1}, v), Error);
}

TEST_CASE("build_vocabulary examples", "[latex_norm]") {
  const std::vector<NormalizedLatex> corpus{NormalizedLatex("a a b")};
  const auto v1 = build_vocabulary(corpus, 1);
  CHECK(v1.size() == 6);
  CHECK(v1.id_of("a") == 4);
  CHECK(v1.id_of("b") == 5);
  const auto v2 = build_vocabulary(corpus, 2);
  CHECK(v2.size() == 5);
  CHECK_FALSE(v2.contains("b"));
  try {
    build_vocabulary({NormalizedLatex("")}, 1);
    FAIL("expected EmptyCorpus");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyCorpus);
  }
}

TEST_CASE("vocabulary ordering: frequency then lexicographic", "[latex_norm]") {
  const auto v = build_vocabulary({NormalizedLatex("c b b a"), NormalizedLatex("c d")}, 1);
  // b:2 c:2 then a:1 d:1
  CHECK(v.token(4) == "b");
  CHECK(v.token(5) == "c");
  CHECK(v.token(6) == "a");
  CHECK(v.token(7) == "d");
  CHECK(v.token(Vocabulary::kPad) != v.token(Vocabulary::kEos));
}

TEST_CASE("vocabulary file round trip", "[latex_norm]") {
  testing::TempDir dir("vocab");
  const auto v = build_vocabulary({NormalizedLatex("\\frac { a } { b } + \\alpha")}, 1);
  v.save(dir / "vocab.txt");
  const auto text = testing::read_text(dir / "vocab.txt");
  CHECK(text.rfind("{\n", 0) == 0);  // most frequent first, specials implicit
  CHECK(Vocabulary::load(dir / "vocab.txt") == v);
}

TEST_CASE("symbol_counts examples", "[latex_norm]") {
  const Vocabulary v({"\\frac", "{", "}", "a", "b"});
  auto counts_of = [&](std::initializer_list<const char*> toks) {
    TokenSequence s;
    for (const char* t : toks) s.push_back(v.id_of(t));
    return symbol_counts(s, v);
  };
  const auto aab = counts_of({"a", "a", "b"});
  CHECK(aab.counts.size() == static_cast<std::size_t>(v.size()));
  CHECK(aab.counts[v.id_of("a")] == 2.0);
  CHECK(aab.counts[v.id_of("b")] == 1.0);
  CHECK(aab.total == 3.0);
  const auto empty = symbol_counts({}, v);
  CHECK(empty.total == 0.0);
  CHECK(std::all_of(empty.counts.begin(), empty.counts.end(), [](double c) { return c == 0.0; }));
  const auto frac = counts_of({"\\frac", "{", "a", "}", "{", "b", "}"});
  CHECK(frac.counts[v.id_of("\\frac")] == 1.0);
  CHECK(frac.counts[v.id_of("{")] == 2.0);
  CHECK(frac.counts[v.id_of("}")] == 2.0);
  CHECK(frac.total == 7.0);
  const auto specials = symbol_counts({Vocabulary::kBos, v.id_of("a"), Vocabulary::kEos}, v);
  CHECK(specials.counts[Vocabulary::kBos] == 0.0);
  CHECK(specials.total == 1.0);
}

TEST_CASE("normalizer properties over a generated corpus", "[latex_norm]") {
  const auto raw = synthesize_formulas(300, 99, {});
  std::vector<NormalizedLatex> norm;
  for (const auto& r : raw) {
    const auto n = normalize(r);
    CHECK(normalize(n.text) == n);
    CHECK(n.text.find("  ") == std::string::npos);
    norm.push_back(n);
  }
  const auto v = build_vocabulary(norm, 1);
  CHECK(build_vocabulary(norm, 1) == v);
  for (const auto& n : norm) {
    const auto ids = tokenize(n, v);
    CHECK(detokenize(ids, v) == n);
    const auto c = symbol_counts(ids, v);
    CHECK(c.total == static_cast<double>(ids.size()));
    CHECK(std::accumulate(c.counts.begin(), c.counts.end(), 0.0) == c.total);
  }
}

TEST_CASE("synthetic corpus respects its contract", "[latex_norm]") {
  SynthOptions o;
  o.min_tokens = 5;
  o.max_tokens = 12;
  const auto a = synthesize_formulas(100, 3, o);
  CHECK(a == synthesize_formulas(100, 3, o));
  std::set<std::string> seen;
  for (const auto& f : a) {
    const auto n = normalize(f);
    const auto len = std::count(n.text.begin(), n.text.end(), ' ') + 1;
    CHECK(len >= 5);
    CHECK(len <= 12);
    CHECK(seen.insert(n.text).second);
  }
  CHECK_THROWS_AS(synthesize_formulas(1, 0, SynthOptions{4, 2, 3}), Error);
}
