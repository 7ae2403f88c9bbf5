// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <algorithm>
#include <functional>

#include "mathrec/metrics.hpp"
#include "mathrec/rng.hpp"

using namespace mathrec;

namespace {

// Textbook recursive definition, no memoization.
std::size_t lev_oracle(const std::string& a, const std::string& b) {
  if (a.empty()) return b.size();
  if (b.empty()) return a.size();
  const std::string ra = a.substr(1);
  const std::string rb = b.substr(1);
  if (a[0] == b[0]) return lev_oracle(ra, rb);
  return 1 + std::min({lev_oracle(ra, b), lev_oracle(a, rb), lev_oracle(ra, rb)});
}

std::vector<std::string> all_ab_strings(int max_len) {
  std::vector<std::string> out{""};
  for (int len = 1; len <= max_len; ++len) {
    for (int mask = 0; mask < (1 << len); ++mask) {
      std::string s;
      for (int i = 0; i < len; ++i) s += (mask >> i) & 1 ? 'b' : 'a';
      out.push_back(s);
    }
  }
  return out;
}

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

TEST_CASE("edit distance equals the recursive oracle on short binary strings", "[metrics]") {
  const auto strings = all_ab_strings(4);
  for (const auto& a : strings) {
    for (const auto& b : strings) {
      REQUIRE(char_levenshtein(a, b) == lev_oracle(a, b));
    }
  }
}

TEST_CASE("edit distance examples", "[metrics]") {
  CHECK(char_levenshtein("kitten", "sitting") == 3);
  CHECK(edit_distance("kitten", "sitting") == Catch::Approx(3.0 / 7.0).epsilon(1e-15));
  CHECK(edit_distance("abc", "abc") == 0.0);
  CHECK(edit_distance("", "ab") == 1.0);
  CHECK(edit_distance("", "") == 0.0);
  // Code points, not bytes.
  CHECK(char_levenshtein("\xce\xb1", "\xce\xb2") == 1);
}

TEST_CASE("edit distance symmetry, bounds and triangle inequality", "[metrics]") {
  Rng rng(5);
  auto rand_str = [&] {
    std::string s;
    const auto n = uniform_int(rng, 0, 9);
    for (int i = 0; i < n; ++i) s += static_cast<char>('a' + uniform_int(rng, 0, 3));
    return s;
  };
  for (int i = 0; i < 500; ++i) {
    const auto a = rand_str(), b = rand_str(), c = rand_str();
    CHECK(edit_distance(a, b) == edit_distance(b, a));
    CHECK(edit_distance(a, b) >= 0.0);
    CHECK(edit_distance(a, b) <= 1.0);
    CHECK(char_levenshtein(a, c) <= char_levenshtein(a, b) + char_levenshtein(b, c));
  }
}

TEST_CASE("BLEU examples", "[metrics]") {
  const auto ref = words("a b c d e f");
  CHECK(bleu(ref, ref) == Catch::Approx(1.0).epsilon(1e-15));
  CHECK(bleu(std::vector<std::string>{}, ref) == 0.0);
  // Hand count: unigrams 4/6, bigrams 3/5, trigrams 2/4, 4-grams 1/3, equal lengths.
  const double expected = std::pow((4.0 / 6) * (3.0 / 5) * (2.0 / 4) * (1.0 / 3), 0.25);
  CHECK(bleu(words("a b c d e f"), words("a b c d x y")) == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("BLEU smoothing and brevity penalty", "[metrics]") {
  // 4-gram order has no candidates: add-one gives 1/1; brevity exp(1 - 4/3).
  CHECK(bleu(words("a b c"), words("a b c d")) == Catch::Approx(std::exp(1.0 - 4.0 / 3.0)).epsilon(1e-12));
  // Bigrams 2/4 (ab clipped to 1), trigrams 1/3, 4-grams 0 of 2 smoothed to 1/3.
  const double p = std::pow(1.0 * (2.0 / 4) * (1.0 / 3) * (1.0 / 3), 0.25);
  CHECK(bleu(words("a b c a b"), words("a b c b a")) == Catch::Approx(p * 1.0).epsilon(1e-12));
  CHECK(bleu(words("a"), std::vector<std::string>{}) == 0.0);
}

TEST_CASE("corpus BLEU pools statistics", "[metrics]") {
  BleuStats pooled;
  pooled += bleu_stats<std::string>(words("a b c d"), words("a b c d"));
  pooled += bleu_stats<std::string>(words("x y"), words("x z w v"));
  CHECK(pooled.prediction_length == 6);
  CHECK(pooled.reference_length == 8);
  CHECK(pooled.matches[0] == 5);
  CHECK(pooled.totals[0] == 6);
  const double p = std::pow((5.0 / 6) * (3.0 / 4) * (2.0 / 2) * (1.0 / 1), 0.25);
  CHECK(bleu_score(pooled) == Catch::Approx(std::exp(1.0 - 8.0 / 6.0) * p).epsilon(1e-12));
}

TEST_CASE("BLEU never increases as more tokens are corrupted", "[metrics]") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> ref(static_cast<std::size_t>(uniform_int(rng, 4, 30)));
    for (int& t : ref) t = static_cast<int>(uniform_int(rng, 0, 9));
    std::vector<std::size_t> order(ref.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    auto pred = ref;
    double prev = bleu(pred, ref);
    for (std::size_t k = 0; k < order.size(); ++k) {
      pred[order[k]] = 1000 + static_cast<int>(k);  // never matches anything
      const double cur = bleu(pred, ref);
      CHECK(cur <= prev + 1e-12);
      prev = cur;
    }
  }
}

TEST_CASE("exprate thresholds", "[metrics]") {
  using Seq = std::vector<int>;
  const Seq ref{1, 2, 3, 4, 5, 6};
  std::vector<Seq> preds, refs;
  for (int d : {0, 0, 0, 1, 1, 2, 2, 3, 3, 5}) {
    Seq p = ref;
    for (int i = 0; i < d; ++i) p[static_cast<std::size_t>(i)] = 100 + i;
    REQUIRE(levenshtein(p, ref) == static_cast<std::size_t>(d));
    preds.push_back(p);
    refs.push_back(ref);
  }
  CHECK(exprate(preds, refs, 0) == Catch::Approx(0.3).epsilon(1e-15));
  CHECK(exprate(preds, refs, 1) == Catch::Approx(0.5).epsilon(1e-15));
  CHECK(exprate(preds, refs, 2) == Catch::Approx(0.7).epsilon(1e-15));
  CHECK(exprate(refs, refs, 0) == 1.0);
  CHECK(exprate(std::vector<Seq>{{1}}, std::vector<Seq>{{2}}, 0) == 0.0);
  CHECK(exprate(std::vector<Seq>{{1}}, std::vector<Seq>{{2}}, 1) == 1.0);
  try {
    exprate(preds, std::vector<Seq>{}, 0);
    FAIL("expected LengthMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::LengthMismatch);
  }
}

TEST_CASE("exprate is monotone in k", "[metrics]") {
  Rng rng(2);
  std::vector<std::vector<int>> p, r;
  for (int i = 0; i < 200; ++i) {
    std::vector<int> a(static_cast<std::size_t>(uniform_int(rng, 0, 8))), b(static_cast<std::size_t>(uniform_int(rng, 0, 8)));
    for (int& x : a) x = static_cast<int>(uniform_int(rng, 0, 2));
    for (int& x : b) x = static_cast<int>(uniform_int(rng, 0, 2));
    p.push_back(a);
    r.push_back(b);
  }
  for (int k = 0; k < 6; ++k) CHECK(exprate(p, r, k) <= exprate(p, r, k + 1));
}
