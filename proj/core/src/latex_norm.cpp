// SPDX-License-Identifier: Apache-2.0
#include "mathrec/latex_norm.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "mathrec/errors.hpp"

namespace mathrec {
namespace detail {
extern const std::string_view kBuiltinRewriteRules;
}

namespace {

bool is_ascii_letter(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // stray continuation byte: pass through as-is
}

std::vector<std::string> split_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ') ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

// Commands whose arguments are always braced, with an optional leading
// [...] argument where TeX allows one.
struct ArityEntry {
  std::string_view name;
  int arity;
  bool optional_arg;
};

constexpr ArityEntry kArity[] = {
    {"\\frac", 2, false},       {"\\dfrac", 2, false},      {"\\tfrac", 2, false},
    {"\\binom", 2, false},      {"\\stackrel", 2, false},   {"\\overset", 2, false},
    {"\\underset", 2, false},   {"\\sqrt", 1, true},        {"\\xrightarrow", 1, true},
    {"\\xleftarrow", 1, true},  {"\\hat", 1, false},        {"\\bar", 1, false},
    {"\\tilde", 1, false},      {"\\vec", 1, false},        {"\\dot", 1, false},
    {"\\ddot", 1, false},       {"\\check", 1, false},      {"\\breve", 1, false},
    {"\\acute", 1, false},      {"\\grave", 1, false},      {"\\widehat", 1, false},
    {"\\widetilde", 1, false},  {"\\overline", 1, false},   {"\\underline", 1, false},
    {"\\overrightarrow", 1, false}, {"\\overleftarrow", 1, false},
    {"\\overbrace", 1, false},  {"\\underbrace", 1, false}, {"\\mathrm", 1, false},
    {"\\mathbf", 1, false},     {"\\mathit", 1, false},     {"\\mathsf", 1, false},
    {"\\mathtt", 1, false},     {"\\mathcal", 1, false},    {"\\mathbb", 1, false},
    {"\\mathfrak", 1, false},   {"\\boldsymbol", 1, false}, {"\\pmb", 1, false},
    {"\\text", 1, false},       {"\\textbf", 1, false},     {"\\textit", 1, false},
    {"\\operatorname", 1, false}, {"\\mbox", 1, false},
};

const ArityEntry* find_arity(std::string_view command) {
  for (const auto& e : kArity) {
    if (e.name == command) return &e;
  }
  return nullptr;
}

struct Node {
  std::string token;  // empty for groups
  std::vector<Node> children;
  bool group = false;

  static Node make_group(std::vector<Node> c) {
    Node n;
    n.group = true;
    n.children = std::move(c);
    return n;
  }
};

std::vector<Node> parse_nodes(const std::vector<std::string>& tokens, std::size_t& pos, bool nested) {
  std::vector<Node> seq;
  while (pos < tokens.size()) {
    const std::string& t = tokens[pos];
    if (t == "{") {
      ++pos;
      seq.push_back(Node::make_group(parse_nodes(tokens, pos, true)));
      continue;
    }
    if (t == "}") {
      if (!nested) throw Error(ErrorKind::UnbalancedBraces, "unexpected '}' in LaTeX input");
      ++pos;
      return seq;
    }
    Node n;
    n.token = t;
    seq.push_back(std::move(n));
    ++pos;
  }
  if (nested) throw Error(ErrorKind::UnbalancedBraces, "missing '}' in LaTeX input");
  return seq;
}

void ensure_group(std::vector<Node>& seq, std::size_t i) {
  if (i < seq.size() && !seq[i].group) {
    std::vector<Node> inner;
    inner.push_back(std::move(seq[i]));
    seq[i] = Node::make_group(std::move(inner));
  }
}

void canonicalize(std::vector<Node>& seq) {
  // Infix fractions: the first \over or \choose at this level splits the group.
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i].group || (seq[i].token != "\\over" && seq[i].token != "\\choose")) continue;
    const std::string head = seq[i].token == "\\over" ? "\\frac" : "\\binom";
    std::vector<Node> left(std::make_move_iterator(seq.begin()),
                           std::make_move_iterator(seq.begin() + static_cast<std::ptrdiff_t>(i)));
    std::vector<Node> right(std::make_move_iterator(seq.begin() + static_cast<std::ptrdiff_t>(i) + 1),
                            std::make_move_iterator(seq.end()));
    canonicalize(left);
    canonicalize(right);
    seq.clear();
    Node cmd;
    cmd.token = head;
    seq.push_back(std::move(cmd));
    seq.push_back(Node::make_group(std::move(left)));
    seq.push_back(Node::make_group(std::move(right)));
    return;
  }

  // A bare group holding an infix fraction, {a \over b}, becomes the
  // fraction itself; groups that are arguments keep their braces.
  std::vector<bool> is_argument(seq.size(), false);
  std::vector<bool> infix(seq.size(), false);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    Node& n = seq[i];
    if (n.group) {
      infix[i] = std::any_of(n.children.begin(), n.children.end(), [](const Node& c) {
        return !c.group && (c.token == "\\over" || c.token == "\\choose");
      });
      canonicalize(n.children);
      continue;
    }
    if (n.token == "^" || n.token == "_") {
      ensure_group(seq, i + 1);
      if (i + 1 < seq.size()) is_argument[i + 1] = true;
      continue;
    }
    const ArityEntry* entry = find_arity(n.token);
    if (entry == nullptr) continue;
    std::size_t j = i + 1;
    if (entry->optional_arg && j < seq.size() && !seq[j].group && seq[j].token == "[") {
      int depth = 0;
      for (; j < seq.size(); ++j) {
        if (seq[j].group) {
          canonicalize(seq[j].children);
          continue;
        }
        if (seq[j].token == "[") ++depth;
        if (seq[j].token == "]" && --depth == 0) {
          ++j;
          break;
        }
      }
    }
    for (int a = 0; a < entry->arity && j < seq.size(); ++a, ++j) {
      ensure_group(seq, j);
      is_argument[j] = true;
    }
  }
  if (std::none_of(infix.begin(), infix.end(), [](bool b) { return b; })) return;
  std::vector<Node> out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (infix[i] && !is_argument[i]) {
      for (auto& c : seq[i].children) out.push_back(std::move(c));
    } else {
      out.push_back(std::move(seq[i]));
    }
  }
  seq = std::move(out);
}

void flatten(const std::vector<Node>& seq, std::vector<std::string>& out) {
  for (const Node& n : seq) {
    if (n.group) {
      out.emplace_back("{");
      flatten(n.children, out);
      out.emplace_back("}");
    } else {
      out.push_back(n.token);
    }
  }
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Rewrite table

std::string_view RewriteTable::builtin_text() { return detail::kBuiltinRewriteRules; }

const RewriteTable& RewriteTable::builtin() {
  static const RewriteTable table = parse(builtin_text());
  return table;
}

RewriteTable RewriteTable::parse(std::string_view text) {
  RewriteTable table;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.front() == '#') {
      constexpr std::string_view kVersion = "# version:";
      if (line.starts_with(kVersion)) {
        std::string_view v = line.substr(kVersion.size());
        while (!v.empty() && v.front() == ' ') v.remove_prefix(1);
        int version = 0;
        auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), version);
        if (ec != std::errc{}) {
          throw Error(ErrorKind::ConfigError, "rewrite table: bad version on line " + std::to_string(line_no));
        }
        table.version_ = version;
      }
      continue;
    }
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw Error(ErrorKind::ConfigError, "rewrite table: missing TAB on line " + std::to_string(line_no));
    }
    RewriteRule rule;
    rule.pattern = split_tokens(line.substr(0, tab));
    rule.replacement = split_tokens(line.substr(tab + 1));
    if (rule.pattern.empty()) {
      throw Error(ErrorKind::ConfigError, "rewrite table: empty pattern on line " + std::to_string(line_no));
    }
    table.rules_.push_back(std::move(rule));
    if (end == text.size()) break;
  }
  return table;
}

RewriteTable RewriteTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open rewrite table " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::vector<std::string> RewriteTable::apply(std::vector<std::string> tokens) const {
  for (const RewriteRule& rule : rules_) {
    const std::size_t m = rule.pattern.size();
    if (tokens.size() < m) continue;
    std::vector<std::string> out;
    out.reserve(tokens.size());
    std::size_t i = 0;
    while (i < tokens.size()) {
      if (i + m <= tokens.size() && std::equal(rule.pattern.begin(), rule.pattern.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
        out.insert(out.end(), rule.replacement.begin(), rule.replacement.end());
        i += m;
      } else {
        out.push_back(std::move(tokens[i]));
        ++i;
      }
    }
    tokens = std::move(out);
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Lexing and normalization

std::vector<std::string> lex_latex(std::string_view text, bool strip_comments) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (c == '%' && strip_comments) {
      while (i < text.size() && text[i] != '\n') ++i;
      continue;
    }
    if (c == '\\') {
      if (i + 1 >= text.size()) {
        ++i;  // dangling backslash
        continue;
      }
      const char next = text[i + 1];
      if (is_ascii_letter(next)) {
        std::size_t j = i + 1;
        while (j < text.size() && is_ascii_letter(text[j])) ++j;
        out.emplace_back(text.substr(i, j - i));
        i = j;
      } else if (is_space(next)) {
        out.emplace_back("~");  // control space
        i += 2;
      } else {
        const std::size_t len = utf8_length(static_cast<unsigned char>(next));
        out.emplace_back(text.substr(i, std::min(1 + len, text.size() - i)));
        i += 1 + len;
      }
      continue;
    }
    const std::size_t len = std::min(utf8_length(static_cast<unsigned char>(c)), text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

int command_arity(std::string_view command) noexcept {
  const ArityEntry* e = find_arity(command);
  return e != nullptr ? e->arity : 0;
}

NormalizedLatex normalize(std::string_view raw, const RewriteTable& table) {
  std::vector<std::string> tokens = table.apply(lex_latex(raw, true));
  if (tokens.empty()) return NormalizedLatex{};
  std::size_t pos = 0;
  std::vector<Node> tree = parse_nodes(tokens, pos, false);
  canonicalize(tree);
  std::vector<std::string> flat;
  flat.reserve(tokens.size() * 2);
  flatten(tree, flat);
  return NormalizedLatex{join(flat)};
}

// ---------------------------------------------------------------------------
// Vocabulary

namespace {
const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"<pad>", "<bos>", "<eos>", "<unk>"};
  return specials;
}
}  // namespace

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  tokens_ = special_tokens();
  tokens_.reserve(tokens.size() + kNumSpecials);
  for (auto& t : tokens) {
    if (t.empty() || t.find_first_of(" \t\n\r") != std::string::npos) {
      throw Error(ErrorKind::ConfigError, "vocabulary token contains whitespace: '" + t + "'");
    }
    const auto id = static_cast<TokenId>(tokens_.size());
    if (!ids_.emplace(t, id).second) {
      throw Error(ErrorKind::ConfigError, "duplicate vocabulary token '" + t + "'");
    }
    tokens_.push_back(std::move(t));
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::ConfigError, "cannot write vocabulary " + path.string());
  for (std::size_t i = kNumSpecials; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

TokenId Vocabulary::id_of(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.contains(std::string(token)); }

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw Error(ErrorKind::InvalidTokenId, "token id " + std::to_string(id) + " outside vocabulary of size " +
                                               std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

Vocabulary build_vocabulary(const std::vector<NormalizedLatex>& corpus, int min_frequency) {
  if (corpus.empty()) throw Error(ErrorKind::EmptyCorpus, "cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::int64_t> freq;
  for (const auto& latex : corpus) {
    for (auto& t : lex_latex(latex.text, false)) ++freq[std::move(t)];
  }
  std::vector<std::pair<std::string, std::int64_t>> entries;
  for (auto& [tok, n] : freq) {
    if (n >= min_frequency) entries.emplace_back(tok, n);
  }
  if (entries.empty()) {
    throw Error(ErrorKind::EmptyCorpus, "no token reaches min_frequency " + std::to_string(min_frequency));
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(entries.size());
  for (auto& e : entries) tokens.push_back(std::move(e.first));
  return Vocabulary(std::move(tokens));
}

TokenSequence tokenize(const NormalizedLatex& latex, const Vocabulary& vocab) {
  TokenSequence ids;
  for (const auto& t : lex_latex(latex.text, false)) ids.push_back(vocab.id_of(t));
  return ids;
}

NormalizedLatex detokenize(const TokenSequence& tokens, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return NormalizedLatex{std::move(out)};
}

CountVector symbol_counts(const TokenSequence& tokens, const Vocabulary& vocab) {
  CountVector cv;
  cv.counts.assign(static_cast<std::size_t>(vocab.size()), 0.0);
  for (TokenId id : tokens) {
    if (id < 0 || id >= vocab.size()) {
      throw Error(ErrorKind::InvalidTokenId, "token id " + std::to_string(id) + " outside vocabulary");
    }
    if (Vocabulary::is_special(id)) continue;
    cv.counts[static_cast<std::size_t>(id)] += 1.0;
    cv.total += 1.0;
  }
  return cv;
}

}  // namespace mathrec
