// SPDX-License-Identifier: Apache-2.0
#include "mathrec/data_builder.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "mathrec/errors.hpp"
#include "mathrec/rng.hpp"

namespace mathrec {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Subset s) noexcept {
  switch (s) {
    case Subset::SPE: return "SPE";
    case Subset::CPE: return "CPE";
    case Subset::SCE: return "SCE";
    case Subset::HWE: return "HWE";
  }
  return "SPE";
}

Subset parse_subset(std::string_view name) {
  for (Subset s : kAllSubsets) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorKind::ManifestSchemaError, "unknown subset '" + std::string(name) + "'");
}

int BucketSpec::bucket_of(int token_length) const {
  const int n = count();
  for (int b = 0; b < n; ++b) {
    const bool last = b + 1 == n;
    if (token_length >= boundaries[b] && (token_length < boundaries[b + 1] || (last && token_length == boundaries[b + 1]))) {
      return b;
    }
  }
  return -1;
}

void BucketSpec::validate() const {
  if (boundaries.size() < 2) throw Error(ErrorKind::ConfigError, "buckets: need at least two boundaries");
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] <= boundaries[i - 1]) throw Error(ErrorKind::ConfigError, "buckets: boundaries must be strictly increasing");
  }
}

std::vector<FormulaSample> dedup(const std::vector<FormulaSample>& samples) {
  std::vector<FormulaSample> out;
  std::unordered_set<std::string> seen;
  for (const auto& s : samples) {
    if (seen.insert(s.latex.text).second) out.push_back(s);
  }
  return out;
}

std::vector<FormulaSample> length_balanced_sample(const std::vector<FormulaSample>& samples, const BucketSpec& buckets,
                                                  int per_bucket, std::uint64_t seed) {
  buckets.validate();
  if (per_bucket < 1) throw Error(ErrorKind::ConfigError, "per_bucket must be >= 1");
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(buckets.count()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int b = buckets.bucket_of(samples[i].token_length);
    if (b >= 0) members[static_cast<std::size_t>(b)].push_back(i);
  }
  std::vector<std::size_t> chosen;
  for (std::size_t b = 0; b < members.size(); ++b) {
    auto& pool = members[b];
    const std::size_t take = std::min(pool.size(), static_cast<std::size_t>(per_bucket));
    if (pool.size() < static_cast<std::size_t>(per_bucket)) {
      spdlog::warn("bucket [{}, {}{}: population {} below per_bucket {}", buckets.boundaries[b], buckets.boundaries[b + 1],
                   b + 1 == members.size() ? "]" : ")", pool.size(), per_bucket);
    }
    Rng rng(derive_seed(seed, 0x62756b74ULL, b));
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                          static_cast<std::int64_t>(pool.size()) - 1));
      std::swap(pool[i], pool[j]);
    }
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<FormulaSample> out;
  out.reserve(chosen.size());
  for (std::size_t i : chosen) out.push_back(samples[i]);
  return out;
}

void BuildConfig::validate() const {
  if (fonts.empty()) throw Error(ErrorKind::ConfigError, "fonts: at least one font required");
  if (dpis.empty()) throw Error(ErrorKind::ConfigError, "dpis: at least one dpi required");
  for (int d : dpis) {
    if (d <= 0) throw Error(ErrorKind::ConfigError, "dpis: values must be positive");
  }
  buckets.validate();
  if (per_bucket < 0) throw Error(ErrorKind::ConfigError, "per_bucket must be >= 0");
  if (min_frequency < 1) throw Error(ErrorKind::ConfigError, "min_frequency must be >= 1");
  if (workers < 1) throw Error(ErrorKind::ConfigError, "workers must be >= 1");
}

namespace {

int count_tokens(const NormalizedLatex& latex) {
  if (latex.empty()) return 0;
  return static_cast<int>(std::count(latex.text.begin(), latex.text.end(), ' ')) + 1;
}

std::vector<std::string> split_tokens(const NormalizedLatex& latex) {
  std::vector<std::string> out;
  std::istringstream in(latex.text);
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

std::string image_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "images/%06zu.png", index);
  return buf;
}

}  // namespace

Manifest build_manifest(const fs::path& corpus_file, const fs::path& output_dir, const BuildConfig& config,
                        const Renderer& renderer, BuildStats* stats_out) {
  config.validate();
  BuildStats stats;
  std::ifstream in(corpus_file);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot read corpus " + corpus_file.string());

  std::vector<FormulaSample> samples;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("%%", 0) == 0) continue;
    ++stats.lines;
    FormulaSample s;
    std::string_view body = line;
    if (const auto tab = line.find('\t'); tab != std::string::npos) {
      const std::string_view head = std::string_view(line).substr(0, tab);
      for (Subset sub : kAllSubsets) {
        if (to_string(sub) == head) {
          s.subset = sub;
          body = std::string_view(line).substr(tab + 1);
        }
      }
    }
    try {
      s.latex = normalize(body);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::UnbalancedBraces) throw;
      ++stats.unbalanced;
      spdlog::warn("corpus line {}: {}", stats.lines, e.what());
      continue;
    }
    if (s.latex.empty()) {
      ++stats.empty;
      continue;
    }
    s.token_length = count_tokens(s.latex);
    if (config.buckets.bucket_of(s.token_length) < 0) {
      ++stats.out_of_range;
      continue;
    }
    samples.push_back(std::move(s));
  }
  const std::size_t before = samples.size();
  samples = dedup(samples);
  stats.duplicates = static_cast<int>(before - samples.size());

  std::optional<Vocabulary> vocab;
  if (config.vocabulary) {
    vocab = Vocabulary::load(*config.vocabulary);
    std::vector<FormulaSample> kept;
    for (auto& s : samples) {
      const auto toks = split_tokens(s.latex);
      if (std::all_of(toks.begin(), toks.end(), [&](const std::string& t) { return vocab->contains(t); })) {
        kept.push_back(std::move(s));
      } else {
        ++stats.unknown_tokens;
      }
    }
    samples = std::move(kept);
  }

  fs::create_directories(output_dir);
  std::error_code ec;
  fs::remove_all(output_dir / "images", ec);
  fs::create_directories(output_dir / "images");

  // Render fan-out: each sample's font and dpi come from its own seed, so
  // the result does not depend on the number of workers.
  std::vector<char> ok(samples.size(), 0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;
  std::atomic<int> failures{0};
  auto work = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      {
        std::lock_guard lock(fatal_mutex);
        if (fatal) return;
      }
      auto& s = samples[i];
      Rng rng(derive_seed(config.seed, 0x72656e64ULL, i));
      const auto& font = config.fonts[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(config.fonts.size()) - 1))];
      const int dpi = config.dpis[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(config.dpis.size()) - 1))];
      s.image_path = image_name(i);
      try {
        renderer.render(s.latex, font, dpi, output_dir / s.image_path);
        ok[i] = 1;
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::CompileFailure) {
          ++failures;
          spdlog::warn("discarding uncompilable formula '{}': {}", s.latex.text, e.what());
          continue;
        }
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        return;
      } catch (...) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        return;
      }
    }
  };
  if (config.workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < config.workers; ++w) pool.emplace_back(work);
  }
  if (fatal) std::rethrow_exception(fatal);
  stats.compile_failures = failures.load();

  std::vector<FormulaSample> rendered;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (ok[i]) rendered.push_back(samples[i]);
  }
  std::vector<FormulaSample> selected = rendered;
  if (config.per_bucket > 0) {
    selected = length_balanced_sample(rendered, config.buckets, config.per_bucket, config.seed);
    std::set<std::string> keep;
    for (const auto& s : selected) keep.insert(s.image_path);
    for (const auto& s : rendered) {
      if (!keep.contains(s.image_path)) fs::remove(output_dir / s.image_path, ec);
    }
    stats.unselected = static_cast<int>(rendered.size() - selected.size());
  }

  if (!vocab) {
    std::vector<NormalizedLatex> corpus;
    for (const auto& s : selected) corpus.push_back(s.latex);
    vocab = build_vocabulary(corpus, config.min_frequency);
  }
  vocab->save(output_dir / "vocab.txt");

  Manifest m;
  m.records = std::move(selected);
  m.buckets = config.buckets;
  m.rewrite_rules_version = RewriteTable::builtin().version();
  m.root = fs::weakly_canonical(fs::absolute(output_dir));
  save_manifest(m, output_dir / "manifest.jsonl");
  spdlog::info("built {} records from {} corpus lines ({} duplicates, {} uncompilable, {} unbalanced, {} unselected)",
               m.records.size(), stats.lines, stats.duplicates, stats.compile_failures, stats.unbalanced,
               stats.unselected);
  if (stats_out != nullptr) *stats_out = stats;
  return m;
}

void save_manifest(const Manifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::ManifestSchemaError, "cannot write manifest " + path.string());
  const json header = {{"schema_version", kManifestSchemaVersion},
                       {"vocabulary_ref", manifest.vocabulary_ref},
                       {"bucket_spec", manifest.buckets.boundaries},
                       {"rewrite_rules_version", manifest.rewrite_rules_version}};
  out << header.dump() << '\n';
  for (const auto& r : manifest.records) {
    const json rec = {{"image_path", r.image_path},
                      {"latex", r.latex.text},
                      {"subset", std::string(to_string(r.subset))},
                      {"token_length", r.token_length}};
    out << rec.dump() << '\n';
  }
  if (!out) throw Error(ErrorKind::ManifestSchemaError, "failed writing manifest " + path.string());
}

namespace {

[[noreturn]] void schema_error(const fs::path& path, std::size_t line, const std::string& msg) {
  throw Error(ErrorKind::ManifestSchemaError, path.string() + ":" + std::to_string(line) + ": " + msg);
}

template <class T>
T field(const json& obj, const char* key, const fs::path& path, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(path, line, std::string("missing key '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    schema_error(path, line, std::string("key '") + key + "' has the wrong type");
  }
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ManifestSchemaError, "cannot read manifest " + path.string());
  Manifest m;
  m.root = fs::weakly_canonical(fs::absolute(path).parent_path());
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) schema_error(path, 1, "missing header line");
  const json header = json::parse(line, nullptr, false);
  if (!header.is_object()) schema_error(path, 1, "header is not a JSON object");
  const int version = field<int>(header, "schema_version", path, 1);
  if (version != kManifestSchemaVersion) schema_error(path, 1, "unsupported schema_version " + std::to_string(version));
  m.vocabulary_ref = field<std::string>(header, "vocabulary_ref", path, 1);
  m.buckets.boundaries = field<std::vector<int>>(header, "bucket_spec", path, 1);
  if (header.contains("rewrite_rules_version")) m.rewrite_rules_version = field<int>(header, "rewrite_rules_version", path, 1);
  try {
    m.buckets.validate();
  } catch (const Error& e) {
    schema_error(path, 1, e.what());
  }
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json rec = json::parse(line, nullptr, false);
    if (!rec.is_object()) schema_error(path, lineno, "record is not a JSON object");
    for (auto it = rec.begin(); it != rec.end(); ++it) {
      static const std::set<std::string> known = {"image_path", "latex", "subset", "token_length"};
      if (!known.contains(it.key())) schema_error(path, lineno, "unknown key '" + it.key() + "'");
    }
    FormulaSample s;
    s.image_path = field<std::string>(rec, "image_path", path, lineno);
    s.latex = NormalizedLatex(field<std::string>(rec, "latex", path, lineno));
    try {
      s.subset = parse_subset(field<std::string>(rec, "subset", path, lineno));
    } catch (const Error& e) {
      schema_error(path, lineno, e.what());
    }
    s.token_length = field<int>(rec, "token_length", path, lineno);
    if (s.token_length < 1 || s.token_length != count_tokens(s.latex)) {
      schema_error(path, lineno, "token_length does not match the latex");
    }
    if (m.buckets.bucket_of(s.token_length) < 0) schema_error(path, lineno, "token_length outside every bucket");
    if (!seen.insert(s.latex.text).second) schema_error(path, lineno, "duplicate latex '" + s.latex.text + "'");
    if (!fs::is_regular_file(m.image_file(s))) {
      throw Error(ErrorKind::MissingImage, "manifest " + path.string() + " references missing image " + s.image_path);
    }
    m.records.push_back(std::move(s));
  }
  if (!fs::is_regular_file(m.vocabulary_file())) {
    schema_error(path, 1, "vocabulary_ref '" + m.vocabulary_ref + "' does not exist");
  }
  return m;
}

}  // namespace mathrec
