// SPDX-License-Identifier: Apache-2.0
//
// Corpus -> rendered, deduplicated, length-balanced dataset with a
// JSON-lines manifest.
#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mathrec/latex_norm.hpp"
#include "mathrec/render.hpp"

namespace mathrec {

enum class Subset { SPE, CPE, SCE, HWE };
inline constexpr Subset kAllSubsets[] = {Subset::SPE, Subset::CPE, Subset::SCE, Subset::HWE};

std::string_view to_string(Subset s) noexcept;
/// Throws Error{ManifestSchemaError} on unknown names.
Subset parse_subset(std::string_view name);

struct FormulaSample {
  std::string image_path;  // relative to the manifest directory
  NormalizedLatex latex;
  Subset subset = Subset::SPE;
  int token_length = 0;

  friend bool operator==(const FormulaSample&, const FormulaSample&) = default;
};

/// Token-length buckets [b0, b1), [b1, b2), ..., with the last bucket
/// closed on the right: [b_{n-1}, b_n].
struct BucketSpec {
  std::vector<int> boundaries{0, 8, 16, 32, 64, 128, 256, 1024};

  int count() const { return static_cast<int>(boundaries.size()) - 1; }
  /// Bucket index or -1 when outside every bucket.
  int bucket_of(int token_length) const;
  /// Throws Error{ConfigError} unless strictly increasing with >= 2 entries.
  void validate() const;

  friend bool operator==(const BucketSpec&, const BucketSpec&) = default;
};

inline constexpr int kManifestSchemaVersion = 1;

struct Manifest {
  std::vector<FormulaSample> records;
  std::string vocabulary_ref = "vocab.txt";  // relative to the manifest directory
  BucketSpec buckets;
  int rewrite_rules_version = 0;
  std::filesystem::path root;  // directory holding the manifest file

  std::filesystem::path image_file(const FormulaSample& s) const { return root / s.image_path; }
  std::filesystem::path vocabulary_file() const { return root / vocabulary_ref; }

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

/// First occurrence of each latex string wins; order otherwise stable.
std::vector<FormulaSample> dedup(const std::vector<FormulaSample>& samples);

/// Uniformly samples min(per_bucket, population) records per bucket
/// without replacement, keeping input order. Samples outside every bucket
/// are dropped. Short buckets log a warning.
std::vector<FormulaSample> length_balanced_sample(const std::vector<FormulaSample>& samples, const BucketSpec& buckets,
                                                  int per_bucket, std::uint64_t seed);

struct BuildConfig {
  std::vector<std::string> fonts{"default"};
  std::vector<int> dpis{80, 120, 160};
  BucketSpec buckets;
  int per_bucket = 0;  // 0 keeps every rendered sample
  std::uint64_t seed = 0;
  int min_frequency = 1;
  int workers = 1;
  /// Reuse an existing vocabulary; samples with unknown tokens are rejected.
  std::optional<std::filesystem::path> vocabulary;

  void validate() const;
};

struct BuildStats {
  int lines = 0;
  int unbalanced = 0;
  int empty = 0;
  int duplicates = 0;
  int out_of_range = 0;
  int unknown_tokens = 0;
  int compile_failures = 0;
  int unselected = 0;
};

/// normalize -> dedup -> render (one font/dpi per formula, drawn from the
/// seed) -> balance -> write images/, vocab.txt and manifest.jsonl.
/// Corpus lines are `latex` or `SUBSET<TAB>latex`; blank lines and lines
/// starting with `%%` are ignored. Throws Error{RendererUnavailable} at
/// the first unavailable-renderer failure.
Manifest build_manifest(const std::filesystem::path& corpus_file, const std::filesystem::path& output_dir,
                        const BuildConfig& config, const Renderer& renderer, BuildStats* stats = nullptr);

void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
/// Validates schema, uniqueness, bucket membership and image presence.
/// Throws Error{ManifestSchemaError} or Error{MissingImage}.
Manifest load_manifest(const std::filesystem::path& path);

}  // namespace mathrec
