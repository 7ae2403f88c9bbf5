// SPDX-License-Identifier: Apache-2.0
//
// Per-subset scoring of recognized markup: corpus BLEU-4, normalized
// character edit distance and token-level ExpRate with 1/2-edit slack.
#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mathrec/data_builder.hpp"
#include "mathrec/model.hpp"

namespace mathrec {

struct SubsetMetrics {
  int n = 0;
  // Empty subsets report no values.
  std::optional<double> bleu;
  std::optional<double> edit_distance;
  std::optional<double> exprate;
  std::optional<double> exprate_le1;
  std::optional<double> exprate_le2;
};

struct MetricsReport {
  std::string model_id;
  std::array<SubsetMetrics, 4> subsets;  // indexed by Subset
  SubsetMetrics overall;

  const SubsetMetrics& operator[](Subset s) const { return subsets[static_cast<std::size_t>(s)]; }
};

struct PredictionRecord {
  std::string image_path;
  Subset subset = Subset::SPE;
  std::string reference;   // re-normalized
  std::string prediction;  // re-normalized when possible
  double edit_distance = 0.0;
  std::size_t token_distance = 0;
  bool truncated = false;
};

/// Re-normalizes both sides and fills the per-sample distances. A
/// prediction that cannot be normalized (unbalanced braces) is compared
/// as produced.
PredictionRecord score_prediction(const std::string& image_path, Subset subset, const std::string& reference,
                                  const std::string& prediction);

/// Aggregates per subset and overall. BLEU is pooled over each group.
MetricsReport aggregate(const std::vector<PredictionRecord>& records, std::string model_id);

struct DecodeConfig {
  int beam = 1;
  int max_len = 0;  // 0: model max_sequence_length - 1
  int workers = 1;
};

struct EvalResult {
  MetricsReport report;
  std::vector<PredictionRecord> predictions;
};

/// Decodes every record (no augmentation) and scores it. Throws
/// Error{VocabularyMismatch} when the manifest vocabulary differs from
/// `vocab`.
EvalResult evaluate(const Manifest& manifest, const Model& model, const Vocabulary& vocab, const DecodeConfig& decode,
                    std::string model_id);

nlohmann::json to_json(const MetricsReport& report);
/// Fixed-width table: one row per subset plus overall.
std::string format_report(const MetricsReport& report);
/// Writes report.json, report.txt and predictions.jsonl into `out_dir`.
void write_eval_outputs(const EvalResult& result, const std::filesystem::path& out_dir);

}  // namespace mathrec
