// SPDX-License-Identifier: Apache-2.0
//
// Optimization loop: warmup-cosine schedule, decoupled weight decay,
// length-bucketed batches, checkpoints and the metrics log.
#pragma once

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mathrec/augment.hpp"
#include "mathrec/data_builder.hpp"
#include "mathrec/latex_norm.hpp"
#include "mathrec/losses.hpp"
#include "mathrec/model.hpp"

namespace mathrec {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct TrainConfig {
  int total_iterations = 2000;
  std::optional<int> warmup_iterations;  // default: 2% of total_iterations
  double init_lr = 1e-4;
  double min_lr = 1e-8;
  double warmup_lr = 1e-5;
  double weight_decay = 0.05;
  int batch_size = 8;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  AugmentConfig augment;
  std::string train_manifest;
  std::string val_manifest;  // optional
  std::string output_dir = "run";
  int checkpoint_interval = 500;  // 0: final checkpoint only
  int validation_interval = 0;    // 0: no periodic validation
  double grad_clip = 1.0;         // global norm; 0 disables
  OptimizerConfig optimizer;
  int workers = 1;
  ModelConfig model;  // vocab_size 0 is filled from the training vocabulary

  int warmup() const;
  /// Throws Error{ConfigError} naming the field.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
/// Reads a JSON config file and applies `key.path=value` overrides first.
TrainConfig load_train_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Linear warmup from warmup_lr to init_lr, then cosine to min_lr.
/// Throws Error{StepOutOfRange} outside [0, total_iterations].
double lr_schedule(int step, const TrainConfig& cfg);

/// AdamW with decoupled decay on parameters flagged `decay`.
class AdamW {
 public:
  AdamW(nn::ParameterSet& params, OptimizerConfig cfg, double weight_decay);

  /// `t` is the 1-based update count used for bias correction.
  void step(double lr, int t);
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  nn::ParameterSet* params_;
  OptimizerConfig cfg_;
  double weight_decay_;
  nn::ParameterSet moments_;  // m then v per parameter
};

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(nn::ParameterSet& params, double max_norm);

/// Decoded manifest: images kept in memory, latex tokenized once.
struct Dataset {
  Manifest manifest;
  std::vector<cv::Mat> images;
  std::vector<TokenSequence> tokens;

  std::size_t size() const { return images.size(); }
};

/// Throws Error{UnreadableImage} or Error{VocabularyMismatch} (unknown
/// tokens under `vocab`).
Dataset load_dataset(const std::filesystem::path& manifest_path, const Vocabulary& vocab);

struct Batch {
  ImageBatch images;
  TokenBatch inputs;             // bos + tokens, padded
  std::vector<TokenId> targets;  // tokens + eos, padded
  nn::Matrix target_counts;      // [batch, count_width]
  std::vector<std::size_t> indices;
};

struct AugmentContext {
  const AugmentConfig* config;
  std::uint64_t seed;
  std::uint64_t epoch;
};

/// Pads to the longest sequence, builds shifted targets and ground-truth
/// counts, and augments images only when `augment` is given.
Batch collate(const Dataset& data, std::span<const std::size_t> indices, const ModelConfig& model,
              const Vocabulary& vocab, const std::optional<AugmentContext>& augment, int workers = 1);

struct StepMetrics {
  int step = 0;
  double lr = 0.0;
  double lm_loss = 0.0;
  double len_loss = 0.0;
  double total_loss = 0.0;
  double wall_time = 0.0;
};

struct ValidationMetrics {
  int step = 0;
  double lm_loss = 0.0;
  double len_loss = 0.0;
  double total_loss = 0.0;
  int samples = 0;
};

/// A model restored from a checkpoint directory for inference.
struct LoadedModel {
  std::unique_ptr<Model> model;
  Vocabulary vocab;
  int step = 0;
};

/// Throws Error{CorruptCheckpoint}.
LoadedModel load_model(const std::filesystem::path& checkpoint_dir);

class Trainer {
 public:
  /// Loads manifests and builds or restores the model. When `resume` is
  /// given, parameters, optimizer moments and the step counter come from
  /// that checkpoint; the model config and vocabulary must match
  /// (Error{CorruptCheckpoint} otherwise).
  explicit Trainer(TrainConfig cfg, std::optional<std::filesystem::path> resume = std::nullopt);

  const TrainConfig& config() const noexcept { return cfg_; }
  Model& model() noexcept { return *model_; }
  const Vocabulary& vocabulary() const noexcept { return vocab_; }
  int step() const noexcept { return step_; }
  std::size_t batches_per_epoch() const noexcept { return batches_per_epoch_; }

  /// Sample indices of the batch used at `step`.
  std::vector<std::size_t> batch_indices(int step);

  /// One optimizer update. Throws Error{NonFiniteLoss}.
  StepMetrics train_step();
  /// Losses over the validation manifest, never augmented.
  ValidationMetrics validate();

  void save_checkpoint(const std::filesystem::path& dir) const;

  /// Runs to total_iterations with periodic checkpoints, validation and
  /// logging; returns the final checkpoint directory.
  std::filesystem::path run();

  std::filesystem::path metrics_log() const { return std::filesystem::path(cfg_.output_dir) / "metrics.jsonl"; }

 private:
  void prepare_log(bool resumed);
  void append_log(const StepMetrics& m) const;

  TrainConfig cfg_;
  Vocabulary vocab_;
  Dataset train_;
  std::optional<Dataset> val_;
  std::unique_ptr<Model> model_;
  std::unique_ptr<AdamW> optimizer_;
  int step_ = 0;
  std::size_t batches_per_epoch_ = 0;
  std::int64_t cached_epoch_ = -1;
  std::vector<std::vector<std::size_t>> epoch_batches_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace mathrec
