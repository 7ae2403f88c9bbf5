// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the unit and acceptance tests.
#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mathrec/data_builder.hpp"
#include "mathrec/model.hpp"
#include "mathrec/rng.hpp"
#include "mathrec/synthetic.hpp"
#include "mathrec/train.hpp"

namespace mathrec::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mathrec-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Small but structurally complete model: 2 stages, 32x128 canvas.
inline ModelConfig tiny_model_config(int vocab_size, bool lam = true) {
  ModelConfig cfg;
  cfg.feature_dim = 32;
  cfg.encoder.patch_size = 4;
  cfg.encoder.depths = {2, 2};
  cfg.encoder.heads = {2, 4};
  cfg.encoder.window_size = 4;
  cfg.encoder.canvas_height = 32;
  cfg.encoder.canvas_width = 128;
  cfg.encoder.mlp_ratio = 2;
  cfg.decoder.layers = 2;
  cfg.decoder.heads = 4;
  cfg.decoder.ffn_mult = 2;
  cfg.vocab_size = vocab_size;
  cfg.max_sequence_length = 24;
  cfg.lam_enabled = lam;
  cfg.init_seed = 7;
  return cfg;
}

/// Random pixels in [-1, 1] for a batch shaped to the canvas.
inline ImageBatch random_images(const ModelConfig& cfg, int batch, std::uint64_t seed) {
  ImageBatch b;
  b.batch = batch;
  b.height = cfg.encoder.canvas_height;
  b.width = cfg.encoder.canvas_width;
  b.pixels.resize(static_cast<std::size_t>(batch) * 3 * b.height * b.width);
  Rng rng(seed);
  for (float& v : b.pixels) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  return b;
}

/// Random teacher-forcing rows that start with bos.
inline TokenBatch random_tokens(int batch, int length, int vocab_size, std::uint64_t seed) {
  TokenBatch t;
  t.batch = batch;
  t.length = length;
  t.ids.resize(static_cast<std::size_t>(batch) * length);
  Rng rng(seed);
  for (int b = 0; b < batch; ++b) {
    t.ids[static_cast<std::size_t>(b) * length] = Vocabulary::kBos;
    for (int i = 1; i < length; ++i) {
      t.ids[static_cast<std::size_t>(b) * length + i] =
          static_cast<TokenId>(uniform_int(rng, Vocabulary::kNumSpecials, vocab_size - 1));
    }
  }
  return t;
}

/// Renders `count` synthetic formulas with the stub renderer into
/// `dir` and returns the manifest path.
inline std::filesystem::path build_fixture(const std::filesystem::path& dir, std::size_t count, std::uint64_t seed,
                                           int max_tokens = 12) {
  std::filesystem::create_directories(dir);
  std::string corpus;
  for (const auto& f : synthesize_formulas(count, seed, SynthOptions{1, max_tokens, 2})) corpus += f + "\n";
  write_text(dir / "corpus.txt", corpus);
  BuildConfig cfg;
  cfg.dpis = {80};
  cfg.seed = seed;
  StubRenderer renderer;
  build_manifest(dir / "corpus.txt", dir / "data", cfg, renderer);
  return dir / "data" / "manifest.jsonl";
}

/// A few-step run of the tiny model over `manifest`.
inline TrainConfig tiny_train_config(const std::filesystem::path& manifest, const std::filesystem::path& out,
                                     int iterations = 4) {
  TrainConfig cfg;
  cfg.total_iterations = iterations;
  cfg.batch_size = 4;
  cfg.init_lr = 1e-3;
  cfg.warmup_lr = 1e-4;
  cfg.min_lr = 1e-6;
  cfg.augment = AugmentConfig::none();
  cfg.train_manifest = manifest.string();
  cfg.output_dir = out.string();
  cfg.checkpoint_interval = 0;
  cfg.model = tiny_model_config(0);
  return cfg;
}

}  // namespace mathrec::testing
