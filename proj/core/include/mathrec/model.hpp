// SPDX-License-Identifier: Apache-2.0
//
// Encoder-decoder recognizer: a hierarchical windowed-attention encoder,
// an autoregressive decoder with cross-attention, and the length-aware
// module that predicts per-symbol counts from the encoder features and
// feeds a length embedding into every decoder position.
#pragma once

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include <cstdint>
#include <memory>
#include <vector>

#include "mathrec/latex_norm.hpp"
#include "mathrec/losses.hpp"
#include "mathrec/nn.hpp"

namespace mathrec {

struct EncoderConfig {
  int patch_size = 4;
  std::vector<int> depths{2, 2, 2, 2};
  std::vector<int> heads{1, 2, 4, 8};
  int window_size = 7;
  int canvas_height = 192;
  int canvas_width = 672;
  int mlp_ratio = 4;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct DecoderConfig {
  int layers = 4;
  int heads = 8;
  int ffn_mult = 4;

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

enum class LengthTarget { Counts, Scalar };

struct ModelConfig {
  int feature_dim = 256;
  EncoderConfig encoder;
  DecoderConfig decoder;
  int vocab_size = 0;
  int max_sequence_length = 1024;
  bool lam_enabled = true;
  LengthTarget length_target = LengthTarget::Counts;
  std::uint64_t init_seed = 0;

  /// Throws Error{ConfigError} naming the offending field.
  void validate() const;

  int stages() const { return static_cast<int>(encoder.depths.size()); }
  int stage_dim(int stage) const { return feature_dim >> (stages() - 1 - stage); }
  int stage_grid_height(int stage) const { return encoder.canvas_height / encoder.patch_size >> stage; }
  int stage_grid_width(int stage) const { return encoder.canvas_width / encoder.patch_size >> stage; }
  /// Number of encoder output positions T.
  int encoder_tokens() const { return stage_grid_height(stages() - 1) * stage_grid_width(stages() - 1); }
  /// Width of the count prediction (C for counts, 1 for a scalar length).
  int count_width() const { return length_target == LengthTarget::Counts ? vocab_size : 1; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Strict: unknown fields and wrong types raise Error{ConfigError}.
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model");

/// Planar float images [batch, 3, height, width], already normalized.
struct ImageBatch {
  int batch = 0;
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;
};

/// Fits `image` (1 or 3 channel, 8-bit) into the canvas: downscale with
/// aspect ratio preserved if it does not fit, pad white to the right and
/// bottom, and map [0, 255] to [-1, 1].
std::vector<float> preprocess_image(const cv::Mat& image, int canvas_height, int canvas_width);
ImageBatch make_image_batch(const std::vector<cv::Mat>& images, int canvas_height, int canvas_width);

/// Teacher-forcing inputs, row-major [batch, length].
struct TokenBatch {
  int batch = 0;
  int length = 0;
  std::vector<TokenId> ids;
};

struct EncoderFeatures {
  nn::Tensor z;  // [batch * tokens, dim]
  int batch = 0;
  int tokens = 0;
  int dim = 0;
};

struct LamOutput {
  nn::Tensor pooled;     // global counting feature [batch, dim]
  nn::Tensor counts;     // non-negative count prediction [batch, count_width]
  nn::Tensor embedding;  // length embedding [batch, dim]
};

struct DecoderOutput {
  nn::Tensor logits;  // [batch * length, vocab]
  int batch = 0;
  int length = 0;
  int classes = 0;
};

struct LossTerms {
  nn::Tensor total;
  nn::Tensor lm;
  nn::Tensor len;  // zero (no gradient) when the length module is off
};

struct GenerationResult {
  TokenSequence tokens;  // without bos / eos
  double score = 0.0;    // mean log-probability per scored token
  bool truncated = false;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const noexcept { return cfg_; }
  nn::ParameterSet& parameters() noexcept { return params_; }
  const nn::ParameterSet& parameters() const noexcept { return params_; }

  /// Throws Error{ShapeError} unless the batch matches the canvas.
  EncoderFeatures encode(const ImageBatch& images) const;

  /// Throws Error{DisabledModule} when the length module is off.
  LamOutput lam_forward(const EncoderFeatures& features) const;
  nn::Tensor zero_length_embedding(int batch) const;
  /// LAM embedding when enabled, zeros otherwise.
  nn::Tensor length_embedding(const EncoderFeatures& features) const;

  /// Throws Error{SequenceTooLong} past max_sequence_length and
  /// Error{ShapeError} when a row does not start with bos.
  DecoderOutput decoder_forward(const EncoderFeatures& features, const TokenBatch& inputs,
                                const nn::Tensor& length_embedding) const;

  /// Full teacher-forced objective for one batch. `targets` is [batch*length]
  /// with padding, `target_counts` is [batch, count_width].
  LossTerms compute_losses(const ImageBatch& images, const TokenBatch& inputs, const std::vector<TokenId>& targets,
                           const nn::Matrix& target_counts, const LossWeights& weights) const;

  /// Greedy when beam <= 1, otherwise length-normalized beam search whose
  /// candidate pool also contains the greedy hypothesis.
  GenerationResult generate(const cv::Mat& image, int max_len, int beam = 1) const;
  GenerationResult generate(const ImageBatch& single, int max_len, int beam = 1) const;

  /// Test hook: replace the length module's self-attention by identity.
  void set_lam_attention_identity(bool on) noexcept { lam_identity_ = on; }

 private:
  struct SwinBlock {
    nn::LayerNorm norm1;
    nn::MultiHeadAttention attn;
    nn::Tensor rel_bias;
    nn::LayerNorm norm2;
    nn::FeedForward mlp;
    std::shared_ptr<const nn::AttentionLayout> layout;
  };
  struct Stage {
    std::vector<SwinBlock> blocks;
    int grid_h = 0;
    int grid_w = 0;
    // Patch merging into the next stage (absent on the last stage).
    std::vector<int> merge_index;
    nn::LayerNorm merge_norm;
    nn::Linear merge_proj;
  };
  struct DecoderLayer {
    nn::LayerNorm norm_self;
    nn::MultiHeadAttention self_attn;
    nn::LayerNorm norm_cross;
    nn::MultiHeadAttention cross_attn;
    nn::LayerNorm norm_ffn;
    nn::FeedForward ffn;
  };

  GenerationResult greedy(const EncoderFeatures& features, const nn::Tensor& length_embedding, int max_len) const;
  GenerationResult beam_search(const EncoderFeatures& features, const nn::Tensor& length_embedding, int max_len,
                               int beam) const;
  std::vector<std::vector<float>> next_token_log_probs(const EncoderFeatures& features,
                                                      const nn::Tensor& length_embedding,
                                                      const std::vector<TokenSequence>& prefixes) const;

  ModelConfig cfg_;
  nn::ParameterSet params_;

  nn::Linear patch_embed_;
  nn::LayerNorm patch_norm_;
  nn::Tensor abs_pos_;
  std::vector<Stage> stages_;
  nn::LayerNorm encoder_norm_;

  nn::LayerNorm lam_norm_;
  nn::MultiHeadAttention lam_attn_;
  nn::Linear count_head_;
  nn::Linear lam_mlp1_;
  nn::Linear lam_mlp2_;
  std::shared_ptr<const nn::AttentionLayout> lam_layout_;
  bool lam_identity_ = false;

  nn::Tensor token_embedding_;
  nn::Tensor position_embedding_;
  std::vector<DecoderLayer> decoder_layers_;
  nn::LayerNorm decoder_norm_;
  nn::Linear output_proj_;
};

/// Window partition of a grid_h x grid_w token grid into window x window
/// tiles offset by -shift (clipped at the border), with relative-position
/// bias indices into a (2*window-1)^2 table.
std::shared_ptr<const nn::AttentionLayout> make_window_layout(int grid_h, int grid_w, int window, int shift);

}  // namespace mathrec
