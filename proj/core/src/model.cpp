// SPDX-License-Identifier: Apache-2.0
#include "mathrec/model.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mathrec/errors.hpp"
#include "mathrec/json_util.hpp"

namespace mathrec {

using nn::Matrix;
using nn::Tensor;

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw Error(ErrorKind::ConfigError, "model." + field + ": " + msg);
  };
  if (feature_dim <= 0) fail("feature_dim", "must be positive");
  if (encoder.depths.empty()) fail("encoder.depths", "needs at least one stage");
  if (encoder.heads.size() != encoder.depths.size()) fail("encoder.heads", "needs one entry per stage");
  const int reduction = encoder.patch_size << (stages() - 1);
  if (encoder.patch_size <= 0) fail("encoder.patch_size", "must be positive");
  if (feature_dim % (1 << (stages() - 1)) != 0) fail("feature_dim", "must be divisible by 2^(stages-1)");
  for (int s = 0; s < stages(); ++s) {
    if (encoder.depths[s] < 1) fail("encoder.depths", "every stage needs at least one block");
    if (encoder.heads[s] < 1 || stage_dim(s) % encoder.heads[s] != 0) {
      fail("encoder.heads", "stage " + std::to_string(s) + " width " + std::to_string(stage_dim(s)) +
                                " not divisible by " + std::to_string(encoder.heads[s]) + " heads");
    }
  }
  if (encoder.canvas_height <= 0 || encoder.canvas_height % reduction != 0) {
    fail("encoder.canvas_height", "must be a positive multiple of " + std::to_string(reduction));
  }
  if (encoder.canvas_width <= 0 || encoder.canvas_width % reduction != 0) {
    fail("encoder.canvas_width", "must be a positive multiple of " + std::to_string(reduction));
  }
  if (encoder.window_size < 1) fail("encoder.window_size", "must be >= 1");
  if (encoder.mlp_ratio < 1) fail("encoder.mlp_ratio", "must be >= 1");
  if (decoder.layers < 0) fail("decoder.layers", "must be >= 0");
  if (decoder.heads < 1 || feature_dim % decoder.heads != 0) fail("decoder.heads", "must divide feature_dim");
  if (decoder.ffn_mult < 1) fail("decoder.ffn_mult", "must be >= 1");
  if (vocab_size <= Vocabulary::kNumSpecials) fail("vocab_size", "must exceed the 4 special tokens");
  if (max_sequence_length < 2) fail("max_sequence_length", "must be >= 2");
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {
      {"feature_dim", cfg.feature_dim},
      {"encoder",
       {{"patch_size", cfg.encoder.patch_size},
        {"depths", cfg.encoder.depths},
        {"heads", cfg.encoder.heads},
        {"window_size", cfg.encoder.window_size},
        {"canvas_height", cfg.encoder.canvas_height},
        {"canvas_width", cfg.encoder.canvas_width},
        {"mlp_ratio", cfg.encoder.mlp_ratio}}},
      {"decoder",
       {{"layers", cfg.decoder.layers}, {"heads", cfg.decoder.heads}, {"ffn_mult", cfg.decoder.ffn_mult}}},
      {"vocab_size", cfg.vocab_size},
      {"max_sequence_length", cfg.max_sequence_length},
      {"lam_enabled", cfg.lam_enabled},
      {"length_target", cfg.length_target == LengthTarget::Counts ? "counts" : "scalar"},
      {"init_seed", cfg.init_seed},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path) {
  ModelConfig cfg;
  JsonFields f(j, path);
  f.get("feature_dim", cfg.feature_dim);
  if (const auto* enc = f.child("encoder")) {
    JsonFields e(*enc, f.field("encoder"));
    e.get("patch_size", cfg.encoder.patch_size);
    e.get("depths", cfg.encoder.depths);
    e.get("heads", cfg.encoder.heads);
    e.get("window_size", cfg.encoder.window_size);
    e.get("canvas_height", cfg.encoder.canvas_height);
    e.get("canvas_width", cfg.encoder.canvas_width);
    e.get("mlp_ratio", cfg.encoder.mlp_ratio);
    e.finish();
  }
  if (const auto* dec = f.child("decoder")) {
    JsonFields d(*dec, f.field("decoder"));
    d.get("layers", cfg.decoder.layers);
    d.get("heads", cfg.decoder.heads);
    d.get("ffn_mult", cfg.decoder.ffn_mult);
    d.finish();
  }
  f.get("vocab_size", cfg.vocab_size);
  f.get("max_sequence_length", cfg.max_sequence_length);
  f.get("lam_enabled", cfg.lam_enabled);
  std::string target = "counts";
  f.get("length_target", target);
  if (target == "counts") {
    cfg.length_target = LengthTarget::Counts;
  } else if (target == "scalar") {
    cfg.length_target = LengthTarget::Scalar;
  } else {
    f.fail("length_target", "expected \"counts\" or \"scalar\", got \"" + target + "\"");
  }
  f.get("init_seed", cfg.init_seed);
  f.finish();
  return cfg;
}

// ---------------------------------------------------------------------------
// Image preprocessing

std::vector<float> preprocess_image(const cv::Mat& image, int canvas_height, int canvas_width) {
  if (image.empty()) throw Error(ErrorKind::ShapeError, "empty image");
  if (image.depth() != CV_8U) throw Error(ErrorKind::ShapeError, "expected an 8-bit image");
  cv::Mat bgr;
  switch (image.channels()) {
    case 1: cv::cvtColor(image, bgr, cv::COLOR_GRAY2BGR); break;
    case 3: bgr = image; break;
    case 4: cv::cvtColor(image, bgr, cv::COLOR_BGRA2BGR); break;
    default: throw Error(ErrorKind::ShapeError, "unsupported channel count " + std::to_string(image.channels()));
  }
  const double s = std::min({1.0, static_cast<double>(canvas_height) / bgr.rows,
                             static_cast<double>(canvas_width) / bgr.cols});
  cv::Mat fitted = bgr;
  if (s < 1.0) {
    const int w = std::clamp(static_cast<int>(std::lround(bgr.cols * s)), 1, canvas_width);
    const int h = std::clamp(static_cast<int>(std::lround(bgr.rows * s)), 1, canvas_height);
    cv::resize(bgr, fitted, cv::Size(w, h), 0, 0, cv::INTER_AREA);
  }
  std::vector<float> out(static_cast<std::size_t>(3) * canvas_height * canvas_width, 1.0f);
  const std::size_t plane = static_cast<std::size_t>(canvas_height) * canvas_width;
  for (int y = 0; y < fitted.rows; ++y) {
    const auto* row = fitted.ptr<cv::Vec3b>(y);
    for (int x = 0; x < fitted.cols; ++x) {
      for (int c = 0; c < 3; ++c) {
        out[c * plane + static_cast<std::size_t>(y) * canvas_width + x] = row[x][c] / 127.5f - 1.0f;
      }
    }
  }
  return out;
}

ImageBatch make_image_batch(const std::vector<cv::Mat>& images, int canvas_height, int canvas_width) {
  ImageBatch batch;
  batch.batch = static_cast<int>(images.size());
  batch.height = canvas_height;
  batch.width = canvas_width;
  batch.pixels.reserve(images.size() * 3 * canvas_height * canvas_width);
  for (const auto& img : images) {
    auto p = preprocess_image(img, canvas_height, canvas_width);
    batch.pixels.insert(batch.pixels.end(), p.begin(), p.end());
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Window layout

std::shared_ptr<const nn::AttentionLayout> make_window_layout(int grid_h, int grid_w, int window, int shift) {
  auto layout = std::make_shared<nn::AttentionLayout>();
  const int n = grid_h * grid_w;
  layout->q_rows_per_unit = n;
  layout->k_rows_per_unit = n;
  layout->q_offsets.push_back(0);
  layout->bias_offsets.push_back(0);
  const int span = 2 * window - 1;
  std::vector<int> ys, xs;
  for (int ty = -shift; ty < grid_h; ty += window) {
    const int y0 = std::max(ty, 0);
    const int y1 = std::min(ty + window, grid_h);
    if (y1 <= y0) continue;
    for (int tx = -shift; tx < grid_w; tx += window) {
      const int x0 = std::max(tx, 0);
      const int x1 = std::min(tx + window, grid_w);
      if (x1 <= x0) continue;
      ys.clear();
      xs.clear();
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          layout->q_index.push_back(y * grid_w + x);
          ys.push_back(y);
          xs.push_back(x);
        }
      }
      const int count = static_cast<int>(ys.size());
      for (int i = 0; i < count; ++i) {
        for (int j = 0; j < count; ++j) {
          layout->bias_index.push_back((ys[i] - ys[j] + window - 1) * span + (xs[i] - xs[j] + window - 1));
        }
      }
      layout->q_offsets.push_back(static_cast<int>(layout->q_index.size()));
      layout->bias_offsets.push_back(static_cast<int>(layout->bias_index.size()));
    }
  }
  layout->bias_offsets.pop_back();
  layout->k_offsets = layout->q_offsets;
  layout->k_index = layout->q_index;
  return layout;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(derive_seed(cfg_.init_seed, 0x6d6f64656cULL));
  const int p = cfg_.encoder.patch_size;
  const int c0 = cfg_.stage_dim(0);
  const int d = cfg_.feature_dim;

  patch_embed_ = nn::Linear(params_, "encoder.patch_embed", 3 * p * p, c0, rng);
  patch_norm_ = nn::LayerNorm(params_, "encoder.patch_norm", c0);
  abs_pos_ = params_.normal("encoder.abs_pos", cfg_.stage_grid_height(0) * cfg_.stage_grid_width(0), c0, 0.02f, rng);

  const int window = cfg_.encoder.window_size;
  for (int s = 0; s < cfg_.stages(); ++s) {
    Stage stage;
    stage.grid_h = cfg_.stage_grid_height(s);
    stage.grid_w = cfg_.stage_grid_width(s);
    const int dim = cfg_.stage_dim(s);
    const int heads = cfg_.encoder.heads[s];
    const bool can_shift = std::max(stage.grid_h, stage.grid_w) > window;
    auto plain = make_window_layout(stage.grid_h, stage.grid_w, window, 0);
    auto shifted = can_shift ? make_window_layout(stage.grid_h, stage.grid_w, window, window / 2) : plain;
    for (int b = 0; b < cfg_.encoder.depths[s]; ++b) {
      const std::string name = "encoder.stage" + std::to_string(s) + ".block" + std::to_string(b);
      SwinBlock blk;
      blk.norm1 = nn::LayerNorm(params_, name + ".norm1", dim);
      blk.attn = nn::MultiHeadAttention(params_, name + ".attn", dim, heads, rng);
      blk.rel_bias = params_.normal(name + ".rel_bias", (2 * window - 1) * (2 * window - 1), heads, 0.02f, rng);
      blk.norm2 = nn::LayerNorm(params_, name + ".norm2", dim);
      blk.mlp = nn::FeedForward(params_, name + ".mlp", dim, dim * cfg_.encoder.mlp_ratio, rng);
      blk.layout = (b % 2 == 1) ? shifted : plain;
      stage.blocks.push_back(std::move(blk));
    }
    if (s + 1 < cfg_.stages()) {
      const std::string name = "encoder.stage" + std::to_string(s) + ".merge";
      for (int i = 0; i < stage.grid_h / 2; ++i) {
        for (int j = 0; j < stage.grid_w / 2; ++j) {
          const int w = stage.grid_w;
          stage.merge_index.insert(stage.merge_index.end(), {(2 * i) * w + 2 * j, (2 * i + 1) * w + 2 * j,
                                                             (2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j + 1});
        }
      }
      stage.merge_norm = nn::LayerNorm(params_, name + ".norm", 4 * dim);
      stage.merge_proj = nn::Linear(params_, name + ".proj", 4 * dim, 2 * dim, rng, false);
    }
    stages_.push_back(std::move(stage));
  }
  encoder_norm_ = nn::LayerNorm(params_, "encoder.norm", d);

  const int t = cfg_.encoder_tokens();
  lam_norm_ = nn::LayerNorm(params_, "lam.norm", d);
  lam_attn_ = nn::MultiHeadAttention(params_, "lam.attn", d, cfg_.decoder.heads, rng);
  count_head_ = nn::Linear(params_, "lam.count_head", d, cfg_.count_width(), rng);
  lam_mlp1_ = nn::Linear(params_, "lam.mlp1", cfg_.count_width(), d, rng);
  lam_mlp2_ = nn::Linear(params_, "lam.mlp2", d, d, rng);
  lam_layout_ = nn::AttentionLayout::dense(t, t, false);

  token_embedding_ = params_.normal("decoder.token_embedding", cfg_.vocab_size, d, 0.02f, rng);
  position_embedding_ = params_.normal("decoder.position_embedding", cfg_.max_sequence_length, d, 0.02f, rng);
  for (int l = 0; l < cfg_.decoder.layers; ++l) {
    const std::string name = "decoder.layer" + std::to_string(l);
    DecoderLayer layer;
    layer.norm_self = nn::LayerNorm(params_, name + ".norm_self", d);
    layer.self_attn = nn::MultiHeadAttention(params_, name + ".self_attn", d, cfg_.decoder.heads, rng);
    layer.norm_cross = nn::LayerNorm(params_, name + ".norm_cross", d);
    layer.cross_attn = nn::MultiHeadAttention(params_, name + ".cross_attn", d, cfg_.decoder.heads, rng);
    layer.norm_ffn = nn::LayerNorm(params_, name + ".norm_ffn", d);
    layer.ffn = nn::FeedForward(params_, name + ".ffn", d, d * cfg_.decoder.ffn_mult, rng);
    decoder_layers_.push_back(std::move(layer));
  }
  decoder_norm_ = nn::LayerNorm(params_, "decoder.norm", d);
  output_proj_ = nn::Linear(params_, "decoder.output", d, cfg_.vocab_size, rng);
}

EncoderFeatures Model::encode(const ImageBatch& images) const {
  const auto& enc = cfg_.encoder;
  if (images.channels != 3) {
    throw Error(ErrorKind::ShapeError, "encoder expects 3 channels, got " + std::to_string(images.channels));
  }
  if (images.height != enc.canvas_height || images.width != enc.canvas_width) {
    throw Error(ErrorKind::ShapeError, "image block " + std::to_string(images.height) + "x" +
                                           std::to_string(images.width) + " does not match canvas " +
                                           std::to_string(enc.canvas_height) + "x" + std::to_string(enc.canvas_width));
  }
  const std::size_t expected = static_cast<std::size_t>(images.batch) * 3 * images.height * images.width;
  if (images.batch < 1 || images.pixels.size() != expected) {
    throw Error(ErrorKind::ShapeError, "image block holds " + std::to_string(images.pixels.size()) +
                                           " values, expected " + std::to_string(expected));
  }
  const int p = enc.patch_size;
  const int gh = cfg_.stage_grid_height(0);
  const int gw = cfg_.stage_grid_width(0);
  const int per_image = gh * gw;
  Matrix patches(images.batch * per_image, 3 * p * p);
  const std::size_t plane = static_cast<std::size_t>(images.height) * images.width;
  for (int b = 0; b < images.batch; ++b) {
    const float* img = images.pixels.data() + static_cast<std::size_t>(b) * 3 * plane;
    for (int py = 0; py < gh; ++py) {
      for (int px = 0; px < gw; ++px) {
        float* row = patches.row(b * per_image + py * gw + px).data();
        int k = 0;
        for (int c = 0; c < 3; ++c)
          for (int dy = 0; dy < p; ++dy)
            for (int dx = 0; dx < p; ++dx)
              row[k++] = img[c * plane + static_cast<std::size_t>(py * p + dy) * images.width + px * p + dx];
      }
    }
  }

  Tensor x = patch_norm_(patch_embed_(Tensor(std::move(patches))));
  x = nn::add_periodic(x, abs_pos_, per_image);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const Stage& stage = stages_[s];
    for (const SwinBlock& blk : stage.blocks) {
      Tensor h = blk.norm1(x);
      x = nn::add(x, blk.attn(h, h, blk.layout, blk.rel_bias));
      x = nn::add(x, blk.mlp(blk.norm2(x)));
    }
    if (!stage.merge_index.empty()) {
      const int tokens = stage.grid_h * stage.grid_w;
      std::vector<int> index;
      index.reserve(stage.merge_index.size() * images.batch);
      for (int b = 0; b < images.batch; ++b)
        for (int i : stage.merge_index) index.push_back(b * tokens + i);
      Tensor merged = nn::gather_rows(x, index);
      merged = nn::reshape(merged, merged.rows() / 4, merged.cols() * 4);
      x = stage.merge_proj(stage.merge_norm(merged));
    }
  }
  EncoderFeatures out;
  out.z = encoder_norm_(x);
  out.batch = images.batch;
  out.tokens = cfg_.encoder_tokens();
  out.dim = cfg_.feature_dim;
  return out;
}

LamOutput Model::lam_forward(const EncoderFeatures& features) const {
  if (!cfg_.lam_enabled) {
    throw Error(ErrorKind::DisabledModule, "length-aware module is disabled; use the zero length embedding");
  }
  Tensor attended = features.z;
  if (!lam_identity_) {
    Tensor h = lam_norm_(features.z);
    attended = nn::add(features.z, lam_attn_(h, h, lam_layout_));
  }
  LamOutput out;
  out.pooled = nn::mean_groups(attended, features.batch);
  out.counts = nn::softplus(count_head_(out.pooled));
  // The embedding path reads the count head through frozen copies so the
  // head itself is trained by the length loss alone, while the decoder's
  // gradient still reaches the encoder.
  Tensor counts_for_embedding = nn::softplus(
      nn::linear(out.pooled, nn::stop_gradient(count_head_.weight()), nn::stop_gradient(count_head_.bias())));
  out.embedding = lam_mlp2_(nn::gelu(lam_mlp1_(counts_for_embedding)));
  return out;
}

Tensor Model::zero_length_embedding(int batch) const { return Tensor::zeros(batch, cfg_.feature_dim); }

Tensor Model::length_embedding(const EncoderFeatures& features) const {
  return cfg_.lam_enabled ? lam_forward(features).embedding : zero_length_embedding(features.batch);
}

DecoderOutput Model::decoder_forward(const EncoderFeatures& features, const TokenBatch& inputs,
                                     const Tensor& length_embedding) const {
  if (inputs.length > cfg_.max_sequence_length) {
    throw Error(ErrorKind::SequenceTooLong, "decoder input length " + std::to_string(inputs.length) +
                                                " exceeds max_sequence_length " +
                                                std::to_string(cfg_.max_sequence_length));
  }
  if (inputs.batch != features.batch || inputs.length < 1 ||
      inputs.ids.size() != static_cast<std::size_t>(inputs.batch) * inputs.length) {
    throw Error(ErrorKind::ShapeError, "decoder inputs do not match the feature batch");
  }
  if (length_embedding.rows() != inputs.batch || length_embedding.cols() != cfg_.feature_dim) {
    throw Error(ErrorKind::ShapeError, "length embedding must be batch x feature_dim");
  }
  for (int b = 0; b < inputs.batch; ++b) {
    if (inputs.ids[static_cast<std::size_t>(b) * inputs.length] != Vocabulary::kBos) {
      throw Error(ErrorKind::ShapeError, "decoder input row " + std::to_string(b) + " does not start with bos");
    }
  }
  for (TokenId id : inputs.ids) {
    if (id < 0 || id >= cfg_.vocab_size) throw Error(ErrorKind::InvalidTokenId, "decoder input id out of range");
  }

  Tensor x = nn::embedding(token_embedding_, inputs.ids);
  x = nn::add_periodic(x, position_embedding_, inputs.length);
  x = nn::add_per_group(x, length_embedding);
  auto self_layout = nn::AttentionLayout::dense(inputs.length, inputs.length, true);
  auto cross_layout = nn::AttentionLayout::dense(inputs.length, features.tokens, false);
  for (const DecoderLayer& layer : decoder_layers_) {
    Tensor h = layer.norm_self(x);
    x = nn::add(x, layer.self_attn(h, h, self_layout));
    x = nn::add(x, layer.cross_attn(layer.norm_cross(x), features.z, cross_layout));
    x = nn::add(x, layer.ffn(layer.norm_ffn(x)));
  }
  DecoderOutput out;
  out.logits = output_proj_(decoder_norm_(x));
  out.batch = inputs.batch;
  out.length = inputs.length;
  out.classes = cfg_.vocab_size;
  return out;
}

LossTerms Model::compute_losses(const ImageBatch& images, const TokenBatch& inputs,
                                const std::vector<TokenId>& targets, const Matrix& target_counts,
                                const LossWeights& weights) const {
  EncoderFeatures features = encode(images);
  LossTerms terms;
  Tensor embedding;
  if (cfg_.lam_enabled) {
    LamOutput lam = lam_forward(features);
    embedding = lam.embedding;
    terms.len = nn::smooth_l1_loss(lam.counts, target_counts);
  } else {
    embedding = zero_length_embedding(features.batch);
    terms.len = Tensor::zeros(1, 1);
  }
  DecoderOutput out = decoder_forward(features, inputs, embedding);
  terms.lm = nn::lm_loss(out.logits, targets);
  terms.total = nn::weighted_sum(terms.lm, weights.lm, terms.len, weights.len);
  return terms;
}

// ---------------------------------------------------------------------------
// Decoding

namespace {

bool selectable(TokenId id) { return id != Vocabulary::kPad && id != Vocabulary::kBos && id != Vocabulary::kUnk; }

}  // namespace

std::vector<std::vector<float>> Model::next_token_log_probs(const EncoderFeatures& features,
                                                            const Tensor& length_embedding,
                                                            const std::vector<TokenSequence>& prefixes) const {
  const int n = static_cast<int>(prefixes.size());
  std::size_t longest = 0;
  for (const auto& p : prefixes) longest = std::max(longest, p.size());
  TokenBatch batch;
  batch.batch = n;
  batch.length = static_cast<int>(longest) + 1;
  batch.ids.assign(static_cast<std::size_t>(n) * batch.length, Vocabulary::kPad);
  for (int i = 0; i < n; ++i) {
    batch.ids[static_cast<std::size_t>(i) * batch.length] = Vocabulary::kBos;
    std::copy(prefixes[i].begin(), prefixes[i].end(), batch.ids.begin() + static_cast<std::ptrdiff_t>(i) * batch.length + 1);
  }
  std::vector<int> z_index;
  std::vector<int> e_index(static_cast<std::size_t>(n), 0);
  z_index.reserve(static_cast<std::size_t>(n) * features.tokens);
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < features.tokens; ++t) z_index.push_back(t);
  EncoderFeatures repeated = features;
  repeated.batch = n;
  repeated.z = n == 1 ? features.z : nn::gather_rows(features.z, z_index);
  Tensor emb = n == 1 ? length_embedding : nn::gather_rows(length_embedding, e_index);

  DecoderOutput out = decoder_forward(repeated, batch, emb);
  std::vector<std::vector<float>> result(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int row = i * batch.length + static_cast<int>(prefixes[i].size());
    const auto logits = out.logits.value().row(row);
    const float mx = logits.maxCoeff();
    double sum = 0.0;
    for (int c = 0; c < out.classes; ++c) sum += std::exp(static_cast<double>(logits(c) - mx));
    const float log_z = mx + static_cast<float>(std::log(sum));
    auto& lp = result[static_cast<std::size_t>(i)];
    lp.resize(static_cast<std::size_t>(out.classes));
    for (int c = 0; c < out.classes; ++c) lp[static_cast<std::size_t>(c)] = logits(c) - log_z;
  }
  return result;
}

GenerationResult Model::greedy(const EncoderFeatures& features, const Tensor& length_embedding, int max_len) const {
  GenerationResult res;
  double sum = 0.0;
  int scored = 0;
  res.truncated = true;
  while (static_cast<int>(res.tokens.size()) < max_len) {
    const auto lp = next_token_log_probs(features, length_embedding, {res.tokens})[0];
    TokenId best = -1;
    for (TokenId c = 0; c < static_cast<TokenId>(lp.size()); ++c) {
      if (selectable(c) && (best < 0 || lp[c] > lp[best])) best = c;
    }
    sum += lp[best];
    ++scored;
    if (best == Vocabulary::kEos) {
      res.truncated = false;
      break;
    }
    res.tokens.push_back(best);
  }
  res.score = scored > 0 ? sum / scored : 0.0;
  return res;
}

GenerationResult Model::beam_search(const EncoderFeatures& features, const Tensor& length_embedding, int max_len,
                                    int beam) const {
  struct Hyp {
    TokenSequence tokens;
    double logp = 0.0;
  };
  struct Candidate {
    double logp;
    int parent;
    TokenId token;
  };
  std::vector<Hyp> alive{Hyp{}};
  std::vector<GenerationResult> pool;
  for (int step = 0; step < max_len && !alive.empty(); ++step) {
    std::vector<TokenSequence> prefixes;
    for (const auto& h : alive) prefixes.push_back(h.tokens);
    const auto lps = next_token_log_probs(features, length_embedding, prefixes);
    std::vector<Candidate> cands;
    for (int i = 0; i < static_cast<int>(alive.size()); ++i) {
      const auto& lp = lps[static_cast<std::size_t>(i)];
      for (TokenId c = 0; c < static_cast<TokenId>(lp.size()); ++c) {
        if (selectable(c)) cands.push_back({alive[i].logp + lp[c], i, c});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.logp > b.logp; });
    std::vector<Hyp> next;
    int finished_now = 0;
    for (const auto& cand : cands) {
      if (static_cast<int>(next.size()) + finished_now >= beam) break;
      const Hyp& parent = alive[static_cast<std::size_t>(cand.parent)];
      if (cand.token == Vocabulary::kEos) {
        GenerationResult r;
        r.tokens = parent.tokens;
        r.score = cand.logp / static_cast<double>(parent.tokens.size() + 1);
        r.truncated = false;
        pool.push_back(std::move(r));
        ++finished_now;
      } else {
        Hyp h{parent.tokens, cand.logp};
        h.tokens.push_back(cand.token);
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
    if (static_cast<int>(pool.size()) >= beam) break;
  }
  for (const auto& h : alive) {
    GenerationResult r;
    r.tokens = h.tokens;
    r.score = h.tokens.empty() ? 0.0 : h.logp / static_cast<double>(h.tokens.size());
    r.truncated = true;
    pool.push_back(std::move(r));
  }
  pool.push_back(greedy(features, length_embedding, max_len));
  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i) {
    if (pool[i].score > pool[best].score) best = i;
  }
  return pool[best];
}

GenerationResult Model::generate(const ImageBatch& single, int max_len, int beam) const {
  if (single.batch != 1) throw Error(ErrorKind::ShapeError, "generate expects a single image");
  nn::NoGradGuard no_grad;
  max_len = std::clamp(max_len, 0, cfg_.max_sequence_length - 1);
  EncoderFeatures features = encode(single);
  Tensor embedding = length_embedding(features);
  if (max_len == 0) {
    GenerationResult r;
    r.truncated = true;
    return r;
  }
  return beam <= 1 ? greedy(features, embedding, max_len) : beam_search(features, embedding, max_len, beam);
}

GenerationResult Model::generate(const cv::Mat& image, int max_len, int beam) const {
  return generate(make_image_batch({image}, cfg_.encoder.canvas_height, cfg_.encoder.canvas_width), max_len, beam);
}

}  // namespace mathrec
