// SPDX-License-Identifier: Apache-2.0
#include "mathrec/train.hpp"

#include <opencv2/imgcodecs.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include "mathrec/errors.hpp"
#include "mathrec/json_util.hpp"
#include "mathrec/rng.hpp"

namespace mathrec {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

int TrainConfig::warmup() const {
  if (warmup_iterations) return *warmup_iterations;
  return static_cast<int>(std::lround(0.02 * total_iterations));
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw Error(ErrorKind::ConfigError, field + ": " + msg);
  };
  if (total_iterations < 0) fail("total_iterations", "must be >= 0");
  if (warmup() < 0) fail("warmup_iterations", "must be >= 0");
  if (total_iterations > 0 && warmup() >= total_iterations) fail("warmup_iterations", "must be < total_iterations");
  if (!(min_lr >= 0.0)) fail("min_lr", "must be >= 0");
  if (!(min_lr <= warmup_lr && warmup_lr <= init_lr)) fail("warmup_lr", "need min_lr <= warmup_lr <= init_lr");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(loss_weights.lm >= 0.0)) fail("loss_weights.lambda1", "must be >= 0");
  if (!(loss_weights.len >= 0.0)) fail("loss_weights.lambda2", "must be >= 0");
  if (train_manifest.empty()) fail("train_manifest", "required");
  if (output_dir.empty()) fail("output_dir", "required");
  if (checkpoint_interval < 0) fail("checkpoint_interval", "must be >= 0");
  if (validation_interval < 0) fail("validation_interval", "must be >= 0");
  if (!(grad_clip >= 0.0)) fail("grad_clip", "must be >= 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) fail("optimizer.beta1", "must be in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) fail("optimizer.beta2", "must be in [0, 1)");
  if (!(optimizer.eps > 0.0)) fail("optimizer.eps", "must be > 0");
  if (workers < 1) fail("workers", "must be >= 1");
  augment.validate();
  ModelConfig probe = model;
  if (probe.vocab_size == 0) probe.vocab_size = Vocabulary::kNumSpecials + 1;
  probe.validate();
}

json to_json(const TrainConfig& cfg) {
  return {
      {"total_iterations", cfg.total_iterations},
      {"warmup_iterations", cfg.warmup_iterations ? json(*cfg.warmup_iterations) : json(nullptr)},
      {"init_lr", cfg.init_lr},
      {"min_lr", cfg.min_lr},
      {"warmup_lr", cfg.warmup_lr},
      {"weight_decay", cfg.weight_decay},
      {"batch_size", cfg.batch_size},
      {"seed", cfg.seed},
      {"loss_weights", {{"lambda1", cfg.loss_weights.lm}, {"lambda2", cfg.loss_weights.len}}},
      {"augment", to_json(cfg.augment)},
      {"train_manifest", cfg.train_manifest},
      {"val_manifest", cfg.val_manifest},
      {"output_dir", cfg.output_dir},
      {"checkpoint_interval", cfg.checkpoint_interval},
      {"validation_interval", cfg.validation_interval},
      {"grad_clip", cfg.grad_clip},
      {"optimizer", {{"beta1", cfg.optimizer.beta1}, {"beta2", cfg.optimizer.beta2}, {"eps", cfg.optimizer.eps}}},
      {"workers", cfg.workers},
      {"model", to_json(cfg.model)},
  };
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  JsonFields f(j, "");
  f.get("total_iterations", cfg.total_iterations);
  int warmup = 0;
  if (f.get("warmup_iterations", warmup)) cfg.warmup_iterations = warmup;
  f.get("init_lr", cfg.init_lr);
  f.get("min_lr", cfg.min_lr);
  f.get("warmup_lr", cfg.warmup_lr);
  f.get("weight_decay", cfg.weight_decay);
  f.get("batch_size", cfg.batch_size);
  f.get("seed", cfg.seed);
  if (const auto* lw = f.child("loss_weights")) {
    JsonFields w(*lw, "loss_weights");
    w.get("lambda1", cfg.loss_weights.lm);
    w.get("lambda2", cfg.loss_weights.len);
    w.finish();
  }
  if (const auto* a = f.child("augment")) cfg.augment = augment_config_from_json(*a, "augment");
  f.get("train_manifest", cfg.train_manifest);
  f.get("val_manifest", cfg.val_manifest);
  f.get("output_dir", cfg.output_dir);
  f.get("checkpoint_interval", cfg.checkpoint_interval);
  f.get("validation_interval", cfg.validation_interval);
  f.get("grad_clip", cfg.grad_clip);
  if (const auto* o = f.child("optimizer")) {
    JsonFields of(*o, "optimizer");
    of.get("beta1", cfg.optimizer.beta1);
    of.get("beta2", cfg.optimizer.beta2);
    of.get("eps", cfg.optimizer.eps);
    of.finish();
  }
  f.get("workers", cfg.workers);
  cfg.model.init_seed = cfg.seed;
  if (const auto* m = f.child("model")) {
    cfg.model = model_config_from_json(*m, "model");
    if (!m->contains("init_seed")) cfg.model.init_seed = cfg.seed;
  }
  f.finish();
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot read config " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorKind::ConfigError, path.string() + ": not valid JSON");
  for (const auto& o : overrides) apply_override(doc, o);
  return train_config_from_json(doc);
}

double lr_schedule(int step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_iterations) {
    throw Error(ErrorKind::StepOutOfRange, "step " + std::to_string(step) + " outside [0, " +
                                               std::to_string(cfg.total_iterations) + "]");
  }
  const int warmup = cfg.warmup();
  if (step < warmup) {
    return cfg.warmup_lr + (cfg.init_lr - cfg.warmup_lr) * static_cast<double>(step) / warmup;
  }
  const int span = cfg.total_iterations - warmup;
  if (span <= 0) return cfg.init_lr;
  const double progress = static_cast<double>(step - warmup) / span;
  return cfg.min_lr + 0.5 * (cfg.init_lr - cfg.min_lr) * (1.0 + std::cos(M_PI * progress));
}

// ---------------------------------------------------------------------------
// Optimizer

AdamW::AdamW(nn::ParameterSet& params, OptimizerConfig cfg, double weight_decay)
    : params_(&params), cfg_(cfg), weight_decay_(weight_decay) {
  for (const auto& p : params.params()) {
    moments_.add(p.name + ".m", nn::Matrix::Zero(p.tensor.rows(), p.tensor.cols()), false);
    moments_.add(p.name + ".v", nn::Matrix::Zero(p.tensor.rows(), p.tensor.cols()), false);
  }
}

void AdamW::step(double lr, int t) {
  const float b1 = static_cast<float>(cfg_.beta1);
  const float b2 = static_cast<float>(cfg_.beta2);
  const float bc1 = static_cast<float>(1.0 - std::pow(cfg_.beta1, t));
  const float bc2 = static_cast<float>(1.0 - std::pow(cfg_.beta2, t));
  const float eps = static_cast<float>(cfg_.eps);
  const float lr_f = static_cast<float>(lr);
  const float shrink = static_cast<float>(1.0 - lr * weight_decay_);
  auto& ps = params_->params();
  auto& ms = moments_.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    const nn::Matrix& g = p.tensor.grad();
    if (g.size() == 0) continue;
    auto m = ms[2 * i].tensor.mutable_value().array();
    auto v = ms[2 * i + 1].tensor.mutable_value().array();
    m = b1 * m + (1.0f - b1) * g.array();
    v = b2 * v + (1.0f - b2) * g.array().square();
    auto w = p.tensor.mutable_value().array();
    if (p.decay) w *= shrink;
    w -= lr_f * (m / bc1) / ((v / bc2).sqrt() + eps);
  }
}

void AdamW::save(const fs::path& path) const { moments_.save(path); }
void AdamW::load(const fs::path& path) { moments_.load(path); }

double clip_grad_norm(nn::ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.params()) {
    const auto& g = p.tensor.grad();
    if (g.size() != 0) sq += g.cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto& p : params.params()) {
      if (p.tensor.grad().size() != 0) p.tensor.mutable_grad() *= s;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Data

Dataset load_dataset(const fs::path& manifest_path, const Vocabulary& vocab) {
  Dataset d;
  d.manifest = load_manifest(manifest_path);
  for (const auto& r : d.manifest.records) {
    cv::Mat img = cv::imread(d.manifest.image_file(r).string(), cv::IMREAD_COLOR);
    if (img.empty()) throw Error(ErrorKind::UnreadableImage, "cannot decode " + d.manifest.image_file(r).string());
    TokenSequence toks = tokenize(r.latex, vocab);
    if (std::find(toks.begin(), toks.end(), Vocabulary::kUnk) != toks.end()) {
      throw Error(ErrorKind::VocabularyMismatch, "record '" + r.latex.text + "' has tokens outside the vocabulary");
    }
    d.images.push_back(std::move(img));
    d.tokens.push_back(std::move(toks));
  }
  return d;
}

namespace {

template <class F>
void parallel_for(std::size_t n, int workers, F&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < std::min<int>(workers, static_cast<int>(n)); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

Batch collate(const Dataset& data, std::span<const std::size_t> indices, const ModelConfig& model,
              const Vocabulary& vocab, const std::optional<AugmentContext>& augment, int workers) {
  Batch b;
  const int n = static_cast<int>(indices.size());
  b.indices.assign(indices.begin(), indices.end());
  std::size_t longest = 0;
  for (std::size_t i : indices) longest = std::max(longest, data.tokens.at(i).size());
  const int len = static_cast<int>(longest) + 1;
  b.inputs.batch = n;
  b.inputs.length = len;
  b.inputs.ids.assign(static_cast<std::size_t>(n) * len, Vocabulary::kPad);
  b.targets.assign(static_cast<std::size_t>(n) * len, Vocabulary::kPad);
  b.target_counts = nn::Matrix::Zero(n, model.count_width());
  for (int r = 0; r < n; ++r) {
    const auto& toks = data.tokens[indices[static_cast<std::size_t>(r)]];
    const std::size_t base = static_cast<std::size_t>(r) * len;
    b.inputs.ids[base] = Vocabulary::kBos;
    std::copy(toks.begin(), toks.end(), b.inputs.ids.begin() + static_cast<std::ptrdiff_t>(base) + 1);
    std::copy(toks.begin(), toks.end(), b.targets.begin() + static_cast<std::ptrdiff_t>(base));
    b.targets[base + toks.size()] = Vocabulary::kEos;
    if (model.length_target == LengthTarget::Counts) {
      const CountVector cv = symbol_counts(toks, vocab);
      for (int c = 0; c < model.count_width(); ++c) b.target_counts(r, c) = static_cast<float>(cv.counts[c]);
    } else {
      b.target_counts(r, 0) = static_cast<float>(toks.size());
    }
  }

  const int ch = model.encoder.canvas_height;
  const int cw = model.encoder.canvas_width;
  const std::size_t per_image = static_cast<std::size_t>(3) * ch * cw;
  b.images.batch = n;
  b.images.height = ch;
  b.images.width = cw;
  b.images.pixels.resize(per_image * n);
  parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t r) {
    const std::size_t idx = indices[r];
    std::vector<float> px;
    if (augment) {
      Rng rng(derive_seed(augment->seed, augment->epoch, idx));
      px = preprocess_image(augment_pipeline(data.images[idx], *augment->config, rng), ch, cw);
    } else {
      px = preprocess_image(data.images[idx], ch, cw);
    }
    std::copy(px.begin(), px.end(), b.images.pixels.begin() + static_cast<std::ptrdiff_t>(r * per_image));
  });
  return b;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::CorruptCheckpoint, "missing " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::CorruptCheckpoint, "unparseable " + path.string());
  return j;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::CorruptCheckpoint, "cannot write " + path.string());
}

ModelConfig read_model_config(const fs::path& dir) {
  try {
    ModelConfig cfg = model_config_from_json(read_json(dir / "config.json"));
    cfg.validate();
    return cfg;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::CorruptCheckpoint) throw;
    throw Error(ErrorKind::CorruptCheckpoint, "checkpoint config " + (dir / "config.json").string() + ": " + e.what());
  }
}

Vocabulary read_vocab(const fs::path& dir, const ModelConfig& cfg) {
  if (!fs::is_regular_file(dir / "vocab.txt")) throw Error(ErrorKind::CorruptCheckpoint, "missing " + (dir / "vocab.txt").string());
  Vocabulary v = Vocabulary::load(dir / "vocab.txt");
  if (v.size() != cfg.vocab_size) {
    throw Error(ErrorKind::CorruptCheckpoint, "checkpoint vocabulary has " + std::to_string(v.size()) +
                                                  " entries but the model expects " + std::to_string(cfg.vocab_size));
  }
  return v;
}

int read_step(const fs::path& dir) {
  const json state = read_json(dir / "state.json");
  if (!state.contains("step") || !state["step"].is_number_integer()) {
    throw Error(ErrorKind::CorruptCheckpoint, "state.json lacks an integer step");
  }
  return state["step"].get<int>();
}

}  // namespace

LoadedModel load_model(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::CorruptCheckpoint, "checkpoint directory " + dir.string() + " not found");
  LoadedModel out;
  const ModelConfig cfg = read_model_config(dir);
  out.vocab = read_vocab(dir, cfg);
  out.model = std::make_unique<Model>(cfg);
  out.model->parameters().load(dir / "params.bin");
  out.step = read_step(dir);
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig cfg, std::optional<fs::path> resume) : cfg_(std::move(cfg)) {
  cfg_.validate();
  start_ = std::chrono::steady_clock::now();
  const Manifest head = load_manifest(cfg_.train_manifest);
  vocab_ = Vocabulary::load(head.vocabulary_file());
  if (cfg_.model.vocab_size == 0) {
    cfg_.model.vocab_size = vocab_.size();
  } else if (cfg_.model.vocab_size != vocab_.size() && !resume) {
    throw Error(ErrorKind::ConfigError, "model.vocab_size " + std::to_string(cfg_.model.vocab_size) +
                                            " does not match the training vocabulary (" +
                                            std::to_string(vocab_.size()) + ")");
  }
  train_ = load_dataset(cfg_.train_manifest, vocab_);
  if (!cfg_.val_manifest.empty()) val_ = load_dataset(cfg_.val_manifest, vocab_);
  if (train_.size() < static_cast<std::size_t>(cfg_.batch_size)) {
    throw Error(ErrorKind::DataExhausted, "training set has " + std::to_string(train_.size()) +
                                              " samples, fewer than batch_size " + std::to_string(cfg_.batch_size));
  }
  batches_per_epoch_ = train_.size() / static_cast<std::size_t>(cfg_.batch_size);

  if (resume) {
    const ModelConfig saved = read_model_config(*resume);
    if (saved.vocab_size != vocab_.size() || !(read_vocab(*resume, saved) == vocab_)) {
      throw Error(ErrorKind::CorruptCheckpoint, "checkpoint " + resume->string() +
                                                    " was trained with a different vocabulary");
    }
    if (!(saved == cfg_.model)) {
      throw Error(ErrorKind::CorruptCheckpoint, "checkpoint " + resume->string() + " has a different model config");
    }
  }
  model_ = std::make_unique<Model>(cfg_.model);
  optimizer_ = std::make_unique<AdamW>(model_->parameters(), cfg_.optimizer, cfg_.weight_decay);
  if (resume) {
    model_->parameters().load(*resume / "params.bin");
    optimizer_->load(*resume / "optimizer.bin");
    step_ = read_step(*resume);
    if (step_ < 0 || step_ > cfg_.total_iterations) {
      throw Error(ErrorKind::CorruptCheckpoint, "checkpoint step " + std::to_string(step_) + " outside the schedule");
    }
    spdlog::info("resumed from {} at step {}", resume->string(), step_);
  }
  prepare_log(resume.has_value());
}

std::vector<std::size_t> Trainer::batch_indices(int step) {
  const auto epoch = static_cast<std::int64_t>(step) / static_cast<std::int64_t>(batches_per_epoch_);
  if (epoch != cached_epoch_) {
    const std::size_t n = train_.size();
    const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
    Rng rng(derive_seed(cfg_.seed, 0x65706f6368ULL, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
      std::swap(perm[i - 1], perm[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
    }
    perm.resize(batches_per_epoch_ * bs);
    // Length bucketing: sort within windows of several batches so each
    // batch holds similar lengths while the epoch stays shuffled.
    const std::size_t window = bs * 8;
    for (std::size_t s = 0; s < perm.size(); s += window) {
      auto first = perm.begin() + static_cast<std::ptrdiff_t>(s);
      auto last = perm.begin() + static_cast<std::ptrdiff_t>(std::min(perm.size(), s + window));
      std::stable_sort(first, last, [&](std::size_t a, std::size_t b) {
        return train_.tokens[a].size() < train_.tokens[b].size();
      });
    }
    epoch_batches_.assign(batches_per_epoch_, {});
    for (std::size_t b = 0; b < batches_per_epoch_; ++b) {
      epoch_batches_[b].assign(perm.begin() + static_cast<std::ptrdiff_t>(b * bs),
                               perm.begin() + static_cast<std::ptrdiff_t>((b + 1) * bs));
    }
    for (std::size_t i = epoch_batches_.size(); i > 1; --i) {
      std::swap(epoch_batches_[i - 1],
                epoch_batches_[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
    }
    cached_epoch_ = epoch;
  }
  return epoch_batches_[static_cast<std::size_t>(step) % batches_per_epoch_];
}

StepMetrics Trainer::train_step() {
  if (step_ >= cfg_.total_iterations) {
    throw Error(ErrorKind::StepOutOfRange, "training already reached total_iterations");
  }
  StepMetrics m;
  m.step = step_;
  m.lr = lr_schedule(step_, cfg_);
  const auto indices = batch_indices(step_);
  const auto epoch = static_cast<std::uint64_t>(step_) / batches_per_epoch_;
  const bool any_augment = std::any_of(cfg_.augment.kinds.begin(), cfg_.augment.kinds.end(),
                                       [](const KindSettings& k) { return k.enabled && k.probability > 0.0; });
  std::optional<AugmentContext> aug;
  if (any_augment) aug = AugmentContext{&cfg_.augment, derive_seed(cfg_.seed, cfg_.augment.seed), epoch};
  const Batch batch = collate(train_, indices, cfg_.model, vocab_, aug, cfg_.workers);

  model_->parameters().zero_grad();
  LossTerms terms =
      model_->compute_losses(batch.images, batch.inputs, batch.targets, batch.target_counts, cfg_.loss_weights);
  m.lm_loss = terms.lm.item();
  m.len_loss = terms.len.item();
  m.total_loss = total_loss(m.lm_loss, m.len_loss, cfg_.loss_weights);
  terms.total.backward();
  const double norm = clip_grad_norm(model_->parameters(), cfg_.grad_clip);
  if (!std::isfinite(norm)) {
    throw Error(ErrorKind::NonFiniteLoss, "non-finite gradient norm at step " + std::to_string(step_));
  }
  optimizer_->step(m.lr, step_ + 1);
  ++step_;
  m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return m;
}

ValidationMetrics Trainer::validate() {
  ValidationMetrics out;
  out.step = step_;
  if (!val_ || val_->size() == 0) return out;
  nn::NoGradGuard no_grad;
  double lm = 0.0, len = 0.0;
  const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t s = 0; s < val_->size(); s += bs) {
    std::vector<std::size_t> idx;
    for (std::size_t i = s; i < std::min(val_->size(), s + bs); ++i) idx.push_back(i);
    const Batch batch = collate(*val_, idx, cfg_.model, vocab_, std::nullopt, cfg_.workers);
    LossTerms terms =
        model_->compute_losses(batch.images, batch.inputs, batch.targets, batch.target_counts, cfg_.loss_weights);
    lm += terms.lm.item() * static_cast<double>(idx.size());
    len += terms.len.item() * static_cast<double>(idx.size());
  }
  out.samples = static_cast<int>(val_->size());
  out.lm_loss = lm / out.samples;
  out.len_loss = len / out.samples;
  out.total_loss = total_loss(out.lm_loss, out.len_loss, cfg_.loss_weights);
  return out;
}

void Trainer::save_checkpoint(const fs::path& dir) const {
  fs::path tmp = dir;
  tmp += ".tmp";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp);
  write_json(tmp / "config.json", to_json(cfg_.model));
  write_json(tmp / "train_config.json", to_json(cfg_));
  write_json(tmp / "state.json", {{"step", step_}, {"seed", cfg_.seed}});
  vocab_.save(tmp / "vocab.txt");
  model_->parameters().save(tmp / "params.bin");
  optimizer_->save(tmp / "optimizer.bin");
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir);
}

void Trainer::prepare_log(bool resumed) {
  fs::create_directories(cfg_.output_dir);
  for (const fs::path& path : {metrics_log(), fs::path(cfg_.output_dir) / "validation.jsonl"}) {
    std::vector<std::string> kept;
    if (resumed) {
      std::ifstream in(path);
      for (std::string line; std::getline(in, line);) {
        const json j = json::parse(line, nullptr, false);
        if (j.is_object() && j.contains("step") && j["step"].get<int>() < step_) kept.push_back(line);
      }
    }
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : kept) out << l << '\n';
  }
}

void Trainer::append_log(const StepMetrics& m) const {
  std::ofstream out(metrics_log(), std::ios::app);
  out << json{{"step", m.step},           {"lr", m.lr},
              {"lm_loss", m.lm_loss},     {"len_loss", m.len_loss},
              {"total_loss", m.total_loss}, {"wall_time", m.wall_time}}
             .dump()
      << '\n';
}

fs::path Trainer::run() {
  const fs::path out(cfg_.output_dir);
  auto run_validation = [&] {
    if (!val_) return;
    const ValidationMetrics v = validate();
    std::ofstream log(out / "validation.jsonl", std::ios::app);
    log << json{{"step", v.step}, {"lm_loss", v.lm_loss}, {"len_loss", v.len_loss}, {"total_loss", v.total_loss},
                {"samples", v.samples}}
               .dump()
        << '\n';
    spdlog::info("step {} validation lm {:.4f} len {:.4f}", v.step, v.lm_loss, v.len_loss);
  };
  int last_validated = -1;
  while (step_ < cfg_.total_iterations) {
    const StepMetrics m = train_step();
    append_log(m);
    if (step_ % 50 == 0 || step_ == cfg_.total_iterations) {
      spdlog::info("step {}/{} lr {:.3g} lm {:.4f} len {:.4f} total {:.4f}", step_, cfg_.total_iterations, m.lr,
                   m.lm_loss, m.len_loss, m.total_loss);
    }
    if (cfg_.checkpoint_interval > 0 && step_ % cfg_.checkpoint_interval == 0 && step_ < cfg_.total_iterations) {
      char name[32];
      std::snprintf(name, sizeof(name), "step-%07d", step_);
      save_checkpoint(out / "checkpoints" / name);
    }
    if (cfg_.validation_interval > 0 && step_ % cfg_.validation_interval == 0) {
      run_validation();
      last_validated = step_;
    }
  }
  const fs::path final_dir = out / "final";
  save_checkpoint(final_dir);
  if (cfg_.validation_interval > 0 && last_validated != step_) run_validation();
  return final_dir;
}

}  // namespace mathrec
