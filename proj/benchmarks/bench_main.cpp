// SPDX-License-Identifier: Apache-2.0
//
// Hot paths of the pipeline: windowed attention, a full training step of
// the desk model, stub rendering, normalization and the augment pipeline.
#include <benchmark/benchmark.h>

#include "mathrec/augment.hpp"
#include "mathrec/latex_norm.hpp"
#include "mathrec/losses.hpp"
#include "mathrec/metrics.hpp"
#include "mathrec/model.hpp"
#include "mathrec/render.hpp"
#include "mathrec/synthetic.hpp"
#include "mathrec/tensor.hpp"

#include <sstream>

using namespace mathrec;

namespace {

ModelConfig desk(int dim, int vocab) {
  ModelConfig m;
  m.feature_dim = dim;
  m.encoder.depths = {2, 2, 2, 2};
  m.encoder.heads = {1, 2, 4, 8};
  m.encoder.window_size = 7;
  m.encoder.canvas_height = 64;
  m.encoder.canvas_width = 512;
  m.vocab_size = vocab;
  return m;
}

ImageBatch noise_batch(const ModelConfig& cfg, int batch) {
  ImageBatch b;
  b.batch = batch;
  b.height = cfg.encoder.canvas_height;
  b.width = cfg.encoder.canvas_width;
  b.pixels.resize(static_cast<std::size_t>(batch) * 3 * b.height * b.width);
  Rng rng(1);
  for (float& v : b.pixels) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  return b;
}

}  // namespace

static void BM_DenseAttention(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(2);
  nn::Matrix q(2 * n, 64), k(2 * n, 64), v(2 * n, 64);
  for (nn::Matrix* m : {&q, &k, &v})
    for (int i = 0; i < m->size(); ++i) m->data()[i] = static_cast<float>(normal(rng));
  const auto layout = nn::AttentionLayout::dense(n, n, true);
  nn::NoGradGuard g;
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::attention(nn::Tensor(q), nn::Tensor(k), nn::Tensor(v), layout, 4).value().data());
  }
}
BENCHMARK(BM_DenseAttention)->Arg(32)->Arg(128);

static void BM_Encode(benchmark::State& state) {
  const auto cfg = desk(static_cast<int>(state.range(0)), 200);
  const Model model(cfg);
  const auto images = noise_batch(cfg, 8);
  nn::NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(model.encode(images).z.value().data());
}
BENCHMARK(BM_Encode)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  const int vocab = 200, len = 24, batch = 8;
  const auto cfg = desk(static_cast<int>(state.range(0)), vocab);
  Model model(cfg);
  const auto images = noise_batch(cfg, batch);
  TokenBatch in;
  in.batch = batch;
  in.length = len;
  in.ids.assign(static_cast<std::size_t>(batch * len), 10);
  for (int b = 0; b < batch; ++b) in.ids[static_cast<std::size_t>(b * len)] = Vocabulary::kBos;
  std::vector<TokenId> targets(static_cast<std::size_t>(batch * len), 10);
  const nn::Matrix counts = nn::Matrix::Constant(batch, vocab, 0.1f);
  for (auto _ : state) {
    model.parameters().zero_grad();
    auto terms = model.compute_losses(images, in, targets, counts, LossWeights{1.0, 0.5});
    terms.total.backward();
    benchmark::DoNotOptimize(terms.total.item());
  }
}
BENCHMARK(BM_TrainStep)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_StubRender(benchmark::State& state) {
  const auto latex = normalize("\\frac{a+b}{\\sqrt{x^2+y^2}} = \\sum_{i=1}^{n} \\alpha_i");
  for (auto _ : state) benchmark::DoNotOptimize(stub_render(latex, "default", 160).data);
}
BENCHMARK(BM_StubRender);

static void BM_Normalize(benchmark::State& state) {
  const auto corpus = synthesize_formulas(256, 3, {});
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(normalize(corpus[i++ % corpus.size()]).text.size());
}
BENCHMARK(BM_Normalize);

static void BM_AugmentPipeline(benchmark::State& state) {
  const cv::Mat img = stub_render(normalize("x^2 + y^2 = z^2"), "default", 160);
  AugmentConfig cfg;
  for (auto& k : cfg.kinds) k.probability = 0.5;
  Rng rng(4);
  for (auto _ : state) benchmark::DoNotOptimize(augment_pipeline(img, cfg, rng).data);
}
BENCHMARK(BM_AugmentPipeline);

static void BM_CorpusBleu(benchmark::State& state) {
  const auto corpus = synthesize_formulas(200, 5, {});
  std::vector<std::vector<std::string>> toks;
  for (const auto& f : corpus) {
    std::vector<std::string> t;
    std::istringstream in(normalize(f).text);
    for (std::string w; in >> w;) t.push_back(w);
    toks.push_back(std::move(t));
  }
  for (auto _ : state) {
    BleuStats s;
    for (std::size_t i = 0; i < toks.size(); ++i) s += bleu_stats(std::span<const std::string>(toks[i]), std::span<const std::string>(toks[(i + 1) % toks.size()]));
    benchmark::DoNotOptimize(bleu_score(s));
  }
}
BENCHMARK(BM_CorpusBleu);

BENCHMARK_MAIN();
