// SPDX-License-Identifier: Apache-2.0
#include "mathrec/cli.hpp"

#include <opencv2/imgcodecs.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mathrec/data_builder.hpp"
#include "mathrec/errors.hpp"
#include "mathrec/evaluate.hpp"
#include "mathrec/latex_norm.hpp"
#include "mathrec/render.hpp"
#include "mathrec/synthetic.hpp"
#include "mathrec/train.hpp"

namespace mathrec::cli {

namespace fs = std::filesystem;

std::unique_ptr<CLI::App> make_app(Options& o) {
  auto app = std::make_unique<CLI::App>("Formula image to LaTeX recognition pipeline", "mathrec");
  app->require_subcommand(1);
  app->add_option("--log-level", o.log_level, "Log verbosity: trace, debug, info, warn, error, off")
      ->capture_default_str();

  auto* b = app->add_subcommand("build-data", "Normalize, dedup, render and balance a LaTeX corpus into a manifest");
  b->add_option("--corpus", o.build.corpus, "Corpus file: one formula per line, optionally SUBSET<TAB>latex")
      ->required();
  b->add_option("--out", o.build.out, "Output directory for images/, vocab.txt and manifest.jsonl")->required();
  b->add_option("--fonts", o.build.fonts, "Comma-separated font names")->delimiter(',')->capture_default_str();
  b->add_option("--dpis", o.build.dpis, "Comma-separated render resolutions")->delimiter(',')->capture_default_str();
  b->add_option("--buckets", o.build.buckets, "Comma-separated token-length bucket boundaries")
      ->delimiter(',')
      ->capture_default_str();
  b->add_option("--per-bucket", o.build.per_bucket, "Records kept per length bucket (0 keeps all)")
      ->capture_default_str();
  b->add_option("--seed", o.build.seed, "Seed for font/dpi draws and balancing")->capture_default_str();
  b->add_option("--vocab", o.build.vocab, "Reuse this vocabulary; formulas with unknown tokens are dropped");
  b->add_option("--renderer", o.build.renderer,
                "Renderer command template with {latex_file} {out_png} {dpi} {font} (default: bundled stub)");
  b->add_option("--workers", o.build.workers, "Parallel render jobs")->capture_default_str();
  b->add_option("--min-frequency", o.build.min_frequency, "Minimum token frequency for the vocabulary")
      ->capture_default_str();

  auto* t = app->add_subcommand("train", "Train a model from a JSON config");
  t->add_option("--config", o.train.config, "Training config file (JSON)")->required();
  t->add_option("--resume", o.train.resume, "Checkpoint directory to continue from");
  t->add_option("--set", o.train.overrides, "Override a config field, e.g. --set model.feature_dim=128")
      ->allow_extra_args(false);

  auto* e = app->add_subcommand("eval", "Decode a manifest and write per-subset metrics");
  e->add_option("--manifest", o.eval.manifest, "Manifest to evaluate")->required();
  e->add_option("--checkpoint", o.eval.checkpoint, "Checkpoint directory")->required();
  e->add_option("--beam", o.eval.beam, "Beam width (1 = greedy)")->capture_default_str();
  e->add_option("--out", o.eval.out, "Directory for report.json, report.txt and predictions.jsonl")->required();
  e->add_option("--max-len", o.eval.max_len, "Maximum generated tokens (0 = model limit)")->capture_default_str();
  e->add_option("--workers", o.eval.workers, "Parallel decoding jobs")->capture_default_str();

  auto* p = app->add_subcommand("predict", "Recognize one image and print LaTeX");
  p->add_option("--image", o.predict.image, "Input image")->required();
  p->add_option("--checkpoint", o.predict.checkpoint, "Checkpoint directory")->required();
  p->add_option("--beam", o.predict.beam, "Beam width (1 = greedy)")->capture_default_str();
  p->add_option("--max-len", o.predict.max_len, "Maximum generated tokens (0 = model limit)")->capture_default_str();

  auto* s = app->add_subcommand("synth-corpus", "Write a random synthetic formula corpus");
  s->add_option("--count", o.synth.count, "Number of distinct formulas")->capture_default_str();
  s->add_option("--out", o.synth.out, "Corpus file to write")->required();
  s->add_option("--seed", o.synth.seed, "Generator seed")->capture_default_str();
  s->add_option("--min-tokens", o.synth.min_tokens, "Minimum normalized token length")->capture_default_str();
  s->add_option("--max-tokens", o.synth.max_tokens, "Maximum normalized token length")->capture_default_str();
  s->add_option("--subset", o.synth.subset, "Prefix every line with this subset tag (SPE, CPE, SCE, HWE)");
  return app;
}

namespace {

fs::path self_dir() {
  std::error_code ec;
  const fs::path exe = fs::read_symlink("/proc/self/exe", ec);
  return ec ? fs::current_path() : exe.parent_path();
}

std::string resolve_renderer(std::string tmpl) {
  if (tmpl.empty()) tmpl = kDefaultRendererTemplate;
  const std::string stub = "mathrec-stub-render";
  if (tmpl.rfind(stub + " ", 0) == 0) {
    const fs::path sibling = self_dir() / stub;
    if (fs::exists(sibling)) tmpl = sibling.string() + tmpl.substr(stub.size());
  }
  return tmpl;
}

fs::path scratch_dir(const fs::path& fallback) {
  if (const char* env = std::getenv("MATHREC_CACHE_DIR"); env != nullptr && *env != '\0') {
    return fs::path(env) / ("render-" + std::to_string(::getpid()));
  }
  return fallback;
}

std::string printable(const std::string& latex) {
  try {
    return normalize(latex).text;
  } catch (const Error&) {
    return latex;
  }
}

int cmd_build(const Options& o) {
  BuildConfig cfg;
  cfg.fonts = o.build.fonts;
  cfg.dpis = o.build.dpis;
  cfg.buckets.boundaries = o.build.buckets;
  cfg.per_bucket = o.build.per_bucket;
  cfg.seed = o.build.seed;
  cfg.workers = o.build.workers;
  cfg.min_frequency = o.build.min_frequency;
  if (!o.build.vocab.empty()) cfg.vocabulary = o.build.vocab;
  const fs::path scratch = scratch_dir(fs::path(o.build.out) / ".render-scratch");
  CommandRenderer renderer(resolve_renderer(o.build.renderer), scratch);
  renderer.check_available();
  BuildStats stats;
  const Manifest m = build_manifest(o.build.corpus, o.build.out, cfg, renderer, &stats);
  std::error_code ec;
  fs::remove_all(scratch, ec);
  std::cout << "manifest: " << (fs::path(o.build.out) / "manifest.jsonl").string() << " (" << m.records.size()
            << " records)\n";
  return 0;
}

int cmd_train(const Options& o) {
  TrainConfig cfg = load_train_config(o.train.config, o.train.overrides);
  std::optional<fs::path> resume;
  if (!o.train.resume.empty()) resume = o.train.resume;
  Trainer trainer(std::move(cfg), resume);
  const fs::path final_dir = trainer.run();
  std::cout << "checkpoint: " << final_dir.string() << " (step " << trainer.step() << ")\n";
  return 0;
}

int cmd_eval(const Options& o) {
  LoadedModel loaded = load_model(o.eval.checkpoint);
  const Manifest manifest = load_manifest(o.eval.manifest);
  DecodeConfig decode;
  decode.beam = o.eval.beam;
  decode.max_len = o.eval.max_len;
  decode.workers = o.eval.workers;
  const std::string id = fs::path(o.eval.checkpoint).lexically_normal().string() + "@step" + std::to_string(loaded.step);
  const EvalResult result = evaluate(manifest, *loaded.model, loaded.vocab, decode, id);
  write_eval_outputs(result, o.eval.out);
  std::cout << format_report(result.report);
  return 0;
}

int cmd_predict(const Options& o) {
  LoadedModel loaded = load_model(o.predict.checkpoint);
  const cv::Mat img = cv::imread(o.predict.image, cv::IMREAD_COLOR);
  if (img.empty()) throw Error(ErrorKind::UnreadableImage, "cannot read image " + o.predict.image);
  const int max_len = o.predict.max_len > 0 ? o.predict.max_len : loaded.model->config().max_sequence_length - 1;
  const GenerationResult g = loaded.model->generate(img, max_len, o.predict.beam);
  std::cout << printable(detokenize(g.tokens, loaded.vocab).text) << '\n';
  if (g.truncated) spdlog::warn("output truncated at {} tokens", max_len);
  return 0;
}

int cmd_synth(const Options& o) {
  SynthOptions so;
  so.min_tokens = o.synth.min_tokens;
  so.max_tokens = o.synth.max_tokens;
  std::string prefix;
  if (!o.synth.subset.empty()) prefix = std::string(to_string(parse_subset(o.synth.subset))) + "\t";
  const auto formulas = synthesize_formulas(o.synth.count, o.synth.seed, so);
  std::ofstream out(o.synth.out, std::ios::trunc);
  if (!out) throw Error(ErrorKind::ConfigError, "cannot write " + o.synth.out);
  for (const auto& f : formulas) out << prefix << f << '\n';
  std::cout << "wrote " << formulas.size() << " formulas to " << o.synth.out << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  Options o;
  auto app = make_app(o);
  try {
    app->parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app->exit(e);
    return code == 0 ? 0 : exit_code(ErrorKind::ConfigError);
  }
  try {
    auto logger = spdlog::get("mathrec");
    if (!logger) logger = spdlog::stderr_color_st("mathrec");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::from_str(o.log_level));
    if (app->got_subcommand("build-data")) return cmd_build(o);
    if (app->got_subcommand("train")) return cmd_train(o);
    if (app->got_subcommand("eval")) return cmd_eval(o);
    if (app->got_subcommand("predict")) return cmd_predict(o);
    if (app->got_subcommand("synth-corpus")) return cmd_synth(o);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << '\n';
    return 10;
  }
  return 10;
}

}  // namespace mathrec::cli
