// SPDX-License-Identifier: Apache-2.0
#include "mathrec/evaluate.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <opencv2/imgcodecs.hpp>
#include <sstream>
#include <thread>

#include "mathrec/errors.hpp"
#include "mathrec/metrics.hpp"

namespace mathrec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

std::string renormalize(const std::string& s) {
  try {
    return normalize(s).text;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::UnbalancedBraces) throw;
    std::string out;
    for (const auto& t : split(s)) out += (out.empty() ? "" : " ") + t;
    return out;
  }
}

SubsetMetrics summarize(const std::vector<const PredictionRecord*>& group) {
  SubsetMetrics m;
  m.n = static_cast<int>(group.size());
  if (group.empty()) return m;
  BleuStats stats;
  double ed = 0.0;
  int hits[3] = {0, 0, 0};
  for (const auto* r : group) {
    const auto pred = split(r->prediction);
    const auto ref = split(r->reference);
    stats += bleu_stats(std::span<const std::string>(pred), std::span<const std::string>(ref));
    ed += r->edit_distance;
    for (int k = 0; k < 3; ++k) hits[k] += r->token_distance <= static_cast<std::size_t>(k) ? 1 : 0;
  }
  const double n = static_cast<double>(group.size());
  m.bleu = bleu_score(stats);
  m.edit_distance = ed / n;
  m.exprate = hits[0] / n;
  m.exprate_le1 = hits[1] / n;
  m.exprate_le2 = hits[2] / n;
  return m;
}

json metrics_json(const SubsetMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"n", m.n},
          {"bleu", opt(m.bleu)},
          {"edit_distance", opt(m.edit_distance)},
          {"exprate", opt(m.exprate)},
          {"exprate_le1", opt(m.exprate_le1)},
          {"exprate_le2", opt(m.exprate_le2)}};
}

}  // namespace

PredictionRecord score_prediction(const std::string& image_path, Subset subset, const std::string& reference,
                                  const std::string& prediction) {
  PredictionRecord r;
  r.image_path = image_path;
  r.subset = subset;
  r.reference = renormalize(reference);
  r.prediction = renormalize(prediction);
  r.edit_distance = edit_distance(r.prediction, r.reference);
  r.token_distance = levenshtein(split(r.prediction), split(r.reference));
  return r;
}

MetricsReport aggregate(const std::vector<PredictionRecord>& records, std::string model_id) {
  MetricsReport report;
  report.model_id = std::move(model_id);
  std::vector<const PredictionRecord*> all;
  for (Subset s : kAllSubsets) {
    std::vector<const PredictionRecord*> group;
    for (const auto& r : records) {
      if (r.subset == s) group.push_back(&r);
    }
    report.subsets[static_cast<std::size_t>(s)] = summarize(group);
  }
  for (const auto& r : records) all.push_back(&r);
  report.overall = summarize(all);
  return report;
}

EvalResult evaluate(const Manifest& manifest, const Model& model, const Vocabulary& vocab, const DecodeConfig& decode,
                    std::string model_id) {
  const Vocabulary manifest_vocab = Vocabulary::load(manifest.vocabulary_file());
  if (!(manifest_vocab == vocab)) {
    throw Error(ErrorKind::VocabularyMismatch, "manifest vocabulary " + manifest.vocabulary_file().string() +
                                                   " differs from the checkpoint vocabulary");
  }
  const int max_len = decode.max_len > 0 ? decode.max_len : model.config().max_sequence_length - 1;
  EvalResult result;
  result.predictions.resize(manifest.records.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto work = [&] {
    for (std::size_t i = next++; i < manifest.records.size(); i = next++) {
      try {
        const auto& rec = manifest.records[i];
        cv::Mat img = cv::imread(manifest.image_file(rec).string(), cv::IMREAD_COLOR);
        if (img.empty()) throw Error(ErrorKind::UnreadableImage, "cannot decode " + manifest.image_file(rec).string());
        const GenerationResult g = model.generate(img, max_len, decode.beam);
        auto& out = result.predictions[i];
        out = score_prediction(rec.image_path, rec.subset, rec.latex.text, detokenize(g.tokens, vocab).text);
        out.truncated = g.truncated;
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  if (decode.workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < decode.workers; ++w) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);
  result.report = aggregate(result.predictions, std::move(model_id));
  return result;
}

json to_json(const MetricsReport& report) {
  json subsets = json::object();
  for (Subset s : kAllSubsets) subsets[std::string(to_string(s))] = metrics_json(report[s]);
  return {{"model_id", report.model_id}, {"subsets", subsets}, {"overall", metrics_json(report.overall)}};
}

std::string format_report(const MetricsReport& report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-8s %6s %8s %8s %8s %8s %8s\n", "subset", "n", "BLEU", "EditDis", "ExpRate",
                "<=1", "<=2");
  out += line;
  auto row = [&](const std::string& name, const SubsetMetrics& m) {
    auto cell = [](const std::optional<double>& v) {
      char buf[16];
      if (v) {
        std::snprintf(buf, sizeof(buf), "%8.4f", *v);
      } else {
        std::snprintf(buf, sizeof(buf), "%8s", "-");
      }
      return std::string(buf);
    };
    std::snprintf(line, sizeof(line), "%-8s %6d ", name.c_str(), m.n);
    out += line + cell(m.bleu) + " " + cell(m.edit_distance) + " " + cell(m.exprate) + " " + cell(m.exprate_le1) +
           " " + cell(m.exprate_le2) + "\n";
  };
  for (Subset s : kAllSubsets) row(std::string(to_string(s)), report[s]);
  row("overall", report.overall);
  return out;
}

void write_eval_outputs(const EvalResult& result, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir / "report.json", std::ios::trunc);
    f << to_json(result.report).dump(2) << '\n';
  }
  {
    std::ofstream f(out_dir / "report.txt", std::ios::trunc);
    f << "model: " << result.report.model_id << '\n' << format_report(result.report);
  }
  std::ofstream f(out_dir / "predictions.jsonl", std::ios::trunc);
  for (const auto& p : result.predictions) {
    f << json{{"image_path", p.image_path},
              {"subset", std::string(to_string(p.subset))},
              {"reference", p.reference},
              {"prediction", p.prediction},
              {"edit_distance", p.edit_distance},
              {"token_distance", p.token_distance},
              {"truncated", p.truncated}}
             .dump()
      << '\n';
  }
  if (!f) throw Error(ErrorKind::ConfigError, "cannot write evaluation outputs to " + out_dir.string());
}

}  // namespace mathrec
