#include "linefl/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "linefl/error.hpp"
#include "linefl/sbfl.hpp"
#include "linefl/states.hpp"

namespace linefl::pipeline {

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ReferenceError("cannot open " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& extension = {}) {
  if (!fs::is_directory(dir)) throw ReferenceError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (!extension.empty() && e.path().extension() != extension) continue;
    out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string fold_name(int f) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fold_%02d", f);
  return buf;
}

}  // namespace

corpus::DatasetManifest ingest(const fs::path& src_dir, const fs::path& diffs_dir, const fs::path& out_manifest,
                               std::optional<int> folds, std::uint64_t seed) {
  std::vector<corpus::SourceDocument> docs;
  for (const auto& p : sorted_files(src_dir)) {
    docs.push_back(corpus::load_document(fs::relative(p, src_dir).generic_string(), p));
  }
  std::map<std::string, std::string> diffs;
  if (fs::exists(diffs_dir)) {
    for (const auto& p : sorted_files(diffs_dir, ".diff")) {
      std::string id = fs::relative(p, diffs_dir).generic_string();
      id.resize(id.size() - 5);
      diffs.emplace(id, read_text(p));
    }
  }
  auto manifest = corpus::build_manifest(docs, diffs);
  if (folds) manifest = corpus::assign_folds(manifest, *folds, seed);
  corpus::write_manifest(manifest, out_manifest);
  return manifest;
}

void encode(const fs::path& manifest_path, const fs::path& out_dir, std::uint32_t dim, std::uint64_t seed) {
  const auto manifest = corpus::read_manifest(manifest_path);
  fs::create_directories(out_dir);
  for (const auto& rec : manifest.records) {
    const auto doc = corpus::load_document(rec.id, rec.path);
    states::write_states(states::encode_causal_mock(doc, dim, seed), states::state_path(out_dir, rec.id));
  }
}

training::TrainHistory train(const fs::path& manifest_path, const fs::path& states_dir, const fs::path& out_ckpt,
                             const TrainOptions& opts) {
  auto manifest = corpus::read_manifest(manifest_path);
  if (!manifest.has_folds()) {
    const int k = std::min<int>(opts.default_folds, static_cast<int>(manifest.records.size()));
    manifest = corpus::assign_folds(manifest, k, opts.train.seed);
  }
  if (opts.val_fold < 0 || opts.val_fold >= manifest.fold_count()) {
    throw ConfigError("validation fold " + std::to_string(opts.val_fold) + " does not exist");
  }
  std::vector<training::LabeledDoc> train_set, val_set;
  for (const auto& rec : manifest.records) {
    auto doc = training::load_labeled(rec, states_dir);
    (*rec.fold == opts.val_fold ? val_set : train_set).push_back(std::move(doc));
  }
  if (train_set.empty() || val_set.empty()) throw ConfigError("training or validation split is empty");

  auto acfg = opts.adapter;
  acfg.input_dim = train_set.front().states->dim();
  auto result = training::train(adapter::init<float>(acfg, opts.train.seed), train_set, val_set, opts.train);
  adapter::write_checkpoint(result.best, out_ckpt);
  if (opts.history) training::write_history(result.history, *opts.history);
  return result.history;
}

training::CrossvalResult crossval(const fs::path& manifest_path, const fs::path& states_dir, const fs::path& out_dir,
                                  const CrossvalOptions& opts) {
  if (opts.k < 2) throw ConfigError("cross-validation needs k >= 2, got " + std::to_string(opts.k));
  auto manifest = corpus::read_manifest(manifest_path);
  if (!manifest.has_folds()) {
    manifest = corpus::assign_folds(manifest, opts.k, opts.config.train.seed);
  } else if (manifest.fold_count() != opts.k) {
    throw ConfigError(manifest_path.string() + " is split into " + std::to_string(manifest.fold_count()) +
                      " folds but k is " + std::to_string(opts.k));
  }
  auto result = training::crossval(manifest, states_dir, opts.config);

  fs::create_directories(out_dir);
  for (const auto& fr : result.folds) {
    const auto base = out_dir / fold_name(fr.fold);
    eval::write_report(fr.report, base.string() + ".report.json");
    training::write_history(fr.history, base.string() + ".history.jsonl");
    eval::write_scores(fr.scores, base.string() + ".scores.tsv");
    adapter::write_checkpoint(fr.checkpoint, base.string() + ".ckpt");
  }
  eval::write_report(result.aggregate, out_dir / "aggregate.report.json");
  eval::write_roc_csv(result.aggregate.roc_points, out_dir / "aggregate.roc.csv");
  eval::write_roc_svg(result.aggregate.roc_points, result.aggregate.auc, out_dir / "aggregate.roc.svg");
  return result;
}

void predict(const fs::path& ckpt_path, const fs::path& states_dir, const fs::path& out_scores, std::uint32_t overlap) {
  const auto ckpt = adapter::read_checkpoint(ckpt_path);
  std::vector<eval::LineScores> scores;
  for (const auto& p : sorted_files(states_dir, ".lnst")) {
    const auto sm = states::read_states(p);
    if (sm.dim() != ckpt.model.config().input_dim) {
      throw ConfigError(p.string() + ": state dimension " + std::to_string(sm.dim()) + " does not match checkpoint " +
                        std::to_string(ckpt.model.config().input_dim));
    }
    scores.push_back(training::predict(ckpt.model, sm, overlap));
  }
  eval::write_scores(scores, out_scores);
}

eval::EvalReport evaluate(const fs::path& scores_path, const fs::path& manifest_path, const fs::path& out_report,
                          const std::optional<fs::path>& roc_csv, const std::optional<fs::path>& roc_svg) {
  const auto manifest = corpus::read_manifest(manifest_path);
  const auto scores = eval::read_scores(scores_path);
  const auto report = eval::evaluate(eval::join_labels(scores, manifest));
  eval::write_report(report, out_report);
  if (roc_csv) eval::write_roc_csv(report.roc_points, *roc_csv);
  if (roc_svg) eval::write_roc_svg(report.roc_points, report.auc, *roc_svg);
  return report;
}

bool ochiai(const fs::path& coverage, const fs::path& out_scores) {
  const auto result = sbfl::ochiai(sbfl::read_coverage(coverage));
  eval::write_scores({result.scores}, out_scores);
  return result.no_failing_tests;
}

void synthesize(const fs::path& out_dir, const synth::Options& opts) {
  synth::write(synth::generate(opts), out_dir / "src", out_dir / "diffs");
}

}  // namespace linefl::pipeline
