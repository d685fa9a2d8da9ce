#pragma once

// File-to-file compositions behind the CLI and the C API.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "linefl/adapter.hpp"
#include "linefl/corpus.hpp"
#include "linefl/eval.hpp"
#include "linefl/synth.hpp"
#include "linefl/training.hpp"

namespace linefl::pipeline {

namespace fs = std::filesystem;

/// Sources are the regular files under src_dir (ids are their relative
/// paths); the fix for `<id>` is `<diffs_dir>/<id>.diff` when present.
corpus::DatasetManifest ingest(const fs::path& src_dir, const fs::path& diffs_dir, const fs::path& out_manifest,
                               std::optional<int> folds = std::nullopt, std::uint64_t seed = 0);

/// Mock-encodes every manifest record into `<out_dir>/<id>.lnst`.
void encode(const fs::path& manifest, const fs::path& out_dir, std::uint32_t dim, std::uint64_t seed);

struct TrainOptions {
  adapter::AdapterConfig adapter;
  training::TrainConfig train;
  int val_fold = 0;
  int default_folds = 10;
  std::optional<fs::path> history;
};

/// Trains on every fold but `val_fold` (folds are assigned with the train
/// seed when the manifest has none) and writes the best checkpoint.
training::TrainHistory train(const fs::path& manifest, const fs::path& states_dir, const fs::path& out_ckpt,
                             const TrainOptions& opts);

struct CrossvalOptions {
  training::CrossvalConfig config;
  int k = 10;
};

/// Writes fold_NN.{report.json,history.jsonl,scores.tsv,ckpt} per fold and
/// aggregate.{report.json,roc.csv,roc.svg}.
training::CrossvalResult crossval(const fs::path& manifest, const fs::path& states_dir, const fs::path& out_dir,
                                  const CrossvalOptions& opts);

/// Scores every `.lnst` file in states_dir, in file-name order.
void predict(const fs::path& ckpt, const fs::path& states_dir, const fs::path& out_scores, std::uint32_t overlap = 0);

eval::EvalReport evaluate(const fs::path& scores, const fs::path& manifest, const fs::path& out_report,
                          const std::optional<fs::path>& roc_csv = std::nullopt,
                          const std::optional<fs::path>& roc_svg = std::nullopt);

/// Returns true when the coverage had no failing test (all scores 0).
bool ochiai(const fs::path& coverage, const fs::path& out_scores);

void synthesize(const fs::path& out_dir, const synth::Options& opts);

}  // namespace linefl::pipeline
