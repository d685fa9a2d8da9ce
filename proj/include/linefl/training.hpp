#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "linefl/adapter.hpp"
#include "linefl/corpus.hpp"
#include "linefl/eval.hpp"
#include "linefl/states.hpp"

namespace linefl::training {

struct TrainConfig {
  double max_lr = 1e-4;
  double min_lr = 1e-7;
  std::uint64_t warmup_steps = 1000;
  std::uint64_t decay_steps = 20000;
  std::uint32_t batch_size = 32;
  std::uint32_t max_epochs = 300;
  std::uint32_t patience_epochs = 50;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  /// Replaces the schedule with a constant rate (0 freezes the model).
  std::optional<double> lr_override;
  /// Draw fresh window offsets every epoch instead of once per run.
  bool resample_windows = false;
  /// Overlap between inference tiles during validation and prediction.
  std::uint32_t tile_overlap = 0;

  void validate() const;
};

/// Linear warm-up from 0 to max_lr, cosine decay to min_lr at decay_steps,
/// then constant.
double lr_at(std::uint64_t step, const TrainConfig& cfg);

struct EpochRecord {
  std::uint32_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double score = 0.0;  // mean of precision and recall
  double lr = 0.0;     // rate used by the epoch's last step
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::uint32_t best_epoch = 0;
};

struct LabeledDoc {
  std::shared_ptr<const states::StateMatrix> states;
  corpus::LineLabels labels;
};

struct TrainResult {
  adapter::Checkpoint best;
  TrainHistory history;
};

/// Adam over window samples; keeps the epoch with the best validation
/// mean(precision, recall), ties broken by lower validation loss, and stops
/// after `patience_epochs` epochs without improvement.
TrainResult train(adapter::AdapterModel<float> model, const std::vector<LabeledDoc>& train_set,
                  const std::vector<LabeledDoc>& val_set, const TrainConfig& cfg);

/// Whole-document scores: tiles of the model's window, max-aggregated.
eval::LineScores predict(const adapter::AdapterModel<float>& model, const states::StateMatrix& sm,
                         std::uint32_t overlap = 0);

struct CrossvalConfig {
  adapter::AdapterConfig adapter;  // input_dim is taken from the state files
  TrainConfig train;
  unsigned jobs = 1;
};

struct FoldResult {
  int fold = 0;
  int validation_fold = -1;  // -1: early stopping used the training folds
  std::vector<std::string> held_out;
  eval::EvalReport report;
  TrainHistory history;
  std::vector<eval::LineScores> scores;
  std::vector<eval::ScoredDoc> scored;
  adapter::Checkpoint checkpoint;
};

struct CrossvalResult {
  std::vector<FoldResult> folds;
  eval::EvalReport aggregate;
};

/// Loads `<states_dir>/<id>.lnst` for a record; a missing file is a
/// reference error naming the record.
LabeledDoc load_labeled(const corpus::ManifestRecord& record, const std::filesystem::path& states_dir);

/// Fold used for early stopping when `fold` is evaluated: the next fold
/// cyclically, or -1 when k < 3.
int validation_fold(int fold, int k);

/// Trains one model per fold and evaluates it on that held-out fold. Early
/// stopping watches validation_fold(); the remaining folds are trained on.
/// The manifest must carry fold tags.
CrossvalResult crossval(const corpus::DatasetManifest& manifest, const std::filesystem::path& states_dir,
                        const CrossvalConfig& cfg);

std::uint64_t fold_seed(std::uint64_t seed, int fold);

/// One JSON object per epoch.
void write_history(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace linefl::training
