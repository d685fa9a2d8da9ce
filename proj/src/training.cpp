#include "linefl/training.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "linefl/error.hpp"
#include "linefl/windowing.hpp"

namespace linefl::training {

using adapter::AdapterModel;
using adapter::AdapterParams;
using adapter::Mat;

void TrainConfig::validate() const {
  if (!(min_lr > 0.0 && min_lr <= max_lr)) throw ConfigError("learning rates must satisfy 0 < min_lr <= max_lr");
  if (warmup_steps >= decay_steps) throw ConfigError("warmup_steps must be smaller than decay_steps");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  if (lr_override && *lr_override < 0.0) throw ConfigError("learning rate override must be non-negative");
}

double lr_at(std::uint64_t step, const TrainConfig& cfg) {
  if (cfg.lr_override) return *cfg.lr_override;
  if (step < cfg.warmup_steps) {
    return cfg.max_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (step >= cfg.decay_steps) return cfg.min_lr;
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.decay_steps - cfg.warmup_steps);
  return cfg.min_lr + 0.5 * (cfg.max_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

struct Adam {
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  AdapterParams<float> m, v;
  std::uint64_t t = 0;

  explicit Adam(const AdapterParams<float>& like) : m(like.zeros_like()), v(like.zeros_like()) {}

  void step(AdapterParams<float>& params, const AdapterParams<float>& grads, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    std::vector<Mat<float>*> ps, ms, vs;
    std::vector<const Mat<float>*> gs;
    params.for_each([&](const std::string&, Mat<float>& x) { ps.push_back(&x); });
    m.for_each([&](const std::string&, Mat<float>& x) { ms.push_back(&x); });
    v.for_each([&](const std::string&, Mat<float>& x) { vs.push_back(&x); });
    grads.for_each([&](const std::string&, const Mat<float>& x) { gs.push_back(&x); });
    for (std::size_t i = 0; i < ps.size(); ++i) {
      float* p = ps[i]->data();
      float* mm = ms[i]->data();
      float* vv = vs[i]->data();
      const float* g = gs[i]->data();
      for (Eigen::Index k = 0; k < ps[i]->size(); ++k) {
        mm[k] = static_cast<float>(kBeta1 * mm[k] + (1.0 - kBeta1) * g[k]);
        vv[k] = static_cast<float>(kBeta2 * vv[k] + (1.0 - kBeta2) * double{g[k]} * g[k]);
        const double mhat = mm[k] / c1;
        const double vhat = vv[k] / c2;
        p[k] = static_cast<float>(p[k] - lr * mhat / (std::sqrt(vhat) + kEps));
      }
    }
  }
};

std::vector<windowing::WindowSample> make_windows(const std::vector<LabeledDoc>& docs, std::uint32_t capacity,
                                                  std::mt19937_64& rng) {
  std::vector<windowing::WindowSample> out;
  for (const auto& d : docs) {
    if (d.labels.faulty_lines.empty()) continue;
    for (const auto& spec :
         windowing::segment(d.labels.doc_id, d.states->rows(), d.labels.faulty_lines, capacity, rng)) {
      out.push_back(windowing::materialize(spec, *d.states, d.labels, capacity));
    }
  }
  return out;
}

struct Validation {
  double precision = 0.0, recall = 0.0, loss = 0.0;
};

Validation validate_model(const AdapterModel<float>& model, const std::vector<LabeledDoc>& docs, double threshold,
                          std::uint32_t overlap) {
  std::size_t tp = 0, fp = 0, fn = 0, lines = 0;
  double loss = 0.0;
  for (const auto& d : docs) {
    const auto scores = predict(model, *d.states, overlap);
    for (std::size_t i = 0; i < scores.scores.size(); ++i) {
      const bool truth = d.labels.faulty_lines.count(static_cast<std::uint32_t>(i + 1)) > 0;
      const bool predicted = scores.scores[i] >= threshold;
      tp += truth && predicted;
      fp += !truth && predicted;
      fn += truth && !predicted;
      const double p = std::clamp(scores.scores[i], 1e-12, 1.0 - 1e-12);
      loss -= truth ? std::log(p) : std::log1p(-p);
      ++lines;
    }
  }
  Validation v;
  v.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  v.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  v.loss = lines == 0 ? 0.0 : loss / static_cast<double>(lines);
  return v;
}

}  // namespace

eval::LineScores predict(const AdapterModel<float>& model, const states::StateMatrix& sm, std::uint32_t overlap) {
  const auto capacity = model.config().window;
  const corpus::LineLabels none{sm.doc_id(), {}};
  std::vector<windowing::WindowSample> tiles;
  for (const auto& spec : windowing::tile_for_inference(sm.doc_id(), sm.rows(), capacity, overlap)) {
    tiles.push_back(windowing::materialize(spec, sm, none, capacity));
  }
  const auto trace = adapter::forward(model, tiles, false);
  std::vector<eval::TileScores> tile_scores;
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    eval::TileScores ts{tiles[t].spec, {}};
    // Probabilities in double from the logits so confident lines do not
    // collapse into float ties at 1.0.
    const auto& logits = trace.samples[t].logits;
    for (Eigen::Index r = 0; r < logits.size(); ++r) {
      ts.scores.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(logits(r)))));
    }
    tile_scores.push_back(std::move(ts));
  }
  return eval::aggregate_tiles(sm.doc_id(), sm.rows(), tile_scores);
}

TrainResult train(AdapterModel<float> model, const std::vector<LabeledDoc>& train_set,
                  const std::vector<LabeledDoc>& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw ConfigError("training and validation sets must be non-empty");
  for (const auto* set : {&train_set, &val_set}) {
    for (const auto& d : *set) {
      if (!d.states || d.states->dim() != model.config().input_dim) {
        throw ConfigError(d.labels.doc_id + ": state dimension does not match the model input dimension");
      }
    }
  }

  const std::uint32_t capacity = model.config().window;
  std::mt19937_64 window_rng(cfg.seed ^ 0x77696e646f77ull);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x73687566666c65ull);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x64726f706f7574ull);

  auto windows = make_windows(train_set, capacity, window_rng);
  if (windows.empty()) throw ConfigError("no training document has faulty lines");

  Adam adam(model.params());
  TrainResult result;
  std::uint64_t step = 0;
  double best_score = -1.0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::uint32_t since_best = 0;
  result.best.seed_lineage = {cfg.seed};

  for (std::uint32_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (cfg.resample_windows && epoch > 1) windows = make_windows(train_set, capacity, window_rng);
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    double lr = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<windowing::WindowSample> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(windows[order[i]]);

      lr = lr_at(step, cfg);
      auto diagnostics = [&] {
        std::string ids;
        for (const auto& s : batch) ids += " " + s.spec.doc_id + "@" + std::to_string(s.spec.start);
        return " at step " + std::to_string(step) + " (lr " + std::to_string(lr) + "), batch:" + ids;
      };
      adapter::AdapterParams<float> grads;
      double batch_loss = 0.0;
      try {
        const auto trace = adapter::forward(model, batch, true, &dropout_rng);
        batch_loss = adapter::loss(trace, batch);
        if (!std::isfinite(batch_loss)) throw NumericError("non-finite training loss");
        grads = adapter::backward(model, trace, batch);
      } catch (const NumericError& e) {
        throw NumericError(e.what() + diagnostics());
      }
      adam.step(model.mutable_params(), grads, lr);
      loss_sum += batch_loss;
      ++batches;
      ++step;
    }

    const Validation val = validate_model(model, val_set, cfg.threshold, cfg.tile_overlap);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val_loss = val.loss;
    rec.precision = val.precision;
    rec.recall = val.recall;
    rec.score = (val.precision + val.recall) / 2.0;
    rec.lr = lr;
    result.history.epochs.push_back(rec);

    const bool improved = rec.score > best_score || (rec.score == best_score && rec.val_loss < best_val_loss);
    if (improved) {
      best_score = rec.score;
      best_val_loss = rec.val_loss;
      since_best = 0;
      result.history.best_epoch = epoch;
      result.best.model = model;
      result.best.step = step;
      result.best.best_epoch = epoch;
    } else if (++since_best >= cfg.patience_epochs) {
      break;
    }
  }
  return result;
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) { return seed ^ static_cast<std::uint64_t>(fold); }

LabeledDoc load_labeled(const corpus::ManifestRecord& record, const std::filesystem::path& states_dir) {
  const auto path = states::state_path(states_dir, record.id);
  if (!std::filesystem::exists(path)) {
    throw ReferenceError("manifest record " + record.id + " has no state file at " + path.string());
  }
  auto sm = std::make_shared<const states::StateMatrix>(states::read_states(path, record.id));
  if (!record.faulty_lines.empty() && record.faulty_lines.back() > sm->rows()) {
    throw ReferenceError("manifest record " + record.id + " labels line " + std::to_string(record.faulty_lines.back()) +
                         " but its state file has " + std::to_string(sm->rows()) + " rows");
  }
  return LabeledDoc{std::move(sm), record.labels()};
}

int validation_fold(int fold, int k) { return k < 3 ? -1 : (fold + 1) % k; }

CrossvalResult crossval(const corpus::DatasetManifest& manifest, const std::filesystem::path& states_dir,
                        const CrossvalConfig& cfg) {
  if (!manifest.has_folds()) throw ConfigError("manifest has no fold assignment");
  const int k = manifest.fold_count();
  if (k < 2) throw ConfigError("cross-validation needs at least 2 folds");

  std::vector<LabeledDoc> docs;
  std::vector<int> folds;
  for (const auto& rec : manifest.records) {
    docs.push_back(load_labeled(rec, states_dir));
    folds.push_back(*rec.fold);
  }
  adapter::AdapterConfig acfg = cfg.adapter;
  acfg.input_dim = docs.front().states->dim();
  for (const auto& d : docs) {
    if (d.states->dim() != acfg.input_dim) {
      throw ConfigError(d.labels.doc_id + ": state dimension " + std::to_string(d.states->dim()) + " differs from " +
                        std::to_string(acfg.input_dim));
    }
  }
  acfg.validate();
  cfg.train.validate();

  CrossvalResult result;
  result.folds.resize(static_cast<std::size_t>(k));

  auto run_fold = [&](int f) {
    std::vector<LabeledDoc> train_set, val_set, held_out;
    FoldResult& fr = result.folds[static_cast<std::size_t>(f)];
    fr.fold = f;
    fr.validation_fold = validation_fold(f, k);
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (folds[i] == f) {
        held_out.push_back(docs[i]);
        fr.held_out.push_back(docs[i].labels.doc_id);
      } else if (folds[i] == fr.validation_fold) {
        val_set.push_back(docs[i]);
      } else {
        train_set.push_back(docs[i]);
      }
    }
    if (held_out.empty()) throw ConfigError("fold " + std::to_string(f) + " is empty");
    // With two folds there is nothing left to hold out, so early stopping
    // watches the training documents.
    if (fr.validation_fold < 0) val_set = train_set;

    TrainConfig tcfg = cfg.train;
    tcfg.seed = fold_seed(cfg.train.seed, f);
    auto trained = train(adapter::init<float>(acfg, tcfg.seed), train_set, val_set, tcfg);
    trained.best.seed_lineage = {cfg.train.seed, tcfg.seed};

    for (const auto& d : held_out) {
      fr.scores.push_back(predict(trained.best.model, *d.states, tcfg.tile_overlap));
      fr.scored.push_back({fr.scores.back(), d.labels.faulty_lines});
    }
    fr.report = eval::evaluate(fr.scored);
    fr.history = std::move(trained.history);
    fr.checkpoint = std::move(trained.best);
  };

  const unsigned jobs = std::max(1u, std::min<unsigned>(cfg.jobs, static_cast<unsigned>(k)));
  if (jobs == 1) {
    for (int f = 0; f < k; ++f) run_fold(f);
  } else {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(k));
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (int f = next++; f < k; f = next++) {
          try {
            run_fold(f);
          } catch (...) {
            errors[static_cast<std::size_t>(f)] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::vector<std::vector<eval::ScoredDoc>> parts;
  for (const auto& fr : result.folds) parts.push_back(fr.scored);
  result.aggregate = eval::merge(parts);
  return result;
}

void write_history(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReferenceError("cannot write history " + path.string());
  for (const auto& e : history.epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["loss"] = e.train_loss;
    j["val_loss"] = e.val_loss;
    j["precision"] = e.precision;
    j["recall"] = e.recall;
    j["lr"] = e.lr;
    j["best"] = e.epoch == history.best_epoch;
    out << j.dump() << '\n';
  }
}

}  // namespace linefl::training
