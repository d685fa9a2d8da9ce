#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "linefl/error.hpp"
#include "linefl/synth.hpp"
#include "linefl/training.hpp"
#include "test_util.hpp"

using namespace linefl;
using namespace linefl::training;

namespace {

std::vector<LabeledDoc> planted_docs(std::uint32_t n, std::uint64_t seed, std::uint32_t dim = 32) {
  synth::Options o;
  o.docs = n;
  o.seed = seed;
  o.min_lines = 12;
  o.max_lines = 30;
  std::vector<LabeledDoc> out;
  for (const auto& d : synth::generate(o)) {
    corpus::SourceDocument src{d.id, d.id, d.lines};
    out.push_back({std::make_shared<const states::StateMatrix>(states::encode_causal_mock(src, dim, 1)),
                   {d.id, d.faulty}});
  }
  return out;
}

adapter::AdapterConfig small_adapter(std::uint32_t dim, std::uint32_t layers = 1) {
  adapter::AdapterConfig c;
  c.input_dim = dim;
  c.model_dim = 16;
  c.n_layers = layers;
  c.n_heads = 2;
  c.window = 16;
  c.dropout = 0.0;
  return c;
}

TrainConfig fast_config() {
  TrainConfig t;
  t.max_lr = 3e-3;
  t.min_lr = 1e-5;
  t.warmup_steps = 10;
  t.decay_steps = 2000;
  t.batch_size = 8;
  t.max_epochs = 40;
  t.patience_epochs = 40;
  return t;
}

}  // namespace

TEST_CASE("lr_at: schedule constants") {
  TrainConfig c;  // max 1e-4, min 1e-7, warmup 1000, decay 20000
  CHECK(lr_at(0, c) == 0.0);
  CHECK(lr_at(1000, c) == 1e-4);
  CHECK(lr_at(20000, c) == 1e-7);
  CHECK(lr_at(500, c) == doctest::Approx(5e-5));
  CHECK(lr_at(50000, c) == 1e-7);
  // Halfway through the cosine: midpoint of max and min.
  CHECK(lr_at(10500, c) == doctest::Approx((1e-4 + 1e-7) / 2).epsilon(1e-12));
  c.lr_override = 0.0;
  CHECK(lr_at(1000, c) == 0.0);
}

TEST_CASE("lr_at: continuous at the warm-up boundary, non-increasing after it") {
  TrainConfig c;
  CHECK(std::abs(lr_at(999, c) - lr_at(1000, c)) <= c.max_lr / 1000 * (1 + 1e-12));
  CHECK(std::abs(lr_at(1001, c) - lr_at(1000, c)) < 1e-9);
  double prev = lr_at(1000, c);
  for (std::uint64_t s = 1001; s <= 25000; ++s) {
    const double cur = lr_at(s, c);
    REQUIRE(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("TrainConfig invariants") {
  TrainConfig c;
  c.min_lr = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.min_lr = 1e-3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.warmup_steps = c.decay_steps;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("frozen model with patience 1 stops after exactly two epochs") {
  const auto docs = planted_docs(4, 3);
  auto cfg = fast_config();
  cfg.lr_override = 0.0;
  cfg.patience_epochs = 1;
  const auto model = adapter::init<float>(small_adapter(32), 1);
  const auto r = train(model, docs, docs, cfg);
  CHECK(r.history.epochs.size() == 2);
  CHECK(r.history.best_epoch == 1);
}

TEST_CASE("same seed, identical history and checkpoint") {
  const auto docs = planted_docs(6, 4);
  auto cfg = fast_config();
  cfg.max_epochs = 5;
  cfg.seed = 17;
  auto acfg = small_adapter(32, 2);
  acfg.dropout = 0.1;
  const auto a = train(adapter::init<float>(acfg, 2), docs, docs, cfg);
  const auto b = train(adapter::init<float>(acfg, 2), docs, docs, cfg);
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
    CHECK(a.history.epochs[i].train_loss == b.history.epochs[i].train_loss);
    CHECK(a.history.epochs[i].val_loss == b.history.epochs[i].val_loss);
    CHECK(a.history.epochs[i].score == b.history.epochs[i].score);
  }
  test::TempDir dir;
  adapter::write_checkpoint(a.best, dir.path / "a.ckpt");
  adapter::write_checkpoint(b.best, dir.path / "b.ckpt");
  CHECK(test::slurp(dir.path / "a.ckpt") == test::slurp(dir.path / "b.ckpt"));
}

TEST_CASE("best epoch maximizes the validation score and the checkpoint is not the last model") {
  const auto docs = planted_docs(8, 5);
  auto cfg = fast_config();
  cfg.max_epochs = 30;
  const auto r = train(adapter::init<float>(small_adapter(32), 3), docs, docs, cfg);
  double best = -1.0;
  for (const auto& e : r.history.epochs) best = std::max(best, e.score);
  CHECK(r.history.epochs[r.history.best_epoch - 1].score == best);
  CHECK(r.best.best_epoch == r.history.best_epoch);
}

TEST_CASE("training loss on a fixed batch decreases at a small learning rate") {
  int decreased = 0;
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    const auto docs = planted_docs(1, 100 + trial);
    auto cfg = fast_config();
    cfg.lr_override = 1e-3;
    cfg.max_epochs = 6;
    cfg.patience_epochs = 100;
    cfg.batch_size = 64;  // the whole document is one batch each epoch
    cfg.seed = trial;
    const auto r = train(adapter::init<float>(small_adapter(32, 2), trial), docs, docs, cfg);
    if (r.history.epochs.back().train_loss < r.history.epochs.front().train_loss) ++decreased;
  }
  CHECK(decreased >= 4);
}

TEST_CASE("planted signature is learnable: validation score at least 0.95") {
  const auto train_docs = planted_docs(10, 6);
  const auto val_docs = planted_docs(10, 7);
  auto cfg = fast_config();
  cfg.max_epochs = 500;
  cfg.patience_epochs = 500;
  cfg.batch_size = 4;
  TrainResult r;
  // Stop early once the target is reached to keep the test quick.
  for (std::uint32_t epochs : {60u, 200u, 500u}) {
    cfg.max_epochs = epochs;
    cfg.patience_epochs = epochs;
    r = train(adapter::init<float>(small_adapter(32), 8), train_docs, val_docs, cfg);
    if (r.history.epochs[r.history.best_epoch - 1].score >= 0.95) break;
  }
  CHECK(r.history.epochs[r.history.best_epoch - 1].score >= 0.95);
}

TEST_CASE("non-finite values abort with step diagnostics") {
  auto docs = planted_docs(2, 9);
  auto model = adapter::init<float>(small_adapter(32), 4);
  model.mutable_params().reduce(0, 0) = std::numeric_limits<float>::max();
  model.mutable_params().reduce(1, 0) = std::numeric_limits<float>::max();
  // Large inputs so the reduction overflows.
  std::vector<float> big(docs[0].states->data().begin(), docs[0].states->data().end());
  for (auto& v : big) v = 1e30f;
  docs[0].states = std::make_shared<const states::StateMatrix>(docs[0].states->doc_id(), docs[0].states->rows(), 32,
                                                               big, "big");
  try {
    train(model, docs, docs, fast_config());
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    const std::string what = e.what();
    CHECK(what.find("step 0") != std::string::npos);
    CHECK(what.find("lr") != std::string::npos);
    CHECK(what.find("batch:") != std::string::npos);
  }
}

TEST_CASE("predict covers every line with probabilities in (0, 1)") {
  const auto docs = planted_docs(1, 10);
  const auto model = adapter::init<float>(small_adapter(32, 2), 5);
  for (std::uint32_t overlap : {0u, 4u, 15u}) {
    const auto s = predict(model, *docs[0].states, overlap);
    REQUIRE(s.scores.size() == docs[0].states->rows());
    for (double v : s.scores) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("crossval with k=2 on four documents") {
  test::TempDir dir;
  const auto docs = planted_docs(4, 11);
  corpus::DatasetManifest m;
  for (const auto& d : docs) {
    states::write_states(*d.states, states::state_path(dir.path, d.labels.doc_id));
    corpus::ManifestRecord r;
    r.id = d.labels.doc_id;
    r.path = r.id;
    r.faulty_lines.assign(d.labels.faulty_lines.begin(), d.labels.faulty_lines.end());
    m.records.push_back(r);
  }
  m = corpus::assign_folds(m, 2, 1);
  CrossvalConfig cfg;
  cfg.adapter = small_adapter(32);
  cfg.train = fast_config();
  cfg.train.max_epochs = 5;

  const auto r = crossval(m, dir.path, cfg);
  REQUIRE(r.folds.size() == 2);
  std::set<std::string> seen;
  std::uint32_t top5 = 0;
  for (const auto& f : r.folds) {
    CHECK(f.held_out.size() == 2);
    CHECK(f.validation_fold == -1);
    for (const auto& id : f.held_out) CHECK(seen.insert(id).second);
    top5 += f.report.top_n_counts.at(5);
  }
  CHECK(seen.size() == 4);
  CHECK(r.aggregate.top_n_counts.at(5) == top5);
  CHECK(r.aggregate.total_bugs == 4);

  cfg.jobs = 2;
  const auto parallel = crossval(m, dir.path, cfg);
  CHECK(eval::report_json(parallel.aggregate) == eval::report_json(r.aggregate));

  std::filesystem::remove(states::state_path(dir.path, docs[3].labels.doc_id));
  try {
    crossval(m, dir.path, cfg);
    FAIL("expected a reference error");
  } catch (const ReferenceError& e) {
    CHECK(std::string(e.what()).find(docs[3].labels.doc_id) != std::string::npos);
  }
}

TEST_CASE("crossval folds: evaluation, validation and training folds are disjoint") {
  CHECK(validation_fold(0, 10) == 1);
  CHECK(validation_fold(9, 10) == 0);
  CHECK(validation_fold(1, 2) == -1);
  CHECK(fold_seed(5, 3) == (5u ^ 3u));
}
