#include "linefl/linefl.h"

#include <cstring>
#include <memory>
#include <string>

#include "linefl/error.hpp"
#include "linefl/eval.hpp"
#include "linefl/pipeline.hpp"
#include "linefl/states.hpp"
#include "linefl/training.hpp"

struct linefl_report {
  linefl::eval::EvalReport report;
};

struct linefl_states {
  linefl::states::StateMatrix matrix;
};

struct linefl_model {
  linefl::adapter::Checkpoint checkpoint;
};

namespace {

thread_local std::string g_last_error;

template <class F>
linefl_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return LINEFL_OK;
  } catch (const linefl::Error& e) {
    g_last_error = e.what();
    return static_cast<linefl_status>(e.category());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return LINEFL_ERR_INTERNAL;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return LINEFL_ERR_REFERENCE;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return LINEFL_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw linefl::ConfigError(std::string(what) + " must not be NULL");
}

linefl::adapter::AdapterConfig to_config(const linefl_adapter_options* o) {
  linefl::adapter::AdapterConfig c;
  if (o == nullptr) return c;
  c.model_dim = o->model_dim;
  c.n_layers = o->n_layers;
  c.n_heads = o->n_heads;
  c.ff_multiplier = o->ff_multiplier;
  c.dropout = o->dropout;
  switch (o->positional) {
    case LINEFL_POS_SINUSOIDAL: c.positional = linefl::adapter::PositionalEncoding::Sinusoidal; break;
    case LINEFL_POS_LEARNED: c.positional = linefl::adapter::PositionalEncoding::Learned; break;
    case LINEFL_POS_NONE: c.positional = linefl::adapter::PositionalEncoding::None; break;
    default: throw linefl::ConfigError("unknown positional encoding");
  }
  c.window = o->window;
  return c;
}

linefl::training::TrainConfig to_config(const linefl_train_options* o) {
  linefl::training::TrainConfig c;
  if (o == nullptr) return c;
  c.max_lr = o->max_lr;
  c.min_lr = o->min_lr;
  c.warmup_steps = o->warmup_steps;
  c.decay_steps = o->decay_steps;
  c.batch_size = o->batch_size;
  c.max_epochs = o->max_epochs;
  c.patience_epochs = o->patience_epochs;
  c.seed = o->seed;
  c.threshold = o->threshold;
  if (o->has_lr_override) c.lr_override = o->lr_override;
  c.resample_windows = o->resample_windows != 0;
  c.tile_overlap = o->tile_overlap;
  return c;
}

std::optional<std::filesystem::path> optional_path(const char* p) {
  if (p == nullptr || *p == '\0') return std::nullopt;
  return std::filesystem::path(p);
}

}  // namespace

extern "C" {

const char* linefl_version(void) { return "0.1.0"; }

const char* linefl_last_error(void) { return g_last_error.c_str(); }

const char* linefl_status_name(linefl_status status) {
  switch (status) {
    case LINEFL_OK: return "ok";
    case LINEFL_ERR_INTERNAL: return "internal";
    case LINEFL_ERR_CONFIG: return "config";
    case LINEFL_ERR_FORMAT: return "format";
    case LINEFL_ERR_REFERENCE: return "reference";
    case LINEFL_ERR_NUMERIC: return "numeric";
  }
  return "unknown";
}

void linefl_adapter_options_default(linefl_adapter_options* opts) {
  if (opts == nullptr) return;
  const linefl::adapter::AdapterConfig c;
  opts->model_dim = c.model_dim;
  opts->n_layers = c.n_layers;
  opts->n_heads = c.n_heads;
  opts->ff_multiplier = c.ff_multiplier;
  opts->dropout = c.dropout;
  opts->positional = LINEFL_POS_SINUSOIDAL;
  opts->window = c.window;
}

void linefl_train_options_default(linefl_train_options* opts) {
  if (opts == nullptr) return;
  const linefl::training::TrainConfig c;
  opts->max_lr = c.max_lr;
  opts->min_lr = c.min_lr;
  opts->warmup_steps = c.warmup_steps;
  opts->decay_steps = c.decay_steps;
  opts->batch_size = c.batch_size;
  opts->max_epochs = c.max_epochs;
  opts->patience_epochs = c.patience_epochs;
  opts->seed = c.seed;
  opts->threshold = c.threshold;
  opts->has_lr_override = 0;
  opts->lr_override = 0.0;
  opts->resample_windows = 0;
  opts->tile_overlap = c.tile_overlap;
}

double linefl_lr_at(uint64_t step, const linefl_train_options* opts) {
  return linefl::training::lr_at(step, to_config(opts));
}

void linefl_synth_options_default(linefl_synth_options* opts) {
  if (opts == nullptr) return;
  const linefl::synth::Options o;
  opts->docs = o.docs;
  opts->min_lines = o.min_lines;
  opts->max_lines = o.max_lines;
  opts->min_faulty = o.min_faulty;
  opts->max_faulty = o.max_faulty;
  opts->seed = o.seed;
  opts->random_labels = 0;
}

linefl_status linefl_synth(const char* out_dir, const linefl_synth_options* opts) {
  return guarded([&] {
    require(out_dir, "out_dir");
    linefl::synth::Options o;
    if (opts != nullptr) {
      o.docs = opts->docs;
      o.min_lines = opts->min_lines;
      o.max_lines = opts->max_lines;
      o.min_faulty = opts->min_faulty;
      o.max_faulty = opts->max_faulty;
      o.seed = opts->seed;
      o.random_labels = opts->random_labels != 0;
    }
    linefl::pipeline::synthesize(out_dir, o);
  });
}

linefl_status linefl_ingest(const char* src_dir, const char* diffs_dir, const char* out_manifest, int folds,
                            uint64_t seed) {
  return guarded([&] {
    require(src_dir, "src_dir");
    require(diffs_dir, "diffs_dir");
    require(out_manifest, "out_manifest");
    linefl::pipeline::ingest(src_dir, diffs_dir, out_manifest, folds > 0 ? std::optional<int>(folds) : std::nullopt,
                             seed);
  });
}

linefl_status linefl_encode(const char* manifest, const char* out_dir, uint32_t dim, uint64_t seed) {
  return guarded([&] {
    require(manifest, "manifest");
    require(out_dir, "out_dir");
    linefl::pipeline::encode(manifest, out_dir, dim, seed);
  });
}

linefl_status linefl_train(const char* manifest, const char* states_dir, const char* out_ckpt,
                           const linefl_adapter_options* adapter, const linefl_train_options* train, int val_fold,
                           const char* history_path) {
  return guarded([&] {
    require(manifest, "manifest");
    require(states_dir, "states_dir");
    require(out_ckpt, "out_ckpt");
    linefl::pipeline::TrainOptions opts;
    opts.adapter = to_config(adapter);
    opts.train = to_config(train);
    opts.val_fold = val_fold;
    opts.history = optional_path(history_path);
    linefl::pipeline::train(manifest, states_dir, out_ckpt, opts);
  });
}

linefl_status linefl_crossval(const char* manifest, const char* states_dir, const char* out_dir, int k, unsigned jobs,
                              const linefl_adapter_options* adapter, const linefl_train_options* train,
                              linefl_report** out_aggregate) {
  return guarded([&] {
    require(manifest, "manifest");
    require(states_dir, "states_dir");
    require(out_dir, "out_dir");
    linefl::pipeline::CrossvalOptions opts;
    opts.k = k;
    opts.config.adapter = to_config(adapter);
    opts.config.train = to_config(train);
    opts.config.jobs = jobs;
    auto result = linefl::pipeline::crossval(manifest, states_dir, out_dir, opts);
    if (out_aggregate) *out_aggregate = new linefl_report{std::move(result.aggregate)};
  });
}

linefl_status linefl_predict(const char* ckpt, const char* states_dir, const char* out_scores, uint32_t overlap) {
  return guarded([&] {
    require(ckpt, "ckpt");
    require(states_dir, "states_dir");
    require(out_scores, "out_scores");
    linefl::pipeline::predict(ckpt, states_dir, out_scores, overlap);
  });
}

linefl_status linefl_evaluate(const char* scores, const char* manifest, const char* out_report, const char* roc_csv,
                              const char* roc_svg, linefl_report** out) {
  return guarded([&] {
    require(scores, "scores");
    require(manifest, "manifest");
    require(out_report, "out_report");
    auto report =
        linefl::pipeline::evaluate(scores, manifest, out_report, optional_path(roc_csv), optional_path(roc_svg));
    if (out) *out = new linefl_report{std::move(report)};
  });
}

linefl_status linefl_ochiai(const char* coverage, const char* out_scores, int* no_failing_tests) {
  return guarded([&] {
    require(coverage, "coverage");
    require(out_scores, "out_scores");
    const bool none = linefl::pipeline::ochiai(coverage, out_scores);
    if (no_failing_tests) *no_failing_tests = none ? 1 : 0;
  });
}

uint32_t linefl_report_top_n(const linefl_report* report, uint32_t n) {
  if (report == nullptr) return 0;
  auto it = report->report.top_n_counts.find(n);
  return it == report->report.top_n_counts.end() ? 0 : it->second;
}

uint32_t linefl_report_total_bugs(const linefl_report* report) {
  return report == nullptr ? 0 : report->report.total_bugs;
}

int linefl_report_auc(const linefl_report* report, double* auc) {
  if (report == nullptr || !report->report.auc) return 0;
  if (auc) *auc = *report->report.auc;
  return 1;
}

void linefl_report_free(linefl_report* report) { delete report; }

linefl_status linefl_states_read(const char* path, linefl_states** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new linefl_states{linefl::states::read_states(path)};
  });
}

linefl_status linefl_states_write(const linefl_states* states, const char* path) {
  return guarded([&] {
    require(states, "states");
    require(path, "path");
    linefl::states::write_states(states->matrix, path);
  });
}

linefl_status linefl_states_encode_mock(const char* doc_id, const char* const* lines, size_t n_lines, uint32_t dim,
                                        uint64_t seed, linefl_states** out) {
  return guarded([&] {
    require(out, "out");
    if (n_lines > 0) require(lines, "lines");
    linefl::corpus::SourceDocument doc;
    doc.id = doc_id ? doc_id : "doc";
    for (size_t i = 0; i < n_lines; ++i) {
      require(lines[i], "line");
      doc.lines.emplace_back(lines[i]);
    }
    *out = new linefl_states{linefl::states::encode_causal_mock(doc, dim, seed)};
  });
}

uint32_t linefl_states_rows(const linefl_states* states) { return states ? states->matrix.rows() : 0; }
uint32_t linefl_states_dim(const linefl_states* states) { return states ? states->matrix.dim() : 0; }
const float* linefl_states_data(const linefl_states* states) {
  return states ? states->matrix.data().data() : nullptr;
}
const char* linefl_states_encoder_tag(const linefl_states* states) {
  return states ? states->matrix.encoder_tag().c_str() : nullptr;
}
void linefl_states_free(linefl_states* states) { delete states; }

linefl_status linefl_model_load(const char* ckpt, linefl_model** out) {
  return guarded([&] {
    require(ckpt, "ckpt");
    require(out, "out");
    *out = new linefl_model{linefl::adapter::read_checkpoint(ckpt)};
  });
}

uint32_t linefl_model_input_dim(const linefl_model* model) {
  return model ? model->checkpoint.model.config().input_dim : 0;
}

linefl_status linefl_model_predict(const linefl_model* model, const linefl_states* states, uint32_t overlap,
                                   double* scores, size_t capacity) {
  return guarded([&] {
    require(model, "model");
    require(states, "states");
    require(scores, "scores");
    if (capacity < states->matrix.rows()) throw linefl::ConfigError("score buffer is smaller than the row count");
    if (states->matrix.dim() != model->checkpoint.model.config().input_dim) {
      throw linefl::ConfigError("state dimension does not match the model input dimension");
    }
    const auto s = linefl::training::predict(model->checkpoint.model, states->matrix, overlap);
    std::memcpy(scores, s.scores.data(), s.scores.size() * sizeof(double));
  });
}

void linefl_model_free(linefl_model* model) { delete model; }

linefl_status linefl_wilcoxon(const double* a, const double* b, size_t n, double* p_value) {
  return guarded([&] {
    require(p_value, "p_value");
    if (n > 0) {
      require(a, "a");
      require(b, "b");
    }
    std::vector<std::pair<double, double>> pairs;
    for (size_t i = 0; i < n; ++i) pairs.emplace_back(a[i], b[i]);
    *p_value = linefl::eval::wilcoxon_signed_rank(pairs);
  });
}

}  // extern "C"
