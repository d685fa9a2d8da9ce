/*
 * linefl C API.
 *
 * Every function returning linefl_status reports failures through the status
 * code; linefl_last_error() then describes the most recent failure on the
 * calling thread. Objects are opaque handles released with their _free
 * function. Status values double as the CLI's exit codes.
 */
#ifndef LINEFL_LINEFL_H
#define LINEFL_LINEFL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(LINEFL_BUILDING)
#    define LINEFL_API __declspec(dllexport)
#  else
#    define LINEFL_API __declspec(dllimport)
#  endif
#else
#  define LINEFL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum linefl_status {
  LINEFL_OK = 0,
  LINEFL_ERR_INTERNAL = 1,
  LINEFL_ERR_CONFIG = 2,    /* bad arguments or configuration */
  LINEFL_ERR_FORMAT = 3,    /* malformed input file */
  LINEFL_ERR_REFERENCE = 4, /* missing file, unknown document or line */
  LINEFL_ERR_NUMERIC = 5    /* non-finite values, undefined metrics */
} linefl_status;

typedef enum linefl_positional {
  LINEFL_POS_SINUSOIDAL = 0,
  LINEFL_POS_LEARNED = 1,
  LINEFL_POS_NONE = 2
} linefl_positional;

LINEFL_API const char* linefl_version(void);
LINEFL_API const char* linefl_last_error(void);
/* "config", "format", ... for a status code. */
LINEFL_API const char* linefl_status_name(linefl_status status);

typedef struct linefl_adapter_options {
  uint32_t model_dim;
  uint32_t n_layers; /* 0 = linear probe */
  uint32_t n_heads;
  uint32_t ff_multiplier;
  double dropout;
  linefl_positional positional;
  uint32_t window; /* lines per sample */
} linefl_adapter_options;

typedef struct linefl_train_options {
  double max_lr;
  double min_lr;
  uint64_t warmup_steps;
  uint64_t decay_steps;
  uint32_t batch_size;
  uint32_t max_epochs;
  uint32_t patience_epochs;
  uint64_t seed;
  double threshold;
  int has_lr_override;
  double lr_override;
  int resample_windows;
  uint32_t tile_overlap;
} linefl_train_options;

LINEFL_API void linefl_adapter_options_default(linefl_adapter_options* opts);
LINEFL_API void linefl_train_options_default(linefl_train_options* opts);

/* Learning rate of the warm-up + cosine schedule at `step`. */
LINEFL_API double linefl_lr_at(uint64_t step, const linefl_train_options* opts);

/* ---- pipeline commands -------------------------------------------------- */

typedef struct linefl_synth_options {
  uint32_t docs;
  uint32_t min_lines;
  uint32_t max_lines;
  uint32_t min_faulty;
  uint32_t max_faulty;
  uint64_t seed;
  int random_labels;
} linefl_synth_options;

LINEFL_API void linefl_synth_options_default(linefl_synth_options* opts);
/* Writes <out_dir>/src and <out_dir>/diffs. */
LINEFL_API linefl_status linefl_synth(const char* out_dir, const linefl_synth_options* opts);

/* folds <= 0 leaves records without fold tags. */
LINEFL_API linefl_status linefl_ingest(const char* src_dir, const char* diffs_dir, const char* out_manifest, int folds,
                                       uint64_t seed);
LINEFL_API linefl_status linefl_encode(const char* manifest, const char* out_dir, uint32_t dim, uint64_t seed);
/* history_path may be NULL. */
LINEFL_API linefl_status linefl_train(const char* manifest, const char* states_dir, const char* out_ckpt,
                                      const linefl_adapter_options* adapter, const linefl_train_options* train,
                                      int val_fold, const char* history_path);

typedef struct linefl_report linefl_report;

/* out_aggregate may be NULL; otherwise release it with linefl_report_free. */
LINEFL_API linefl_status linefl_crossval(const char* manifest, const char* states_dir, const char* out_dir, int k,
                                         unsigned jobs, const linefl_adapter_options* adapter,
                                         const linefl_train_options* train, linefl_report** out_aggregate);
LINEFL_API linefl_status linefl_predict(const char* ckpt, const char* states_dir, const char* out_scores,
                                        uint32_t overlap);
/* roc_csv, roc_svg and out may be NULL. */
LINEFL_API linefl_status linefl_evaluate(const char* scores, const char* manifest, const char* out_report,
                                         const char* roc_csv, const char* roc_svg, linefl_report** out);
/* *no_failing_tests (if non-NULL) is set to 1 when the scores are all zero
   because no test failed. */
LINEFL_API linefl_status linefl_ochiai(const char* coverage, const char* out_scores, int* no_failing_tests);

/* ---- reports ------------------------------------------------------------ */

LINEFL_API uint32_t linefl_report_top_n(const linefl_report* report, uint32_t n);
LINEFL_API uint32_t linefl_report_total_bugs(const linefl_report* report);
/* Returns 1 and writes *auc when defined, 0 for single-class pools. */
LINEFL_API int linefl_report_auc(const linefl_report* report, double* auc);
LINEFL_API void linefl_report_free(linefl_report* report);

/* ---- state matrices ----------------------------------------------------- */

typedef struct linefl_states linefl_states;

LINEFL_API linefl_status linefl_states_read(const char* path, linefl_states** out);
LINEFL_API linefl_status linefl_states_write(const linefl_states* states, const char* path);
/* Mock-encodes n_lines lines of text. */
LINEFL_API linefl_status linefl_states_encode_mock(const char* doc_id, const char* const* lines, size_t n_lines,
                                                   uint32_t dim, uint64_t seed, linefl_states** out);
LINEFL_API uint32_t linefl_states_rows(const linefl_states* states);
LINEFL_API uint32_t linefl_states_dim(const linefl_states* states);
/* rows * dim floats, row-major, valid until the handle is freed. */
LINEFL_API const float* linefl_states_data(const linefl_states* states);
LINEFL_API const char* linefl_states_encoder_tag(const linefl_states* states);
LINEFL_API void linefl_states_free(linefl_states* states);

/* ---- models ------------------------------------------------------------- */

typedef struct linefl_model linefl_model;

LINEFL_API linefl_status linefl_model_load(const char* ckpt, linefl_model** out);
LINEFL_API uint32_t linefl_model_input_dim(const linefl_model* model);
/* Writes one score per state row into scores[0..capacity). */
LINEFL_API linefl_status linefl_model_predict(const linefl_model* model, const linefl_states* states, uint32_t overlap,
                                              double* scores, size_t capacity);
LINEFL_API void linefl_model_free(linefl_model* model);

/* ---- statistics --------------------------------------------------------- */

LINEFL_API linefl_status linefl_wilcoxon(const double* a, const double* b, size_t n, double* p_value);

#ifdef __cplusplus
}
#endif

#endif /* LINEFL_LINEFL_H */
