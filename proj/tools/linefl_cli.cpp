// linefl command-line driver. Every subcommand is a thin call into the C API;
// the process exit code is the C API status (0 ok, 2 arguments, 3 format,
// 4 reference, 5 numeric).

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "linefl/linefl.h"

namespace {

struct AdapterFlags {
  linefl_adapter_options opts{};
  std::string positional = "sinusoidal";

  void attach(CLI::App* cmd) {
    linefl_adapter_options_default(&opts);
    cmd->add_option("--model-dim", opts.model_dim, "Adapter width d")->capture_default_str();
    cmd->add_option("--layers", opts.n_layers, "Bidirectional layers (0 = linear probe)")->capture_default_str();
    cmd->add_option("--heads", opts.n_heads, "Attention heads")->capture_default_str();
    cmd->add_option("--ff-multiplier", opts.ff_multiplier, "Feed-forward width multiplier")->capture_default_str();
    cmd->add_option("--dropout", opts.dropout, "Dropout rate during training")->capture_default_str();
    cmd->add_option("--positional", positional, "Positional encoding")
        ->check(CLI::IsMember({"sinusoidal", "learned", "none"}))
        ->capture_default_str();
    cmd->add_option("--window", opts.window, "Lines per window W")->capture_default_str();
  }

  const linefl_adapter_options* resolve() {
    opts.positional = positional == "learned" ? LINEFL_POS_LEARNED
                      : positional == "none"  ? LINEFL_POS_NONE
                                              : LINEFL_POS_SINUSOIDAL;
    return &opts;
  }
};

struct TrainFlags {
  linefl_train_options opts{};
  double lr_override = -1.0;
  bool resample = false;

  void attach(CLI::App* cmd) {
    linefl_train_options_default(&opts);
    cmd->add_option("--max-lr", opts.max_lr)->capture_default_str();
    cmd->add_option("--min-lr", opts.min_lr)->capture_default_str();
    cmd->add_option("--warmup-steps", opts.warmup_steps)->capture_default_str();
    cmd->add_option("--decay-steps", opts.decay_steps)->capture_default_str();
    cmd->add_option("--batch-size", opts.batch_size)->capture_default_str();
    cmd->add_option("--epochs", opts.max_epochs, "Maximum epochs")->capture_default_str();
    cmd->add_option("--patience", opts.patience_epochs, "Epochs without improvement before stopping")
        ->capture_default_str();
    cmd->add_option("--seed", opts.seed)->capture_default_str();
    cmd->add_option("--threshold", opts.threshold, "Probability threshold for validation precision/recall")
        ->capture_default_str();
    cmd->add_option("--lr", lr_override, "Constant learning rate instead of the schedule");
    cmd->add_flag("--resample-windows", resample, "Redraw window offsets every epoch");
    cmd->add_option("--overlap", opts.tile_overlap, "Inference tile overlap")->capture_default_str();
  }

  const linefl_train_options* resolve() {
    opts.has_lr_override = lr_override >= 0.0;
    opts.lr_override = lr_override >= 0.0 ? lr_override : 0.0;
    opts.resample_windows = resample ? 1 : 0;
    return &opts;
  }
};

int report(linefl_status status) {
  if (status != LINEFL_OK) {
    std::fprintf(stderr, "linefl: error category=%s code=%d: %s\n", linefl_status_name(status),
                 static_cast<int>(status), linefl_last_error());
  }
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Line-level fault localization over frozen encoder states"};
  app.require_subcommand(1);
  app.set_version_flag("--version", linefl_version());

  // synth
  auto* synth = app.add_subcommand("synth", "Generate the planted-signal synthetic corpus");
  std::string synth_out;
  linefl_synth_options synth_opts{};
  linefl_synth_options_default(&synth_opts);
  bool synth_random = false;
  synth->add_option("out_dir", synth_out, "Output directory (src/ and diffs/ are created)")->required();
  synth->add_option("--docs", synth_opts.docs)->capture_default_str();
  synth->add_option("--min-lines", synth_opts.min_lines)->capture_default_str();
  synth->add_option("--max-lines", synth_opts.max_lines)->capture_default_str();
  synth->add_option("--min-faulty", synth_opts.min_faulty)->capture_default_str();
  synth->add_option("--max-faulty", synth_opts.max_faulty)->capture_default_str();
  synth->add_option("--seed", synth_opts.seed)->capture_default_str();
  synth->add_flag("--random-labels", synth_random, "Label random lines instead of the planted ones");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Label sources from bug-fixing diffs and write a manifest");
  std::string src_dir, diffs_dir, manifest_out;
  int ingest_folds = 0;
  std::uint64_t ingest_seed = 0;
  ingest->add_option("src_dir", src_dir)->required()->check(CLI::ExistingDirectory);
  ingest->add_option("diffs_dir", diffs_dir)->required();
  ingest->add_option("out_manifest", manifest_out)->required();
  ingest->add_option("--folds", ingest_folds, "Assign k folds (0 = none)")->capture_default_str();
  ingest->add_option("--seed", ingest_seed)->capture_default_str();

  // encode
  auto* encode = app.add_subcommand("encode", "Write one state file per manifest record");
  std::string enc_manifest, enc_out, encoder = "mock";
  std::uint32_t enc_dim = 64;
  std::uint64_t enc_seed = 0;
  encode->add_option("manifest", enc_manifest)->required();
  encode->add_option("out_dir", enc_out)->required();
  encode->add_option("--encoder", encoder, "mock, or file for states written by the external extractor")
      ->check(CLI::IsMember({"mock", "file"}))
      ->capture_default_str();
  encode->add_option("--dim", enc_dim, "State dimension D")->capture_default_str();
  encode->add_option("--seed", enc_seed)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train an adapter and write the best checkpoint");
  std::string tr_manifest, tr_states, tr_ckpt, tr_history;
  int val_fold = 0;
  AdapterFlags tr_adapter;
  TrainFlags tr_train;
  train->add_option("manifest", tr_manifest)->required();
  train->add_option("states_dir", tr_states)->required();
  train->add_option("out_ckpt", tr_ckpt)->required();
  train->add_option("--val-fold", val_fold, "Fold held out for early stopping")->capture_default_str();
  train->add_option("--history", tr_history, "Write per-epoch history (JSON lines)");
  tr_adapter.attach(train);
  tr_train.attach(train);

  // crossval
  auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation with per-fold reports");
  std::string cv_manifest, cv_states, cv_out;
  int cv_k = 10;
  unsigned cv_jobs = 1;
  AdapterFlags cv_adapter;
  TrainFlags cv_train;
  crossval->add_option("manifest", cv_manifest)->required();
  crossval->add_option("states_dir", cv_states)->required();
  crossval->add_option("out_dir", cv_out)->required();
  crossval->add_option("--k", cv_k, "Folds; must match the manifest's fold tags when it has them")->capture_default_str();
  crossval->add_option("--jobs", cv_jobs, "Parallel fold workers")->capture_default_str();
  cv_adapter.attach(crossval);
  cv_train.attach(crossval);

  // predict
  auto* predict = app.add_subcommand("predict", "Score every state file with a checkpoint");
  std::string pr_ckpt, pr_states, pr_out;
  std::uint32_t pr_overlap = 0;
  predict->add_option("ckpt", pr_ckpt)->required();
  predict->add_option("states_dir", pr_states)->required();
  predict->add_option("out_scores", pr_out)->required();
  predict->add_option("--overlap", pr_overlap, "Inference tile overlap")->capture_default_str();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Top-N and ROC/AUC of a scores file");
  std::string ev_scores, ev_manifest, ev_out, ev_csv, ev_svg;
  evaluate->add_option("scores", ev_scores)->required();
  evaluate->add_option("manifest", ev_manifest)->required();
  evaluate->add_option("out_report", ev_out)->required();
  evaluate->add_option("--roc-csv", ev_csv, "Write threshold,fpr,tpr");
  evaluate->add_option("--roc-svg", ev_svg, "Write the ROC curve as SVG");

  // ochiai
  auto* ochiai = app.add_subcommand("ochiai", "Ochiai suspiciousness from a coverage matrix");
  std::string och_cov, och_out;
  ochiai->add_option("coverage_file", och_cov)->required();
  ochiai->add_option("out_scores", och_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::fprintf(stderr, "linefl: error category=config code=2: %s\n", e.what());
    return LINEFL_ERR_CONFIG;
  }

  if (*synth) {
    synth_opts.random_labels = synth_random ? 1 : 0;
    return report(linefl_synth(synth_out.c_str(), &synth_opts));
  }
  if (*ingest) {
    return report(linefl_ingest(src_dir.c_str(), diffs_dir.c_str(), manifest_out.c_str(), ingest_folds, ingest_seed));
  }
  if (*encode) {
    if (encoder == "file") {
      std::fprintf(stderr,
                   "linefl: error category=config code=2: --encoder=file states are produced by the external "
                   "extractor; point train/crossval at its output directory instead\n");
      return LINEFL_ERR_CONFIG;
    }
    return report(linefl_encode(enc_manifest.c_str(), enc_out.c_str(), enc_dim, enc_seed));
  }
  if (*train) {
    return report(linefl_train(tr_manifest.c_str(), tr_states.c_str(), tr_ckpt.c_str(), tr_adapter.resolve(),
                               tr_train.resolve(), val_fold, tr_history.empty() ? nullptr : tr_history.c_str()));
  }
  if (*crossval) {
    linefl_report* agg = nullptr;
    const auto status = linefl_crossval(cv_manifest.c_str(), cv_states.c_str(), cv_out.c_str(), cv_k, cv_jobs,
                                        cv_adapter.resolve(), cv_train.resolve(), &agg);
    if (status == LINEFL_OK) {
      double auc = 0.0;
      const bool has_auc = linefl_report_auc(agg, &auc) != 0;
      std::printf("bugs=%u top1=%u top3=%u top5=%u auc=%s\n", linefl_report_total_bugs(agg),
                  linefl_report_top_n(agg, 1), linefl_report_top_n(agg, 3), linefl_report_top_n(agg, 5),
                  has_auc ? std::to_string(auc).c_str() : "undefined");
      linefl_report_free(agg);
    }
    return report(status);
  }
  if (*predict) {
    return report(linefl_predict(pr_ckpt.c_str(), pr_states.c_str(), pr_out.c_str(), pr_overlap));
  }
  if (*evaluate) {
    return report(linefl_evaluate(ev_scores.c_str(), ev_manifest.c_str(), ev_out.c_str(),
                                  ev_csv.empty() ? nullptr : ev_csv.c_str(), ev_svg.empty() ? nullptr : ev_svg.c_str(),
                                  nullptr));
  }
  if (*ochiai) {
    int no_failing = 0;
    const auto status = linefl_ochiai(och_cov.c_str(), och_out.c_str(), &no_failing);
    if (status == LINEFL_OK && no_failing) {
      std::fprintf(stderr, "linefl: warning: no failing tests; all Ochiai scores are 0\n");
    }
    return report(status);
  }
  return LINEFL_ERR_CONFIG;
}
