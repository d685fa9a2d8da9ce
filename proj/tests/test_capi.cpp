#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "linefl/linefl.h"

namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path path;
  Scratch() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("linefl_capi_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

linefl_adapter_options tiny_adapter() {
  linefl_adapter_options a;
  linefl_adapter_options_default(&a);
  a.model_dim = 16;
  a.n_layers = 1;
  a.n_heads = 2;
  a.window = 16;
  a.dropout = 0.0;
  return a;
}

linefl_train_options quick_train() {
  linefl_train_options t;
  linefl_train_options_default(&t);
  t.max_lr = 3e-3;
  t.min_lr = 1e-5;
  t.warmup_steps = 10;
  t.decay_steps = 500;
  t.batch_size = 4;
  t.max_epochs = 3;
  t.patience_epochs = 3;
  return t;
}

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::string(linefl_status_name(LINEFL_OK)) == "ok");
  CHECK(std::string(linefl_status_name(LINEFL_ERR_REFERENCE)) == "reference");
  CHECK(std::string(linefl_status_name(LINEFL_ERR_NUMERIC)) == "numeric");
  CHECK(std::string(linefl_version()).size() > 0);
}

TEST_CASE("lr_at through the C API") {
  linefl_train_options t;
  linefl_train_options_default(&t);
  CHECK(linefl_lr_at(0, &t) == 0.0);
  CHECK(linefl_lr_at(1000, &t) == 1e-4);
  CHECK(linefl_lr_at(20000, &t) == 1e-7);
  t.has_lr_override = 1;
  t.lr_override = 0.5;
  CHECK(linefl_lr_at(7, &t) == 0.5);
}

TEST_CASE("state handles: encode, write, read back") {
  Scratch dir;
  const char* lines[] = {"int a = 1;", "int b = a + 1;", "return b;"};
  linefl_states* s = nullptr;
  REQUIRE(linefl_states_encode_mock("X.java", lines, 3, 8, 1, &s) == LINEFL_OK);
  CHECK(linefl_states_rows(s) == 3);
  CHECK(linefl_states_dim(s) == 8);
  CHECK(std::string(linefl_states_encoder_tag(s)) == "mock-causal-v1");
  REQUIRE(linefl_states_write(s, (dir / "X.lnst").c_str()) == LINEFL_OK);

  linefl_states* back = nullptr;
  REQUIRE(linefl_states_read((dir / "X.lnst").c_str(), &back) == LINEFL_OK);
  const float* a = linefl_states_data(s);
  const float* b = linefl_states_data(back);
  for (int i = 0; i < 24; ++i) CHECK(a[i] == b[i]);
  linefl_states_free(back);
  linefl_states_free(s);

  linefl_states* missing = nullptr;
  CHECK(linefl_states_read((dir / "none.lnst").c_str(), &missing) == LINEFL_ERR_REFERENCE);
  CHECK(missing == nullptr);
  CHECK(std::string(linefl_last_error()).find("none.lnst") != std::string::npos);

  std::ofstream(dir / "bad.lnst") << "JUNKJUNKJUNKJUNKJUNK";
  CHECK(linefl_states_read((dir / "bad.lnst").c_str(), &missing) == LINEFL_ERR_FORMAT);
  CHECK(linefl_states_encode_mock("X", lines, 3, 0, 1, &missing) == LINEFL_ERR_CONFIG);
}

TEST_CASE("wilcoxon through the C API") {
  const double a[] = {2, 3, 4, 5, 6, 7};
  const double b[] = {1, 1, 1, 1, 1, 1};
  double p = -1.0;
  REQUIRE(linefl_wilcoxon(a, b, 6, &p) == LINEFL_OK);
  CHECK(p == doctest::Approx(0.03125));
  CHECK(linefl_wilcoxon(a, a, 6, &p) == LINEFL_ERR_NUMERIC);
}

TEST_CASE("pipeline through the C API") {
  Scratch dir;
  linefl_synth_options so;
  linefl_synth_options_default(&so);
  so.docs = 4;
  so.min_lines = 12;
  so.max_lines = 20;
  so.seed = 3;
  REQUIRE(linefl_synth(dir.path.c_str(), &so) == LINEFL_OK);
  REQUIRE(linefl_ingest((dir / "src").c_str(), (dir / "diffs").c_str(), (dir / "m.jsonl").c_str(), 2, 1) ==
          LINEFL_OK);
  REQUIRE(linefl_encode((dir / "m.jsonl").c_str(), (dir / "st").c_str(), 16, 1) == LINEFL_OK);

  const auto adapter = tiny_adapter();
  const auto train = quick_train();
  const auto trained = linefl_train((dir / "m.jsonl").c_str(), (dir / "st").c_str(), (dir / "m.ckpt").c_str(),
                                     &adapter, &train, 0, nullptr);
  INFO(std::string(linefl_last_error()));
  REQUIRE(trained == LINEFL_OK);

  linefl_model* model = nullptr;
  REQUIRE(linefl_model_load((dir / "m.ckpt").c_str(), &model) == LINEFL_OK);
  CHECK(linefl_model_input_dim(model) == 16);
  const char* lines[] = {"a();", "b();", "c();", "d();", "e();"};
  linefl_states* s = nullptr;
  REQUIRE(linefl_states_encode_mock("Y.java", lines, 5, 16, 1, &s) == LINEFL_OK);
  std::vector<double> scores(5, -1.0);
  REQUIRE(linefl_model_predict(model, s, 0, scores.data(), scores.size()) == LINEFL_OK);
  for (double v : scores) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(linefl_model_predict(model, s, 0, scores.data(), 2) == LINEFL_ERR_CONFIG);
  linefl_states_free(s);
  REQUIRE(linefl_states_encode_mock("Z.java", lines, 5, 8, 1, &s) == LINEFL_OK);
  CHECK(linefl_model_predict(model, s, 0, scores.data(), scores.size()) == LINEFL_ERR_CONFIG);
  linefl_states_free(s);
  linefl_model_free(model);

  REQUIRE(linefl_predict((dir / "m.ckpt").c_str(), (dir / "st").c_str(), (dir / "s.tsv").c_str(), 0) == LINEFL_OK);
  linefl_report* report = nullptr;
  REQUIRE(linefl_evaluate((dir / "s.tsv").c_str(), (dir / "m.jsonl").c_str(), (dir / "r.json").c_str(), nullptr,
                          nullptr, &report) == LINEFL_OK);
  CHECK(linefl_report_total_bugs(report) == 4);
  CHECK(linefl_report_top_n(report, 1) <= linefl_report_top_n(report, 5));
  double auc = -1.0;
  CHECK(linefl_report_auc(report, &auc) == 1);
  CHECK(auc >= 0.0);
  CHECK(auc <= 1.0);
  linefl_report_free(report);

  // Scores for a document that is not in the manifest.
  std::ofstream(dir / "unknown.tsv") << "Nope.java\t1\t0.5\n";
  CHECK(linefl_evaluate((dir / "unknown.tsv").c_str(), (dir / "m.jsonl").c_str(), (dir / "u.json").c_str(), nullptr,
                        nullptr, nullptr) == LINEFL_ERR_REFERENCE);
  CHECK(std::string(linefl_last_error()).find("Nope.java") != std::string::npos);

  linefl_report* agg = nullptr;
  REQUIRE(linefl_crossval((dir / "m.jsonl").c_str(), (dir / "st").c_str(), (dir / "cv").c_str(), 2, 1, &adapter,
                          &train, &agg) == LINEFL_OK);
  CHECK(linefl_report_total_bugs(agg) == 4);
  linefl_report_free(agg);
  CHECK(fs::exists(dir.path / "cv" / "aggregate.report.json"));

  auto bad = adapter;
  bad.n_heads = 3;
  CHECK(linefl_train((dir / "m.jsonl").c_str(), (dir / "st").c_str(), (dir / "x.ckpt").c_str(), &bad, &train, 0,
                     nullptr) == LINEFL_ERR_CONFIG);
  CHECK(linefl_train((dir / "m.jsonl").c_str(), (dir / "st").c_str(), (dir / "x.ckpt").c_str(), &adapter, &train, 2,
                     nullptr) == LINEFL_ERR_CONFIG);
}

TEST_CASE("ochiai through the C API") {
  Scratch dir;
  std::ofstream(dir / "N.java.cov") << "tests=7 lines=4\n1110|fail\n1110|fail\n1100|pass\n1100|pass\n"
                                       "1001|pass\n1001|pass\n1001|pass\n";
  int no_fail = -1;
  REQUIRE(linefl_ochiai((dir / "N.java.cov").c_str(), (dir / "o.tsv").c_str(), &no_fail) == LINEFL_OK);
  CHECK(no_fail == 0);
  CHECK(slurp(dir / "o.tsv").find("N.java\t2\t0.7071") != std::string::npos);
  CHECK(linefl_ochiai((dir / "missing.cov").c_str(), (dir / "o.tsv").c_str(), nullptr) == LINEFL_ERR_REFERENCE);
}
