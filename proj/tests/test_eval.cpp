#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "linefl/error.hpp"
#include "linefl/eval.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace linefl;
using namespace linefl::eval;

namespace {

std::vector<std::uint32_t> ranks_of(const std::vector<double>& scores) {
  const auto ranked = rank_lines({"d", scores});
  std::vector<std::uint32_t> out(scores.size());
  for (const auto& r : ranked) out[r.line - 1] = r.rank;
  return out;
}

}  // namespace

TEST_CASE("rank_lines: worst-rank ties") {
  CHECK(ranks_of({0.9, 0.9, 0.1}) == std::vector<std::uint32_t>{2, 2, 3});
  CHECK(ranks_of({0.1, 0.5, 0.3, 0.9}) == std::vector<std::uint32_t>{4, 2, 3, 1});
  CHECK(ranks_of({0.4, 0.4, 0.4, 0.4}) == std::vector<std::uint32_t>{4, 4, 4, 4});
  const auto ranked = rank_lines({"d", {0.2, 0.7, 0.7}});
  CHECK(ranked[0].line == 2);  // ties listed by line number
  CHECK(ranked[1].line == 3);
  CHECK_THROWS(rank_lines({"d", {}}));
}

TEST_CASE("rank_lines property: matches the definition and ordering ties never helps") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
    std::vector<double> s(m);
    for (auto& x : s) x = std::uniform_int_distribution<int>(0, 5)(rng) / 5.0;
    const auto r = ranks_of(s);
    for (std::size_t i = 0; i < m; ++i) {
      // Worst rank = number of lines scoring at least as high.
      const auto expect = std::count_if(s.begin(), s.end(), [&](double x) { return x >= s[i]; });
      REQUIRE(r[i] == static_cast<std::uint32_t>(expect));
    }
    // Break ties with tiny distinct offsets: every rank can only improve.
    auto broken = s;
    for (std::size_t i = 0; i < m; ++i) broken[i] += 1e-9 * static_cast<double>(i);
    const auto rb = ranks_of(broken);
    for (std::size_t i = 0; i < m; ++i) REQUIRE(rb[i] <= r[i]);
  }
}

TEST_CASE("top_n") {
  const auto ranked = rank_lines({"d", {0.9, 0.1, 0.2, 0.3, 0.8, 0.7}});
  CHECK(top_n(ranked, {1}, 1));
  // Line 4 has rank 4.
  CHECK(first_faulty_rank(ranked, {4}) == 4);
  CHECK_FALSE(top_n(ranked, {4}, 3));
  CHECK(top_n(ranked, {4}, 5));
  CHECK(first_faulty_rank(ranked, {2, 4}) == 4);
}

TEST_CASE("top-N counts over many documents") {
  // 395 bugs where exactly 183 put a faulty line in the first five.
  std::vector<ScoredDoc> docs;
  for (int i = 0; i < 395; ++i) {
    ScoredDoc d;
    d.scores.doc_id = "bug" + std::to_string(i);
    for (int l = 0; l < 20; ++l) d.scores.scores.push_back(1.0 - l * 0.01);
    d.faulty = {static_cast<std::uint32_t>(i < 183 ? 1 + i % 5 : 6 + i % 10)};
    docs.push_back(d);
  }
  const auto rep = evaluate(docs);
  CHECK(rep.total_bugs == 395);
  CHECK(rep.top_n_counts.at(5) == 183);
  CHECK(rep.top_n_counts.at(1) <= rep.top_n_counts.at(3));
  CHECK(rep.top_n_counts.at(3) <= rep.top_n_counts.at(5));
}

TEST_CASE("roc and auc: examples") {
  CHECK(auc(roc({0.9, 0.8, 0.3, 0.1}, {1, 1, 0, 0})) == 1.0);
  CHECK(auc(roc({0.9, 0.8, 0.3}, {1, 0, 1})) == 0.5);
  CHECK(auc(roc({0.5, 0.5}, {1, 0})) == 0.5);
  CHECK_THROWS_AS(roc({0.1, 0.2}, {1, 1}), NumericError);
  CHECK_THROWS_AS(roc({0.1, 0.2}, {0, 0}), NumericError);

  const auto pts = roc({0.9, 0.8, 0.3}, {1, 0, 1});
  REQUIRE(pts.size() == 4);
  CHECK(std::isinf(pts[0].threshold));
  CHECK(pts[0].fpr == 0.0);
  CHECK(pts[0].tpr == 0.0);
  CHECK(pts.back().fpr == 1.0);
  CHECK(pts.back().tpr == 1.0);
}

TEST_CASE("auc property: equals the pairwise estimator with ties counted as one half") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 200)(rng);
    const int levels = std::uniform_int_distribution<int>(2, 50)(rng);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::uniform_int_distribution<int>(0, levels)(rng) / static_cast<double>(levels);
      y[i] = std::bernoulli_distribution(0.3)(rng) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    REQUIRE(auc(roc(s, y)) == doctest::Approx(oracle::pairwise_auc(s, y)).epsilon(1e-12));
  }
}

TEST_CASE("auc property: invariant under strictly monotone transforms") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(150), t(150);
    std::vector<int> y(150);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = std::uniform_real_distribution<double>(-3, 3)(rng);
      if (i % 7 == 0 && i > 0) s[i] = s[i - 1];  // keep some ties
      t[i] = std::exp(2.0 * s[i]) + 5.0;
      y[i] = std::bernoulli_distribution(0.4)(rng);
    }
    y[0] = 1;
    y[1] = 0;
    REQUIRE(auc(roc(s, y)) == doctest::Approx(auc(roc(t, y))).epsilon(1e-12));
  }
}

TEST_CASE("auc under shuffled labels stays near 0.5") {
  std::mt19937_64 rng(4);
  std::vector<double> s(10000);
  std::vector<int> y(10000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = std::uniform_real_distribution<double>(0, 1)(rng);
    y[i] = i < 1000 ? 1 : 0;
  }
  std::shuffle(y.begin(), y.end(), rng);
  CHECK(std::abs(auc(roc(s, y)) - 0.5) < 0.05);
}

TEST_CASE("wilcoxon: exact and symmetric cases") {
  std::vector<std::pair<double, double>> six;
  for (int i = 1; i <= 6; ++i) six.push_back({1.0 + i, 1.0});
  CHECK(wilcoxon_signed_rank(six) == doctest::Approx(0.03125).epsilon(1e-12));

  std::vector<std::pair<double, double>> zeros(8, {1.0, 1.0});
  CHECK_THROWS_AS(wilcoxon_signed_rank(zeros), NumericError);

  std::vector<std::pair<double, double>> mirror;
  for (double d : {0.5, 1.0, 2.0, 3.5}) {
    mirror.push_back({d, 0.0});
    mirror.push_back({0.0, d});
  }
  CHECK(wilcoxon_signed_rank(mirror) == doctest::Approx(1.0));
}

TEST_CASE("wilcoxon: exact path matches sign-flip enumeration") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(5, 14)(rng);
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse values so ties among |d| occur.
      const double a = std::uniform_int_distribution<int>(0, 8)(rng);
      double b = std::uniform_int_distribution<int>(0, 8)(rng);
      if (a == b) b += 1;
      pairs.push_back({a, b});
    }
    REQUIRE(wilcoxon_signed_rank(pairs) == doctest::Approx(oracle::wilcoxon_enumerate(pairs)).epsilon(1e-9));
  }
}

TEST_CASE("wilcoxon: normal approximation is close to exact for n in the 20s") {
  std::mt19937_64 rng(6);
  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < 21; ++i) pairs.push_back({std::uniform_real_distribution<double>(0, 1)(rng) + 0.2, 0.5});
  const double approx = wilcoxon_signed_rank(pairs);
  const double exact = oracle::wilcoxon_enumerate(pairs);
  CHECK(std::abs(approx - exact) < 0.01);
}

TEST_CASE("aggregate_tiles") {
  using windowing::WindowSpec;
  SUBCASE("single tile is identity") {
    const auto s = aggregate_tiles("d", 3, {{{"d", 1, 3}, {0.1, 0.2, 0.3}}});
    CHECK(s.scores == std::vector<double>{0.1, 0.2, 0.3});
  }
  SUBCASE("overlap takes the maximum") {
    std::vector<TileScores> tiles = {{{"d", 1, 64}, std::vector<double>(64, 0.2)},
                                     {{"d", 64, 10}, std::vector<double>(10, 0.7)}};
    tiles[1].scores[1] = 0.1;
    const auto s = aggregate_tiles("d", 73, tiles);
    CHECK(s.scores[62] == 0.2);
    CHECK(s.scores[63] == 0.7);
    CHECK(s.scores[64] == 0.1);
  }
  SUBCASE("uncovered line") {
    CHECK_THROWS_AS(aggregate_tiles("d", 5, {{{"d", 1, 3}, {0.1, 0.2, 0.3}}}), ReferenceError);
  }
  SUBCASE("random tilings against a brute-force maximum") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 300; ++trial) {
      const std::uint32_t m = std::uniform_int_distribution<std::uint32_t>(1, 80)(rng);
      std::vector<TileScores> tiles;
      std::vector<double> expect(m, -1.0);
      // A covering pass plus random extra tiles.
      for (std::uint32_t s = 1; s <= m;) {
        const std::uint32_t len = std::min(m - s + 1, std::uniform_int_distribution<std::uint32_t>(1, 16)(rng));
        tiles.push_back({{"d", s, len}, {}});
        s += len;
      }
      for (int extra = 0; extra < 5; ++extra) {
        const std::uint32_t s = std::uniform_int_distribution<std::uint32_t>(1, m)(rng);
        const std::uint32_t len = std::uniform_int_distribution<std::uint32_t>(1, m - s + 1)(rng);
        tiles.push_back({{"d", s, len}, {}});
      }
      for (auto& t : tiles) {
        for (std::uint32_t i = 0; i < t.spec.length; ++i) {
          const double v = std::uniform_real_distribution<double>(0, 1)(rng);
          t.scores.push_back(v);
          expect[t.spec.start - 1 + i] = std::max(expect[t.spec.start - 1 + i], v);
        }
      }
      std::shuffle(tiles.begin(), tiles.end(), rng);
      REQUIRE(aggregate_tiles("d", m, tiles).scores == expect);
    }
  }
}

TEST_CASE("evaluate and merge") {
  std::vector<ScoredDoc> a = {{{"a", {0.9, 0.1, 0.2}}, {1}}, {{"b", {0.1, 0.2, 0.3, 0.4}}, {1}}};
  std::vector<ScoredDoc> b = {{{"c", {0.5, 0.6}}, {}}, {{"d", {0.3, 0.2}}, {2}}};
  const auto ra = evaluate(a);
  const auto rb = evaluate(b);
  const auto merged = merge({a, b});
  CHECK(merged.total_bugs == ra.total_bugs + rb.total_bugs);
  for (auto n : kDefaultTopN) CHECK(merged.top_n_counts.at(n) == ra.top_n_counts.at(n) + rb.top_n_counts.at(n));
  CHECK(merged.pooled_lines == 11);
  CHECK(merged.pooled_positives == 3);
  REQUIRE(merged.auc.has_value());

  std::vector<double> s;
  std::vector<int> y;
  for (const auto* part : {&a, &b}) {
    for (const auto& d : *part) {
      for (std::size_t i = 0; i < d.scores.scores.size(); ++i) {
        s.push_back(d.scores.scores[i]);
        y.push_back(d.faulty.count(static_cast<std::uint32_t>(i + 1)) ? 1 : 0);
      }
    }
  }
  CHECK(*merged.auc == doctest::Approx(oracle::pairwise_auc(s, y)));

  // Single-class pools leave AUC undefined but still report Top-N.
  const auto single = evaluate({{{"x", {0.3, 0.2}}, {}}});
  CHECK_FALSE(single.auc.has_value());
  CHECK(single.total_bugs == 0);
}

TEST_CASE("join_labels") {
  corpus::DatasetManifest m;
  corpus::ManifestRecord r;
  r.id = "a";
  r.path = "a";
  r.faulty_lines = {2};
  m.records.push_back(r);
  const auto joined = join_labels({{"a", {0.1, 0.9}}}, m);
  REQUIRE(joined.size() == 1);
  CHECK(joined[0].faulty == std::set<std::uint32_t>{2});
  CHECK_THROWS_AS(join_labels({{"zzz", {0.1}}}, m), ReferenceError);
  CHECK_THROWS_AS(join_labels({{"a", {0.1}}}, m), ReferenceError);  // label beyond the scored lines
}

TEST_CASE("scores file, report and ROC files") {
  test::TempDir dir;
  const std::vector<LineScores> scores = {{"a/B.java", {0.1, 1.0 / 3.0, 0.999999999999}}, {"c", {0.5}}};
  write_scores(scores, dir.path / "s.tsv");
  const auto back = read_scores(dir.path / "s.tsv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].doc_id == "a/B.java");
  CHECK(back[0].scores == scores[0].scores);  // shortest round-trip formatting
  CHECK(back[1].scores == scores[1].scores);

  test::spit(dir.path / "bad.tsv", "a\t1\tnan\n");
  CHECK_THROWS_AS(read_scores(dir.path / "bad.tsv"), FormatError);
  test::spit(dir.path / "gap.tsv", "a\t1\t0.1\na\t3\t0.2\n");
  CHECK_THROWS_AS(read_scores(dir.path / "gap.tsv"), FormatError);

  const auto rep = evaluate({{{"a", {0.9, 0.1, 0.2}}, {1}}, {{"b", {0.1, 0.2}}, {1}}});
  const auto json = report_json(rep);
  for (const char* key : {"\"top_n_counts\"", "\"top1\"", "\"top3\"", "\"top5\"", "\"auc\"", "\"total_bugs\""}) {
    CHECK(json.find(key) != std::string::npos);
  }
  write_roc_csv(rep.roc_points, dir.path / "roc.csv");
  const auto csv = test::slurp(dir.path / "roc.csv");
  CHECK(csv.rfind("threshold,fpr,tpr\ninf,0,0\n", 0) == 0);
  write_roc_svg(rep.roc_points, rep.auc, dir.path / "roc.svg");
  CHECK(test::slurp(dir.path / "roc.svg").find("<svg") != std::string::npos);
}
