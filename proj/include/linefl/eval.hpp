#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "linefl/corpus.hpp"
#include "linefl/windowing.hpp"

namespace linefl::eval {

/// Suspiciousness per line; scores[0] is line 1.
struct LineScores {
  std::string doc_id;
  std::vector<double> scores;
};

/// Scores of one inference tile, aligned to `spec`.
struct TileScores {
  windowing::WindowSpec spec;
  std::vector<double> scores;
};

/// Per-line maximum over the tiles covering it.
LineScores aggregate_tiles(const std::string& doc_id, std::uint32_t line_count, const std::vector<TileScores>& tiles);

struct RankedLine {
  std::uint32_t line;  // 1-based
  double score;
  std::uint32_t rank;  // 1-based, worst rank within a tie group
};

/// Descending by score; tied lines share the largest rank of their group and
/// are listed by line number.
std::vector<RankedLine> rank_lines(const LineScores& s);

/// Smallest rank among the faulty lines.
std::uint32_t first_faulty_rank(const std::vector<RankedLine>& ranked, const std::set<std::uint32_t>& faulty);
bool top_n(const std::vector<RankedLine>& ranked, const std::set<std::uint32_t>& faulty, std::uint32_t n);

struct RocPoint {
  double threshold;  // predict positive when score >= threshold
  double fpr;
  double tpr;
  bool operator==(const RocPoint&) const = default;
};

/// One point per distinct score plus the (0, 0) origin at +inf.
std::vector<RocPoint> roc(const std::vector<double>& scores, const std::vector<int>& labels);
/// Trapezoidal area under the curve.
double auc(const std::vector<RocPoint>& points);

/// Two-sided p-value. Exact for at most 20 nonzero differences, normal
/// approximation with tie correction above that.
double wilcoxon_signed_rank(const std::vector<std::pair<double, double>>& pairs);

inline const std::vector<std::uint32_t> kDefaultTopN = {1, 3, 5};

struct DocRank {
  std::string doc_id;
  std::uint32_t first_faulty_rank;
  std::uint32_t line_count;
};

struct EvalReport {
  std::map<std::uint32_t, std::uint32_t> top_n_counts;
  std::uint32_t total_bugs = 0;
  std::vector<RocPoint> roc_points;
  std::optional<double> auc;  // absent when the pooled labels are single-class
  std::size_t pooled_lines = 0;
  std::size_t pooled_positives = 0;
  std::vector<DocRank> per_doc;
};

struct ScoredDoc {
  LineScores scores;
  std::set<std::uint32_t> faulty;
};

/// Top-N over documents with at least one faulty line; ROC/AUC pooled over
/// every line of every document.
EvalReport evaluate(const std::vector<ScoredDoc>& docs, const std::vector<std::uint32_t>& ns = kDefaultTopN);

/// Sums Top-N counts and pools ROC inputs across partial results.
EvalReport merge(const std::vector<std::vector<ScoredDoc>>& parts, const std::vector<std::uint32_t>& ns = kDefaultTopN);

/// Pairs each scored document with its manifest labels; unknown ids are a
/// reference error.
std::vector<ScoredDoc> join_labels(const std::vector<LineScores>& scores, const corpus::DatasetManifest& manifest);

// Scores file: one "doc_id<TAB>line<TAB>score" row per line.
void write_scores(const std::vector<LineScores>& scores, const std::filesystem::path& path);
std::vector<LineScores> read_scores(const std::filesystem::path& path);

std::string report_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& path);
void write_roc_csv(const std::vector<RocPoint>& points, const std::filesystem::path& path);
void write_roc_svg(const std::vector<RocPoint>& points, std::optional<double> auc, const std::filesystem::path& path);

}  // namespace linefl::eval
