#include "linefl/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "linefl/error.hpp"

namespace linefl::eval {

LineScores aggregate_tiles(const std::string& doc_id, std::uint32_t line_count, const std::vector<TileScores>& tiles) {
  constexpr double kUnset = -std::numeric_limits<double>::infinity();
  LineScores out{doc_id, std::vector<double>(line_count, kUnset)};
  for (const auto& t : tiles) {
    if (t.spec.start == 0 || t.spec.last() > line_count || t.scores.size() < t.spec.length) {
      throw ReferenceError(doc_id + ": tile [" + std::to_string(t.spec.start) + ", " + std::to_string(t.spec.last()) +
                           "] does not fit the document");
    }
    for (std::uint32_t i = 0; i < t.spec.length; ++i) {
      double& slot = out.scores[t.spec.start - 1 + i];
      slot = std::max(slot, t.scores[i]);
    }
  }
  for (std::uint32_t i = 0; i < line_count; ++i) {
    if (out.scores[i] == kUnset) {
      throw ReferenceError(doc_id + ": line " + std::to_string(i + 1) + " is not covered by any tile");
    }
  }
  return out;
}

std::vector<RankedLine> rank_lines(const LineScores& s) {
  if (s.scores.empty()) throw ConfigError(s.doc_id + ": cannot rank an empty score vector");
  std::vector<RankedLine> ranked;
  ranked.reserve(s.scores.size());
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    ranked.push_back({static_cast<std::uint32_t>(i + 1), s.scores[i], 0});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedLine& a, const RankedLine& b) { return a.score > b.score; });
  std::size_t i = 0;
  while (i < ranked.size()) {
    std::size_t j = i;
    while (j < ranked.size() && ranked[j].score == ranked[i].score) ++j;
    for (std::size_t k = i; k < j; ++k) ranked[k].rank = static_cast<std::uint32_t>(j);
    i = j;
  }
  return ranked;
}

std::uint32_t first_faulty_rank(const std::vector<RankedLine>& ranked, const std::set<std::uint32_t>& faulty) {
  if (faulty.empty()) throw ConfigError("first faulty rank needs at least one faulty line");
  std::uint32_t best = std::numeric_limits<std::uint32_t>::max();
  for (const auto& r : ranked) {
    if (faulty.count(r.line)) best = std::min(best, r.rank);
  }
  if (best == std::numeric_limits<std::uint32_t>::max()) {
    throw ReferenceError("no faulty line appears in the ranking");
  }
  return best;
}

bool top_n(const std::vector<RankedLine>& ranked, const std::set<std::uint32_t>& faulty, std::uint32_t n) {
  return first_faulty_rank(ranked, faulty) <= n;
}

std::vector<RocPoint> roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ConfigError("scores and labels differ in length");
  std::size_t pos = 0;
  for (int l : labels) pos += l != 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw NumericError("ROC is undefined without both positive and negative labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> points{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      if (labels[order[i]] != 0) ++tp;
      else ++fp;
      ++i;
    }
    points.push_back({threshold, static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
  }
  return points;
}

double auc(const std::vector<RocPoint>& points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  }
  return area;
}

double wilcoxon_signed_rank(const std::vector<std::pair<double, double>>& pairs) {
  std::vector<double> diffs;
  for (const auto& [a, b] : pairs) {
    if (a != b) diffs.push_back(a - b);
  }
  const std::size_t n = diffs.size();
  if (n < 5) {
    throw NumericError("Wilcoxon signed-rank test needs at least 5 nonzero differences, got " + std::to_string(n));
  }

  // Doubled average ranks of |d| keep tied ranks integral.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(diffs[a]) < std::abs(diffs[b]);
  });
  std::vector<std::uint64_t> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::abs(diffs[order[j]]) == std::abs(diffs[order[i]])) ++j;
    const std::uint64_t r2 = (i + 1) + j;  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) rank2[order[k]] = r2;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  std::uint64_t w2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (diffs[i] > 0) w2 += rank2[i];
  }

  if (n <= 20) {
    const std::uint64_t total2 = std::accumulate(rank2.begin(), rank2.end(), std::uint64_t{0});
    std::vector<double> ways(total2 + 1, 0.0);
    ways[0] = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::uint64_t s = total2; s + 1 > rank2[i]; --s) ways[s] += ways[s - rank2[i]];
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    double lower = 0.0, upper = 0.0;
    for (std::uint64_t s = 0; s <= total2; ++s) {
      if (s <= w2) lower += ways[s];
      if (s >= w2) upper += ways[s];
    }
    return std::min(1.0, 2.0 * std::min(lower, upper) / all);
  }

  const double nd = static_cast<double>(n);
  const double mean = nd * (nd + 1.0) / 4.0;
  const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
  const double z = (static_cast<double>(w2) / 2.0 - mean) / std::sqrt(var);
  return std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
}

namespace {

void pool(const std::vector<ScoredDoc>& docs, std::vector<double>& scores, std::vector<int>& labels) {
  for (const auto& d : docs) {
    for (std::size_t i = 0; i < d.scores.scores.size(); ++i) {
      scores.push_back(d.scores.scores[i]);
      labels.push_back(d.faulty.count(static_cast<std::uint32_t>(i + 1)) ? 1 : 0);
    }
  }
}

void finish_roc(EvalReport& report, const std::vector<double>& scores, const std::vector<int>& labels) {
  report.pooled_lines = scores.size();
  report.pooled_positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (report.pooled_positives > 0 && report.pooled_positives < report.pooled_lines) {
    report.roc_points = roc(scores, labels);
    report.auc = auc(report.roc_points);
  }
}

}  // namespace

EvalReport evaluate(const std::vector<ScoredDoc>& docs, const std::vector<std::uint32_t>& ns) {
  EvalReport report;
  for (auto n : ns) report.top_n_counts[n] = 0;
  for (const auto& d : docs) {
    if (d.faulty.empty()) continue;
    if (*d.faulty.rbegin() > d.scores.scores.size()) {
      throw ReferenceError(d.scores.doc_id + ": faulty line " + std::to_string(*d.faulty.rbegin()) +
                           " has no score");
    }
    const auto rank = first_faulty_rank(rank_lines(d.scores), d.faulty);
    ++report.total_bugs;
    for (auto n : ns) report.top_n_counts[n] += rank <= n ? 1 : 0;
    report.per_doc.push_back({d.scores.doc_id, rank, static_cast<std::uint32_t>(d.scores.scores.size())});
  }
  std::vector<double> scores;
  std::vector<int> labels;
  pool(docs, scores, labels);
  finish_roc(report, scores, labels);
  return report;
}

EvalReport merge(const std::vector<std::vector<ScoredDoc>>& parts, const std::vector<std::uint32_t>& ns) {
  EvalReport report;
  for (auto n : ns) report.top_n_counts[n] = 0;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& part : parts) {
    EvalReport r = evaluate(part, ns);
    for (const auto& [n, count] : r.top_n_counts) report.top_n_counts[n] += count;
    report.total_bugs += r.total_bugs;
    report.per_doc.insert(report.per_doc.end(), r.per_doc.begin(), r.per_doc.end());
    pool(part, scores, labels);
  }
  finish_roc(report, scores, labels);
  return report;
}

std::vector<ScoredDoc> join_labels(const std::vector<LineScores>& scores, const corpus::DatasetManifest& manifest) {
  std::vector<ScoredDoc> out;
  for (const auto& s : scores) {
    const auto* rec = manifest.find(s.doc_id);
    if (!rec) throw ReferenceError("scores refer to unknown document " + s.doc_id);
    auto faulty = rec->labels().faulty_lines;
    if (!faulty.empty() && *faulty.rbegin() > s.scores.size()) {
      throw ReferenceError(s.doc_id + ": faulty line " + std::to_string(*faulty.rbegin()) + " but only " +
                           std::to_string(s.scores.size()) + " scored lines");
    }
    out.push_back({s, std::move(faulty)});
  }
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void write_scores(const std::vector<LineScores>& scores, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReferenceError("cannot write scores " + path.string());
  for (const auto& s : scores) {
    if (s.doc_id.find_first_of("\t\n") != std::string::npos) {
      throw ConfigError("document id contains a tab or newline: " + s.doc_id);
    }
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
      out << s.doc_id << '\t' << (i + 1) << '\t' << format_double(s.scores[i]) << '\n';
    }
  }
  if (!out) throw ReferenceError("failed writing scores " + path.string());
}

std::vector<LineScores> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReferenceError("cannot open scores " + path.string());
  std::vector<LineScores> out;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw FormatError(where + ": expected doc_id<TAB>line<TAB>score");
    const std::string doc = line.substr(0, t1);
    std::uint32_t lno = 0;
    double score = 0.0;
    const char* b1 = line.data() + t1 + 1;
    const char* e1 = line.data() + t2;
    const char* b2 = line.data() + t2 + 1;
    const char* e2 = line.data() + line.size();
    auto r1 = std::from_chars(b1, e1, lno);
    auto r2 = std::from_chars(b2, e2, score);
    if (r1.ec != std::errc{} || r1.ptr != e1 || r2.ec != std::errc{} || r2.ptr != e2) {
      throw FormatError(where + ": malformed line number or score");
    }
    if (!std::isfinite(score)) throw FormatError(where + ": non-finite score");
    auto [it, inserted] = index.emplace(doc, out.size());
    if (inserted) out.push_back(LineScores{doc, {}});
    auto& s = out[it->second];
    if (lno != s.scores.size() + 1) {
      throw FormatError(where + ": expected line " + std::to_string(s.scores.size() + 1) + " of " + doc);
    }
    s.scores.push_back(score);
  }
  return out;
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json top = nlohmann::ordered_json::object();
  for (const auto& [n, count] : report.top_n_counts) top["top" + std::to_string(n)] = count;
  j["top_n_counts"] = top;
  j["total_bugs"] = report.total_bugs;
  j["auc"] = report.auc ? nlohmann::ordered_json(*report.auc) : nlohmann::ordered_json(nullptr);
  j["pooled_lines"] = report.pooled_lines;
  j["pooled_positives"] = report.pooled_positives;
  auto& per_doc = j["per_doc"] = nlohmann::ordered_json::array();
  for (const auto& d : report.per_doc) {
    per_doc.push_back({{"doc_id", d.doc_id}, {"first_faulty_rank", d.first_faulty_rank}, {"lines", d.line_count}});
  }
  auto& pts = j["roc_points"] = nlohmann::ordered_json::array();
  for (const auto& p : report.roc_points) {
    nlohmann::ordered_json thr = std::isinf(p.threshold) ? nlohmann::ordered_json(nullptr)
                                                         : nlohmann::ordered_json(p.threshold);
    pts.push_back({{"threshold", thr}, {"fpr", p.fpr}, {"tpr", p.tpr}});
  }
  return j.dump(2) + "\n";
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReferenceError("cannot write report " + path.string());
  out << report_json(report);
}

void write_roc_csv(const std::vector<RocPoint>& points, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReferenceError("cannot write ROC csv " + path.string());
  out << "threshold,fpr,tpr\n";
  for (const auto& p : points) {
    out << (std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold)) << ','
        << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
  }
}

void write_roc_svg(const std::vector<RocPoint>& points, std::optional<double> area, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReferenceError("cannot write ROC svg " + path.string());
  constexpr int kSize = 400, kPad = 40;
  auto x = [](double fpr) { return kPad + fpr * (kSize - 2 * kPad); };
  auto y = [](double tpr) { return kSize - kPad - tpr * (kSize - 2 * kPad); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize << "\">\n";
  out << "<rect x=\"" << kPad << "\" y=\"" << kPad << "\" width=\"" << kSize - 2 * kPad << "\" height=\""
      << kSize - 2 * kPad << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << x(0) << "\" y1=\"" << y(0) << "\" x2=\"" << x(1) << "\" y2=\"" << y(1)
      << "\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n";
  out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < points.size(); ++i) {
    out << (i ? " " : "") << format_double(x(points[i].fpr)) << ',' << format_double(y(points[i].tpr));
  }
  out << "\"/>\n";
  out << "<text x=\"" << kPad << "\" y=\"" << kSize - 10 << "\" font-size=\"12\">FPR</text>\n";
  out << "<text x=\"5\" y=\"" << kPad - 10 << "\" font-size=\"12\">TPR</text>\n";
  if (area) {
    out << "<text x=\"" << kSize / 2 << "\" y=\"" << kPad - 10 << "\" font-size=\"12\">AUC = " << format_double(*area)
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace linefl::eval
