#include "linefl/sbfl.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "linefl/error.hpp"

namespace linefl::sbfl {

void CoverageMatrix::validate() const {
  if (covered.size() != static_cast<std::size_t>(tests) * lines || outcomes.size() != tests) {
    throw ConfigError(doc_id + ": coverage matrix dimensions are inconsistent");
  }
}

OchiaiResult ochiai(const CoverageMatrix& cov) {
  cov.validate();
  std::uint32_t total_failed = 0;
  for (auto o : cov.outcomes) total_failed += o == Outcome::Fail;

  OchiaiResult result;
  result.scores.doc_id = cov.doc_id;
  result.scores.scores.assign(cov.lines, 0.0);
  result.no_failing_tests = total_failed == 0;
  if (result.no_failing_tests) return result;

  for (std::uint32_t l = 0; l < cov.lines; ++l) {
    std::uint32_t ef = 0, ep = 0;
    for (std::uint32_t t = 0; t < cov.tests; ++t) {
      if (!cov.covers(t, l)) continue;
      if (cov.outcomes[t] == Outcome::Fail) ++ef;
      else ++ep;
    }
    const std::uint32_t nf = total_failed - ef;
    const double denom = std::sqrt(static_cast<double>(ef + ep) * static_cast<double>(ef + nf));
    result.scores.scores[l] = denom == 0.0 ? 0.0 : ef / denom;
  }
  return result;
}

CoverageMatrix parse_coverage(std::string_view text, const std::string& doc_id) {
  const auto rows = corpus::split_lines(text);
  std::size_t i = 0;
  while (i < rows.size() && rows[i].empty()) ++i;
  if (i == rows.size()) throw FormatError(doc_id + ": empty coverage file");

  CoverageMatrix cov;
  cov.doc_id = doc_id;
  {
    std::istringstream header(rows[i]);
    std::string a, b, extra;
    header >> a >> b;
    auto field = [&](const std::string& tok, std::string_view key) -> std::uint32_t {
      if (tok.rfind(key, 0) != 0) throw FormatError(doc_id + ": expected header 'tests=T lines=M'");
      std::uint32_t v = 0;
      auto res = std::from_chars(tok.data() + key.size(), tok.data() + tok.size(), v);
      if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
        throw FormatError(doc_id + ": bad number in coverage header");
      }
      return v;
    };
    cov.tests = field(a, "tests=");
    cov.lines = field(b, "lines=");
    if (header >> extra) throw FormatError(doc_id + ": trailing text in coverage header");
  }
  ++i;

  cov.covered.reserve(static_cast<std::size_t>(cov.tests) * cov.lines);
  std::uint32_t seen = 0;
  for (; i < rows.size(); ++i) {
    const std::string& row = rows[i];
    if (row.empty()) continue;
    const std::string where = doc_id + ": coverage row " + std::to_string(seen + 1);
    if (seen == cov.tests) throw FormatError(where + " exceeds declared test count");
    const auto bar = row.find('|');
    if (bar != cov.lines) throw FormatError(where + " must have " + std::to_string(cov.lines) + " coverage bits");
    for (std::size_t k = 0; k < bar; ++k) {
      if (row[k] != '0' && row[k] != '1') throw FormatError(where + " has a non-binary coverage bit");
      cov.covered.push_back(row[k] == '1');
    }
    const std::string outcome = row.substr(bar + 1);
    if (outcome == "pass") cov.outcomes.push_back(Outcome::Pass);
    else if (outcome == "fail") cov.outcomes.push_back(Outcome::Fail);
    else throw FormatError(where + " outcome must be 'pass' or 'fail'");
    ++seen;
  }
  if (seen != cov.tests) {
    throw FormatError(doc_id + ": declared " + std::to_string(cov.tests) + " tests, found " + std::to_string(seen));
  }
  return cov;
}

CoverageMatrix read_coverage(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReferenceError("cannot open coverage file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_coverage(buf.str(), path.stem().string());
}

}  // namespace linefl::sbfl
