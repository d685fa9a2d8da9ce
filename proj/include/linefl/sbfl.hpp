#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "linefl/eval.hpp"

namespace linefl::sbfl {

enum class Outcome : std::uint8_t { Pass, Fail };

/// Test-by-line coverage for one document.
struct CoverageMatrix {
  std::string doc_id;
  std::uint32_t tests = 0;
  std::uint32_t lines = 0;
  std::vector<std::uint8_t> covered;  // tests x lines, row-major 0/1
  std::vector<Outcome> outcomes;      // one per test

  bool covers(std::uint32_t test, std::uint32_t line0) const {
    return covered[static_cast<std::size_t>(test) * lines + line0] != 0;
  }
  void validate() const;
};

struct OchiaiResult {
  eval::LineScores scores;
  bool no_failing_tests = false;  // every score is then 0
};

/// ef / sqrt((ef + ep) * (ef + nf)) per line, 0 when the denominator is 0.
OchiaiResult ochiai(const CoverageMatrix& cov);

/// Header "tests=T lines=M", then T rows of M '0'/'1' characters followed by
/// "|pass" or "|fail".
CoverageMatrix parse_coverage(std::string_view text, const std::string& doc_id);
CoverageMatrix read_coverage(const std::filesystem::path& path);

}  // namespace linefl::sbfl
