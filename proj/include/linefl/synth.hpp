#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace linefl::synth {

/// Planted-signal corpus: faulty lines call a marker API that no other line
/// uses, so the mock encoder gives them a recognisable state signature.
struct Options {
  std::uint32_t docs = 10;
  std::uint32_t min_lines = 30;
  std::uint32_t max_lines = 60;
  std::uint32_t min_faulty = 1;
  std::uint32_t max_faulty = 3;
  std::uint64_t seed = 0;
  /// Keep the markers but label unrelated random lines instead.
  bool random_labels = false;
};

struct Document {
  std::string id;
  std::vector<std::string> lines;
  std::set<std::uint32_t> faulty;  // 1-based
  std::string diff;                // bug-fixing unified diff against `lines`
};

std::vector<Document> generate(const Options& opts);

/// Writes `<src_dir>/<id>` sources and `<diffs_dir>/<id>.diff` fixes.
void write(const std::vector<Document>& docs, const std::filesystem::path& src_dir,
           const std::filesystem::path& diffs_dir);

}  // namespace linefl::synth
