#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace linefl::corpus {

inline constexpr int kManifestSchemaVersion = 1;

/// A source file split into logical lines. A final line without a trailing
/// newline still counts as a line.
struct SourceDocument {
  std::string id;
  std::string path;
  std::vector<std::string> lines;

  std::size_t line_count() const { return lines.size(); }
};

/// Faulty lines of one document, 1-based.
struct LineLabels {
  std::string doc_id;
  std::set<std::uint32_t> faulty_lines;
};

struct ManifestRecord {
  std::string id;
  std::string path;
  std::vector<std::uint32_t> faulty_lines;  // sorted, unique, 1-based
  std::optional<int> fold;
  int schema_version = kManifestSchemaVersion;
  // Fields carried by records written under another schema version.
  nlohmann::json extra = nlohmann::json::object();

  /// Records without faulty lines are kept but skipped for training.
  bool flagged() const { return faulty_lines.empty(); }
  LineLabels labels() const;
};

struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  std::vector<ManifestRecord> records;

  const ManifestRecord* find(std::string_view id) const;
  bool has_folds() const;
  int fold_count() const;
};

std::vector<std::string> split_lines(std::string_view text);
SourceDocument load_document(const std::string& id, const std::filesystem::path& path);

/// Pre-fix line numbers touched by a unified diff. Deleted and modified
/// lines are reported directly; an insertion-only change reports the pre-fix
/// line it follows (clamped to [1, line_count] when a line count is given).
std::set<std::uint32_t> parse_unified_diff(std::string_view diff_text,
                                           std::optional<std::size_t> line_count = std::nullopt);

DatasetManifest build_manifest(const std::vector<SourceDocument>& docs,
                               const std::map<std::string, std::string>& diffs);

DatasetManifest assign_folds(const DatasetManifest& manifest, int k, std::uint64_t seed);

void validate(const DatasetManifest& manifest);

std::string to_jsonl(const DatasetManifest& manifest);
DatasetManifest from_jsonl(std::string_view text, const std::string& source = "<manifest>");

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace linefl::corpus
