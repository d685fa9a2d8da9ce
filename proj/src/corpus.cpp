#include "linefl/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>
#include <unordered_set>

#include "linefl/error.hpp"

namespace linefl::corpus {

LineLabels ManifestRecord::labels() const {
  return LineLabels{id, std::set<std::uint32_t>(faulty_lines.begin(), faulty_lines.end())};
}

const ManifestRecord* DatasetManifest::find(std::string_view id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

bool DatasetManifest::has_folds() const {
  return !records.empty() &&
         std::all_of(records.begin(), records.end(), [](const auto& r) { return r.fold.has_value(); });
}

int DatasetManifest::fold_count() const {
  int k = 0;
  for (const auto& r : records) {
    if (r.fold) k = std::max(k, *r.fold + 1);
  }
  return k;
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return lines;
}

SourceDocument load_document(const std::string& id, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReferenceError("cannot open source file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return SourceDocument{id, path.string(), split_lines(buf.str())};
}

namespace {

struct HunkHeader {
  std::uint64_t old_start, old_count, new_start, new_count;
};

HunkHeader parse_hunk_header(const std::string& line, std::size_t hunk_index) {
  static const std::regex re(R"(^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@.*$)");
  std::smatch m;
  if (!std::regex_match(line, m, re)) {
    throw FormatError("malformed hunk header (hunk " + std::to_string(hunk_index) + "): " + line);
  }
  auto num = [&](int i, std::uint64_t fallback) {
    return m[i].matched ? std::stoull(m[i].str()) : fallback;
  };
  return HunkHeader{num(1, 0), num(2, 1), num(3, 0), num(4, 1)};
}

}  // namespace

std::set<std::uint32_t> parse_unified_diff(std::string_view diff_text,
                                           std::optional<std::size_t> line_count) {
  std::set<std::uint32_t> touched;
  const auto lines = split_lines(diff_text);

  auto clamp_anchor = [&](std::uint64_t line) -> std::uint32_t {
    std::uint64_t upper = line_count ? std::max<std::size_t>(*line_count, 1) : line;
    return static_cast<std::uint32_t>(std::clamp<std::uint64_t>(line, 1, std::max<std::uint64_t>(upper, 1)));
  };

  std::size_t i = 0;
  std::size_t hunk_index = 0;
  while (i < lines.size()) {
    const std::string& line = lines[i];
    if (line.rfind("@@", 0) != 0) {
      // File headers and preamble between hunks. A body line here means the
      // previous hunk carried more lines than its header announced.
      bool body_like = !line.empty() && (line[0] == ' ' || (line[0] == '-' && line.rfind("---", 0) != 0) ||
                                         (line[0] == '+' && line.rfind("+++", 0) != 0));
      if (body_like && hunk_index > 0) {
        throw FormatError("hunk " + std::to_string(hunk_index) +
                          " has more lines than its header declares");
      }
      ++i;
      continue;
    }

    ++hunk_index;
    const HunkHeader h = parse_hunk_header(line, hunk_index);
    ++i;

    // A zero old-count hunk inserts after line old_start.
    std::uint64_t old_line = h.old_count == 0 ? h.old_start + 1 : h.old_start;
    std::uint64_t old_seen = 0, new_seen = 0;
    bool run_has_deletion = false;
    bool run_has_insertion = false;
    std::uint64_t run_anchor = 0;

    auto close_run = [&] {
      if (run_has_insertion && !run_has_deletion) touched.insert(clamp_anchor(run_anchor));
      run_has_deletion = run_has_insertion = false;
    };

    while (old_seen < h.old_count || new_seen < h.new_count) {
      if (i >= lines.size()) {
        throw FormatError("hunk " + std::to_string(hunk_index) + " ends before its declared line counts");
      }
      const std::string& body = lines[i];
      char tag = body.empty() ? ' ' : body[0];
      if (body.rfind("\\", 0) == 0) {
        ++i;
        continue;
      }
      if (tag == ' ') {
        close_run();
        ++old_seen;
        ++new_seen;
        ++old_line;
      } else if (tag == '-') {
        if (!run_has_deletion && !run_has_insertion) run_anchor = old_line - 1;
        run_has_deletion = true;
        touched.insert(static_cast<std::uint32_t>(old_line));
        ++old_seen;
        ++old_line;
      } else if (tag == '+') {
        if (!run_has_deletion && !run_has_insertion) run_anchor = old_line - 1;
        run_has_insertion = true;
        ++new_seen;
      } else {
        throw FormatError("hunk " + std::to_string(hunk_index) + " has an invalid body line: " + body);
      }
      if (old_seen > h.old_count || new_seen > h.new_count) {
        throw FormatError("hunk " + std::to_string(hunk_index) + " line counts disagree with its header");
      }
      ++i;
    }
    close_run();
  }
  return touched;
}

DatasetManifest build_manifest(const std::vector<SourceDocument>& docs,
                               const std::map<std::string, std::string>& diffs) {
  std::map<std::string, const SourceDocument*> by_id;
  for (const auto& d : docs) {
    if (!by_id.emplace(d.id, &d).second) throw ConfigError("duplicate document id " + d.id);
  }
  for (const auto& [id, _] : diffs) {
    if (!by_id.count(id)) throw ReferenceError("diff refers to unknown document " + id);
  }

  DatasetManifest manifest;
  for (const auto& d : docs) {
    ManifestRecord rec;
    rec.id = d.id;
    rec.path = d.path;
    if (auto it = diffs.find(d.id); it != diffs.end()) {
      std::set<std::uint32_t> lines;
      try {
        lines = parse_unified_diff(it->second, d.line_count());
      } catch (const FormatError& e) {
        throw FormatError(d.id + ": " + e.what());
      }
      for (auto l : lines) {
        if (l > d.line_count()) {
          throw ReferenceError(d.id + ": faulty line " + std::to_string(l) + " exceeds line count " +
                               std::to_string(d.line_count()));
        }
      }
      rec.faulty_lines.assign(lines.begin(), lines.end());
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

DatasetManifest assign_folds(const DatasetManifest& manifest, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be at least 2");
  if (static_cast<std::size_t>(k) > manifest.records.size()) {
    throw ConfigError("fold count " + std::to_string(k) + " exceeds record count " +
                      std::to_string(manifest.records.size()));
  }
  std::vector<std::size_t> order(manifest.records.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetManifest out = manifest;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    out.records[order[pos]].fold = static_cast<int>(pos % static_cast<std::size_t>(k));
  }
  return out;
}

void validate(const DatasetManifest& manifest) {
  std::unordered_set<std::string> ids;
  bool any_fold = false, all_fold = true;
  for (const auto& r : manifest.records) {
    if (r.id.empty()) throw FormatError("manifest record with empty id");
    if (!ids.insert(r.id).second) throw FormatError("duplicate manifest id " + r.id);
    if (!std::is_sorted(r.faulty_lines.begin(), r.faulty_lines.end()) ||
        std::adjacent_find(r.faulty_lines.begin(), r.faulty_lines.end()) != r.faulty_lines.end()) {
      throw FormatError(r.id + ": faulty_lines must be sorted and unique");
    }
    if (!r.faulty_lines.empty() && r.faulty_lines.front() == 0) {
      throw FormatError(r.id + ": faulty line numbers are 1-based");
    }
    if (r.fold && *r.fold < 0) throw FormatError(r.id + ": negative fold");
    any_fold = any_fold || r.fold.has_value();
    all_fold = all_fold && r.fold.has_value();
  }
  if (any_fold && !all_fold) throw FormatError("fold tags must be present on every record or none");
}

namespace {

const std::set<std::string> kKnownFields = {"schema_version", "id", "path", "faulty_lines", "fold"};

}  // namespace

std::string to_jsonl(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& r : manifest.records) {
    // Preserved fields first so known fields always win on collision.
    nlohmann::ordered_json j;
    j["schema_version"] = r.schema_version;
    j["id"] = r.id;
    j["path"] = r.path;
    j["faulty_lines"] = r.faulty_lines;
    j["fold"] = r.fold ? nlohmann::ordered_json(*r.fold) : nlohmann::ordered_json(nullptr);
    for (auto it = r.extra.begin(); it != r.extra.end(); ++it) {
      if (!kKnownFields.count(it.key())) j[it.key()] = it.value();
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

DatasetManifest from_jsonl(std::string_view text, const std::string& source) {
  DatasetManifest manifest;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(text)) {
    ++lineno;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError(where + ": record is not an object");

    ManifestRecord rec;
    try {
      rec.schema_version = j.value("schema_version", kManifestSchemaVersion);
      rec.id = j.at("id").get<std::string>();
      rec.path = j.at("path").get<std::string>();
      rec.faulty_lines = j.at("faulty_lines").get<std::vector<std::uint32_t>>();
      if (j.contains("fold") && !j.at("fold").is_null()) rec.fold = j.at("fold").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (kKnownFields.count(it.key())) continue;
      if (rec.schema_version == kManifestSchemaVersion) {
        throw FormatError(where + ": unknown field '" + it.key() + "'");
      }
      rec.extra[it.key()] = it.value();
    }
    manifest.records.push_back(std::move(rec));
  }
  validate(manifest);
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  validate(manifest);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReferenceError("cannot write manifest " + path.string());
  out << to_jsonl(manifest);
  if (!out) throw ReferenceError("failed writing manifest " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReferenceError("cannot open manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_jsonl(buf.str(), path.string());
}

}  // namespace linefl::corpus
