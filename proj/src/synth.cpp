#include "linefl/synth.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include "linefl/error.hpp"
#include "linefl/states.hpp"

namespace linefl::synth {

namespace {

const std::vector<std::string> kTypes = {"int", "long", "String", "double", "boolean"};
const std::vector<std::string> kNames = {"count", "index", "total", "name", "value", "buffer",
                                         "offset", "result", "item", "limit", "cursor", "flag"};
const std::vector<std::string> kCalls = {"size", "length", "trim", "next", "compute", "load", "parse", "hash"};

template <class C>
const auto& pick(const C& c, std::mt19937_64& rng) {
  return c[std::uniform_int_distribution<std::size_t>(0, c.size() - 1)(rng)];
}

std::string ident(std::mt19937_64& rng) {
  return pick(kNames, rng) + std::to_string(std::uniform_int_distribution<int>(0, 9)(rng));
}

std::string ordinary_line(std::mt19937_64& rng) {
  switch (std::uniform_int_distribution<int>(0, 6)(rng)) {
    case 0: return "    " + pick(kTypes, rng) + " " + ident(rng) + " = " + ident(rng) + "." + pick(kCalls, rng) + "();";
    case 1: return "    if (" + ident(rng) + " > " + std::to_string(std::uniform_int_distribution<int>(0, 99)(rng)) + ") {";
    case 2: return "    }";
    case 3: return "    " + ident(rng) + " += " + ident(rng) + ";";
    case 4: return "    return " + ident(rng) + ";";
    case 5: return "";
    default: return "    log.debug(\"" + pick(kNames, rng) + "\", " + ident(rng) + ");";
  }
}

std::string marker_line(std::mt19937_64& rng) {
  return "    " + pick(kTypes, rng) + " " + ident(rng) + " = registry." + states::kMockSignatureToken + "(" + ident(rng) +
         ").deref();";
}

std::string fixed_line(const std::string& buggy) {
  std::string out = buggy;
  const std::string from = std::string("registry.") + states::kMockSignatureToken + "(";
  if (auto pos = out.find(from); pos != std::string::npos) {
    out.replace(pos, from.size(), "registry.lookupOrDefault(");
    if (auto d = out.find(").deref()"); d != std::string::npos) out.replace(d, 9, ")");
    return out;
  }
  return out + "  // checked";
}

// Distinct lines in [1, n] with no two adjacent.
std::set<std::uint32_t> spaced_lines(std::uint32_t n, std::uint32_t count, std::mt19937_64& rng) {
  std::set<std::uint32_t> out;
  std::uniform_int_distribution<std::uint32_t> line(1, n);
  for (int attempts = 0; out.size() < count && attempts < 10000; ++attempts) {
    const auto l = line(rng);
    if (out.count(l) || out.count(l - 1) || out.count(l + 1)) continue;
    out.insert(l);
  }
  return out;
}

}  // namespace

std::vector<Document> generate(const Options& opts) {
  if (opts.min_lines < 4 || opts.min_lines > opts.max_lines) throw ConfigError("invalid synthetic line range");
  if (opts.min_faulty < 1 || opts.min_faulty > opts.max_faulty || opts.max_faulty * 3 > opts.min_lines) {
    throw ConfigError("invalid synthetic faulty-line range");
  }
  std::mt19937_64 rng(opts.seed);
  std::vector<Document> docs;
  for (std::uint32_t i = 0; i < opts.docs; ++i) {
    Document doc;
    char name[32];
    std::snprintf(name, sizeof(name), "doc_%03u.java", i);
    doc.id = name;
    const auto n = std::uniform_int_distribution<std::uint32_t>(opts.min_lines, opts.max_lines)(rng);
    const auto k = std::uniform_int_distribution<std::uint32_t>(opts.min_faulty, opts.max_faulty)(rng);

    const auto markers = spaced_lines(n, k, rng);
    doc.faulty = opts.random_labels ? spaced_lines(n, k, rng) : markers;

    doc.lines.resize(n);
    for (std::uint32_t l = 1; l <= n; ++l) {
      doc.lines[l - 1] = markers.count(l) ? marker_line(rng) : ordinary_line(rng);
    }

    doc.diff = "--- a/" + doc.id + "\n+++ b/" + doc.id + "\n";
    for (auto l : doc.faulty) {
      const auto& old_line = doc.lines[l - 1];
      doc.diff += "@@ -" + std::to_string(l) + ",1 +" + std::to_string(l) + ",1 @@\n";
      doc.diff += "-" + old_line + "\n+" + fixed_line(old_line) + "\n";
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

void write(const std::vector<Document>& docs, const std::filesystem::path& src_dir,
           const std::filesystem::path& diffs_dir) {
  std::filesystem::create_directories(src_dir);
  std::filesystem::create_directories(diffs_dir);
  for (const auto& d : docs) {
    std::ofstream src(src_dir / d.id, std::ios::binary | std::ios::trunc);
    for (const auto& l : d.lines) src << l << '\n';
    std::ofstream diff(diffs_dir / (d.id + ".diff"), std::ios::binary | std::ios::trunc);
    diff << d.diff;
    if (!src || !diff) throw ReferenceError("failed writing synthetic document " + d.id);
  }
}

}  // namespace linefl::synth
