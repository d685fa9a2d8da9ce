#include "linefl/windowing.hpp"

#include <algorithm>
#include <cstring>

#include "linefl/error.hpp"

namespace linefl::windowing {

std::vector<WindowSpec> segment(const std::string& doc_id, std::uint32_t line_count,
                                const std::set<std::uint32_t>& faulty, std::uint32_t capacity,
                                std::mt19937_64& rng) {
  if (faulty.empty()) throw ConfigError(doc_id + ": cannot segment a document without faulty lines");
  if (capacity == 0) throw ConfigError("window capacity must be positive");
  if (line_count == 0) throw ConfigError(doc_id + ": empty document");
  if (*faulty.begin() == 0 || *faulty.rbegin() > line_count) {
    throw ReferenceError(doc_id + ": faulty line outside [1, " + std::to_string(line_count) + "]");
  }

  if (line_count <= capacity) return {WindowSpec{doc_id, 1, line_count}};

  std::vector<WindowSpec> windows;
  std::set<std::uint32_t> uncovered = faulty;
  while (!uncovered.empty()) {
    const std::uint32_t f = *uncovered.begin();
    const std::uint32_t lo = f >= capacity ? f - capacity + 1 : 1;
    const std::uint32_t hi = std::min(f, line_count - capacity + 1);
    std::uniform_int_distribution<std::uint32_t> offset(lo, hi);
    const std::uint32_t start = offset(rng);
    WindowSpec w{doc_id, start, std::min(capacity, line_count - start + 1)};
    uncovered.erase(uncovered.lower_bound(w.start), uncovered.upper_bound(w.last()));
    windows.push_back(std::move(w));
  }
  return windows;
}

WindowSample materialize(const WindowSpec& spec, const states::StateMatrix& sm,
                         const corpus::LineLabels& labels, std::uint32_t capacity) {
  if (spec.doc_id != sm.doc_id() || labels.doc_id != sm.doc_id()) {
    throw ReferenceError("window for " + spec.doc_id + " applied to states of " + sm.doc_id() + " and labels of " +
                         labels.doc_id);
  }
  if (spec.length == 0 || spec.length > capacity) {
    throw ReferenceError(spec.doc_id + ": window length " + std::to_string(spec.length) +
                         " outside [1, " + std::to_string(capacity) + "]");
  }
  if (spec.start == 0 || spec.last() > sm.rows()) {
    throw ReferenceError(spec.doc_id + ": window [" + std::to_string(spec.start) + ", " +
                         std::to_string(spec.last()) + "] outside document of " + std::to_string(sm.rows()) +
                         " lines");
  }

  WindowSample s;
  s.capacity = capacity;
  s.dim = sm.dim();
  s.spec = spec;
  s.states.assign(static_cast<std::size_t>(capacity) * sm.dim(), 0.0f);
  s.labels.assign(capacity, 0.0f);
  s.mask.assign(capacity, 0.0f);
  for (std::uint32_t i = 0; i < spec.length; ++i) {
    auto src = sm.row(spec.start - 1 + i);
    std::memcpy(s.states.data() + static_cast<std::size_t>(i) * s.dim, src.data(), src.size_bytes());
    s.mask[i] = 1.0f;
  }
  for (auto it = labels.faulty_lines.lower_bound(spec.start);
       it != labels.faulty_lines.end() && *it <= spec.last(); ++it) {
    s.labels[*it - spec.start] = 1.0f;
  }
  return s;
}

std::vector<WindowSpec> tile_for_inference(const std::string& doc_id, std::uint32_t line_count,
                                           std::uint32_t capacity, std::uint32_t overlap) {
  if (capacity == 0 || overlap >= capacity) {
    throw ConfigError("tile overlap must be in [0, capacity)");
  }
  std::vector<WindowSpec> tiles;
  const std::uint32_t stride = capacity - overlap;
  for (std::uint32_t start = 1; start <= line_count; start += stride) {
    if (overlap > 0 && start > 1 && start + capacity - 1 > line_count) {
      // Overlapping tiles end on a full window flush with the document.
      start = line_count >= capacity ? line_count - capacity + 1 : 1;
    }
    tiles.push_back(WindowSpec{doc_id, start, std::min(capacity, line_count - start + 1)});
    if (tiles.back().last() == line_count) break;
  }
  return tiles;
}

}  // namespace linefl::windowing
