#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "linefl/corpus.hpp"
#include "linefl/states.hpp"

namespace linefl::windowing {

inline constexpr std::uint32_t kDefaultCapacity = 128;

/// Contiguous block of lines [start, start + length - 1], 1-based.
struct WindowSpec {
  std::string doc_id;
  std::uint32_t start = 1;
  std::uint32_t length = 1;

  std::uint32_t last() const { return start + length - 1; }
  bool contains(std::uint32_t line) const { return line >= start && line <= last(); }
  bool operator==(const WindowSpec&) const = default;
};

/// Fixed-capacity training sample. Rows past `spec.length` are zero padding
/// with mask 0 and label 0.
struct WindowSample {
  std::uint32_t capacity = 0;
  std::uint32_t dim = 0;
  std::vector<float> states;   // capacity x dim, row-major
  std::vector<float> labels;   // capacity
  std::vector<float> mask;     // capacity
  WindowSpec spec;

  std::uint32_t valid() const { return spec.length; }
  const float* row(std::uint32_t i) const { return states.data() + static_cast<std::size_t>(i) * dim; }
};

/// Training windows that jointly cover every faulty line. Each window starts
/// at a uniformly drawn offset at or before the first still-uncovered faulty
/// line.
std::vector<WindowSpec> segment(const std::string& doc_id, std::uint32_t line_count,
                                const std::set<std::uint32_t>& faulty, std::uint32_t capacity,
                                std::mt19937_64& rng);

WindowSample materialize(const WindowSpec& spec, const states::StateMatrix& sm,
                         const corpus::LineLabels& labels, std::uint32_t capacity);

/// Deterministic tiles with stride capacity - overlap. Without overlap the
/// final tile is shortened at the end of the document; with overlap it is
/// moved back to a full window ending on the last line.
std::vector<WindowSpec> tile_for_inference(const std::string& doc_id, std::uint32_t line_count,
                                           std::uint32_t capacity, std::uint32_t overlap);

}  // namespace linefl::windowing
