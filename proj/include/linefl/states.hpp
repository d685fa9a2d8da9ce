#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "linefl/corpus.hpp"

namespace linefl::states {

inline constexpr std::uint16_t kStateFileVersion = 1;
inline constexpr std::uint64_t kDefaultReadCap = 2ull << 30;  // 2 GiB of payload

/// One row per source line: the frozen encoder's state at that line's
/// terminating token. Row-major, M x D, 32-bit floats.
class StateMatrix {
 public:
  StateMatrix() = default;
  StateMatrix(std::string doc_id, std::uint32_t rows, std::uint32_t dim, std::vector<float> data,
              std::string encoder_tag, std::uint16_t encoder_version = kStateFileVersion);

  const std::string& doc_id() const { return doc_id_; }
  std::uint32_t rows() const { return rows_; }
  std::uint32_t dim() const { return dim_; }
  const std::string& encoder_tag() const { return encoder_tag_; }
  std::uint16_t encoder_version() const { return encoder_version_; }
  std::uint16_t flags() const { return flags_; }

  /// Row of 0-based index i.
  std::span<const float> row(std::uint32_t i) const {
    return {data_.data() + static_cast<std::size_t>(i) * dim_, dim_};
  }
  std::span<const float> data() const { return data_; }

  bool operator==(const StateMatrix&) const = default;

 private:
  friend StateMatrix read_states(const std::filesystem::path&, std::string, std::uint64_t);
  std::string doc_id_;
  std::uint32_t rows_ = 0;
  std::uint32_t dim_ = 0;
  std::vector<float> data_;
  std::string encoder_tag_;
  std::uint16_t encoder_version_ = kStateFileVersion;
  std::uint16_t flags_ = 0;
};

/// Deterministic stand-in for a left-to-right code model. Row i depends only
/// on lines 1..i: hashed line tokens are folded into a decayed prefix sum and
/// L2-normalised. A line containing the token kMockSignatureToken also gets
/// a fixed signature direction of equal weight in its own row only; the
/// synthetic corpus uses it to plant a learnable faulty-line pattern.
StateMatrix encode_causal_mock(const corpus::SourceDocument& doc, std::uint32_t dim, std::uint64_t seed);

inline constexpr double kMockDecay = 0.9;
inline constexpr const char* kMockSignatureToken = "unsafeLookup";
inline constexpr const char* kMockEncoderTag = "mock-causal-v1";

/// Writes the "LNST" format. The doc id is not stored in the file; read_states
/// takes it from the caller, falling back to doc_id_from_state_path.
void write_states(const StateMatrix& sm, const std::filesystem::path& path);
StateMatrix read_states(const std::filesystem::path& path, std::string doc_id = {},
                        std::uint64_t max_payload_bytes = kDefaultReadCap);

/// `<dir>/<doc_id>.lnst`; '/' in ids becomes "__".
std::filesystem::path state_path(const std::filesystem::path& dir, const std::string& doc_id);
/// Inverse of state_path for ids that do not themselves contain "__".
std::string doc_id_from_state_path(const std::filesystem::path& path);

}  // namespace linefl::states
