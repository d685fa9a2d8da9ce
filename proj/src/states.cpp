#include "linefl/states.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <unordered_map>

#include "binary_io.hpp"
#include "linefl/error.hpp"

namespace linefl::states {

namespace {

constexpr char kMagic[4] = {'L', 'N', 'S', 'T'};

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Portable standard normal draws; std::normal_distribution differs across
// standard libraries and encoder output must not.
std::vector<double> gaussian_direction(std::uint64_t key, std::uint32_t dim) {
  std::vector<double> v(dim);
  std::uint64_t state = key;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::uint32_t i = 0; i < dim; i += 2) {
    double u1 = (static_cast<double>(splitmix64(state) >> 11) + 0.5) * 0x1.0p-53;
    double u2 = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    v[i] = r * std::cos(2.0 * std::numbers::pi * u2) * scale;
    if (i + 1 < dim) v[i + 1] = r * std::sin(2.0 * std::numbers::pi * u2) * scale;
  }
  return v;
}

bool is_word(unsigned char c) { return std::isalnum(c) || c == '_'; }

std::vector<std::string_view> tokenize(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    unsigned char c = static_cast<unsigned char>(line[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (is_word(c)) {
      std::size_t j = i;
      while (j < line.size() && is_word(static_cast<unsigned char>(line[j]))) ++j;
      tokens.push_back(line.substr(i, j - i));
      i = j;
    } else {
      tokens.push_back(line.substr(i, 1));
      ++i;
    }
  }
  return tokens;
}

}  // namespace

StateMatrix::StateMatrix(std::string doc_id, std::uint32_t rows, std::uint32_t dim, std::vector<float> data,
                         std::string encoder_tag, std::uint16_t encoder_version)
    : doc_id_(std::move(doc_id)),
      rows_(rows),
      dim_(dim),
      data_(std::move(data)),
      encoder_tag_(std::move(encoder_tag)),
      encoder_version_(encoder_version) {
  if (data_.size() != static_cast<std::size_t>(rows_) * dim_) {
    throw ConfigError("state matrix data size does not match " + std::to_string(rows_) + "x" +
                      std::to_string(dim_));
  }
  if (encoder_tag_.size() > 255) throw ConfigError("encoder tag longer than 255 bytes");
  for (float v : data_) {
    if (!std::isfinite(v)) throw NumericError("state matrix for " + doc_id_ + " has non-finite entries");
  }
}

StateMatrix encode_causal_mock(const corpus::SourceDocument& doc, std::uint32_t dim, std::uint64_t seed) {
  if (dim < 8) throw ConfigError("mock encoder dimension must be at least 8");
  if (doc.lines.empty()) throw ConfigError("cannot encode empty document " + doc.id);

  std::unordered_map<std::uint64_t, std::vector<double>> directions;
  auto direction = [&](std::string_view token) -> const std::vector<double>& {
    std::uint64_t key = fnv1a(token) ^ (seed * 0x9e3779b97f4a7c15ull);
    auto it = directions.find(key);
    if (it == directions.end()) it = directions.emplace(key, gaussian_direction(key, dim)).first;
    return it->second;
  };

  const auto rows = static_cast<std::uint32_t>(doc.lines.size());
  std::vector<float> data(static_cast<std::size_t>(rows) * dim);
  // Unit direction added to rows whose line carries the planted marker.
  std::vector<double> signature = gaussian_direction(fnv1a("<planted-signature>") ^ seed, dim);
  double sig_norm = 0.0;
  for (double v : signature) sig_norm += v * v;
  for (auto& v : signature) v /= std::sqrt(sig_norm);

  std::vector<double> acc(dim, 0.0);
  std::vector<double> row(dim);
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (auto& a : acc) a *= kMockDecay;
    // Every line contributes its terminating newline token, so no row is zero.
    for (std::size_t k = 0; k < dim; ++k) acc[k] += direction("\n")[k];
    bool planted = false;
    for (auto tok : tokenize(doc.lines[i])) {
      planted = planted || tok == kMockSignatureToken;
      const auto& dir = direction(tok);
      for (std::size_t k = 0; k < dim; ++k) acc[k] += dir[k];
    }
    double acc_norm = 0.0;
    for (double a : acc) acc_norm += a * a;
    acc_norm = std::sqrt(acc_norm);
    // The signature is row-local: it never enters the accumulator.
    for (std::size_t k = 0; k < dim; ++k) row[k] = acc[k] + (planted ? acc_norm * signature[k] : 0.0);
    double norm = 0.0;
    for (double v : row) norm += v * v;
    norm = std::sqrt(norm);
    float* out = data.data() + static_cast<std::size_t>(i) * dim;
    for (std::size_t k = 0; k < dim; ++k) out[k] = static_cast<float>(row[k] / norm);
  }
  return StateMatrix(doc.id, rows, dim, std::move(data), kMockEncoderTag);
}

void write_states(const StateMatrix& sm, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReferenceError("cannot write state file " + path.string());
  out.write(kMagic, 4);
  detail::put_le<std::uint16_t>(out, sm.encoder_version());
  detail::put_le<std::uint16_t>(out, sm.flags());
  detail::put_le<std::uint32_t>(out, sm.rows());
  detail::put_le<std::uint32_t>(out, sm.dim());
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(sm.encoder_tag().size()));
  out.write(sm.encoder_tag().data(), static_cast<std::streamsize>(sm.encoder_tag().size()));
  for (float v : sm.data()) detail::put_f32(out, v);
  if (!out) throw ReferenceError("failed writing state file " + path.string());
}

StateMatrix read_states(const std::filesystem::path& path, std::string doc_id, std::uint64_t max_payload_bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReferenceError("cannot open state file " + path.string());
  detail::Reader r(in, path.string());

  unsigned char magic[4];
  r.read_bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::BadMagic, path.string() + ": not a state file (bad magic)");
  }
  const auto version = r.get_le<std::uint16_t>("version");
  if (version == 0 || version > kStateFileVersion) {
    throw FormatError(FormatError::Kind::BadVersion,
                      path.string() + ": unsupported state file version " + std::to_string(version));
  }
  const auto flags = r.get_le<std::uint16_t>("flags");
  const auto rows = r.get_le<std::uint32_t>("row count");
  const auto dim = r.get_le<std::uint32_t>("dimension");
  const auto tag_len = r.get_le<std::uint8_t>("encoder tag length");
  std::string tag = r.get_string(tag_len, "encoder tag");

  if (rows == 0 || dim == 0) {
    throw FormatError(FormatError::Kind::HeaderMismatch, path.string() + ": header declares an empty matrix");
  }
  const std::uint64_t payload = std::uint64_t{rows} * dim * sizeof(float);
  if (payload > max_payload_bytes) {
    throw FormatError(FormatError::Kind::Oversized,
                      path.string() + ": header declares " + std::to_string(payload) +
                          " payload bytes, above the cap of " + std::to_string(max_payload_bytes));
  }
  // Compare against the real file size before allocating.
  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  const std::uint64_t header_size = 4 + 2 + 2 + 4 + 4 + 1 + tag_len;
  if (!ec && file_size < header_size + payload) {
    throw FormatError(FormatError::Kind::Truncated,
                      path.string() + ": payload holds " + std::to_string((file_size - header_size) / 4) +
                          " values, header declares " + std::to_string(std::uint64_t{rows} * dim));
  }
  if (!ec && file_size > header_size + payload) {
    throw FormatError(FormatError::Kind::HeaderMismatch,
                      path.string() + ": trailing bytes after the declared " + std::to_string(rows) + "x" +
                          std::to_string(dim) + " payload");
  }

  std::vector<float> data(static_cast<std::size_t>(rows) * dim);
  for (auto& v : data) v = r.get_f32("payload");
  for (float v : data) {
    if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite value in payload");
  }
  if (doc_id.empty()) doc_id = doc_id_from_state_path(path);
  StateMatrix sm(std::move(doc_id), rows, dim, std::move(data), std::move(tag), version);
  sm.flags_ = flags;
  return sm;
}

std::string doc_id_from_state_path(const std::filesystem::path& path) {
  const std::string stem = path.stem().string();
  std::string id;
  for (std::size_t i = 0; i < stem.size(); ++i) {
    if (stem.compare(i, 2, "__") == 0) {
      id += '/';
      ++i;
    } else {
      id += stem[i];
    }
  }
  return id;
}

std::filesystem::path state_path(const std::filesystem::path& dir, const std::string& doc_id) {
  std::string name;
  for (char c : doc_id) {
    if (c == '/' || c == '\\') name += "__";
    else name += c;
  }
  return dir / (name + ".lnst");
}

}  // namespace linefl::states
