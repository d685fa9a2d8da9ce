#pragma once

// Little-endian primitives shared by the state-file and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "linefl/error.hpp"

namespace linefl::detail {

template <class U>
void put_le(std::ostream& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

inline void put_f32(std::ostream& out, float value) { put_le(out, std::bit_cast<std::uint32_t>(value)); }
inline void put_f64(std::ostream& out, double value) { put_le(out, std::bit_cast<std::uint64_t>(value)); }

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <class U>
  U get_le(const char* what) {
    static_assert(std::is_unsigned_v<U>);
    unsigned char bytes[sizeof(U)];
    read_bytes(bytes, sizeof(U), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
    return value;
  }

  float get_f32(const char* what) { return std::bit_cast<float>(get_le<std::uint32_t>(what)); }
  double get_f64(const char* what) { return std::bit_cast<double>(get_le<std::uint64_t>(what)); }

  std::string get_string(std::size_t length, const char* what) {
    std::string s(length, '\0');
    read_bytes(reinterpret_cast<unsigned char*>(s.data()), length, what);
    return s;
  }

  void read_bytes(unsigned char* dst, std::size_t n, const char* what) {
    in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(FormatError::Kind::Truncated,
                        source_ + ": truncated while reading " + what);
    }
  }

  bool at_eof() { return in_.peek() == std::char_traits<char>::eof(); }
  const std::string& source() const { return source_; }

 private:
  std::istream& in_;
  std::string source_;
};

}  // namespace linefl::detail
