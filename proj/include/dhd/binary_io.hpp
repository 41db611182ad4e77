#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "dhd/error.hpp"

namespace dhd::io {

// Little-endian primitives shared by the code, dataset and checkpoint formats.

template <typename UInt>
void write_le(std::ostream& out, UInt value) {
  std::array<char, sizeof(UInt)> bytes{};
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    bytes[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename UInt>
UInt read_le(std::istream& in) {
  std::array<unsigned char, sizeof(UInt)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw IoError("unexpected end of file");
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) value |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<UInt>(value);
}

inline void write_f64(std::ostream& out, double value) { write_le(out, std::bit_cast<std::uint64_t>(value)); }
inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<std::uint64_t>(in)); }

inline void write_magic(std::ostream& out, std::string_view magic) { out.write(magic.data(), magic.size()); }

inline void expect_magic(std::istream& in, std::string_view magic, std::string_view what) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), got.size());
  if (!in || got != magic)
    throw VersionMismatch(std::string(what) + ": bad magic tag, expected '" + std::string(magic) + "'");
}

inline void write_string(std::ostream& out, std::string_view s) {
  write_le<std::uint64_t>(out, s.size());
  out.write(s.data(), s.size());
}

inline std::string read_string(std::istream& in) {
  const auto n = read_le<std::uint64_t>(in);
  if (n > (1ULL << 32)) throw IoError("string length out of range");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("unexpected end of file");
  return s;
}

}  // namespace dhd::io
