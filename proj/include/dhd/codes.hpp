#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "dhd/binary_io.hpp"
#include "dhd/error.hpp"
#include "dhd/matrix.hpp"

namespace dhd {

inline constexpr double kNormEpsilon = 1e-12;

/// Continuous relaxed hash code h, produced by the tanh head.
class HashCode {
 public:
  HashCode() = default;
  explicit HashCode(std::vector<double> values) : values_(std::move(values)) {}
  explicit HashCode(std::span<const double> values) : values_(values.begin(), values.end()) {}

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  operator std::span<const double>() const { return values_; }

  bool operator==(const HashCode&) const = default;

 private:
  std::vector<double> values_;
};

/// K-bit code in {-1,+1}^K, bit-packed little-endian into 64-bit words.
/// Bit i lives in word i/64 at position i%64; a set bit means +1. Pad bits in
/// the last word are always zero.
class BinaryCode {
 public:
  BinaryCode() = default;
  explicit BinaryCode(std::size_t length) : length_(length), words_(word_count(length), 0) {}

  /// Adopts packed words; pad bits must already be clear.
  BinaryCode(std::size_t length, std::vector<std::uint64_t> words) : length_(length), words_(std::move(words)) {
    if (words_.size() != word_count(length_)) throw ShapeError("binary code: word count does not match length");
    if (!words_.empty() && (words_.back() & ~tail_mask(length_)) != 0)
      throw InvalidInput("binary code: pad bits must be zero");
  }

  static constexpr std::size_t word_count(std::size_t length) { return (length + 63) / 64; }

  /// Mask of the valid bits in the final word.
  static constexpr std::uint64_t tail_mask(std::size_t length) {
    const std::size_t rem = length % 64;
    return rem == 0 ? ~std::uint64_t{0} : ((std::uint64_t{1} << rem) - 1);
  }

  /// Packs a vector of +-1 values (any value >= 0 counts as +1).
  static BinaryCode from_signs(std::span<const double> signs) {
    BinaryCode code(signs.size());
    for (std::size_t i = 0; i < signs.size(); ++i)
      if (signs[i] >= 0.0) code.set(i, true);
    return code;
  }

  std::size_t size() const { return length_; }
  std::span<const std::uint64_t> words() const { return words_; }

  bool bit(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1U; }
  int value(std::size_t i) const { return bit(i) ? 1 : -1; }

  void set(std::size_t i, bool on) {
    const std::uint64_t m = std::uint64_t{1} << (i % 64);
    if (on)
      words_[i / 64] |= m;
    else
      words_[i / 64] &= ~m;
  }

  std::vector<double> to_values() const {
    std::vector<double> out(length_);
    for (std::size_t i = 0; i < length_; ++i) out[i] = value(i);
    return out;
  }

  BinaryCode complement() const {
    BinaryCode out(length_);
    for (std::size_t w = 0; w < words_.size(); ++w) out.words_[w] = ~words_[w];
    if (!out.words_.empty()) out.words_.back() &= tail_mask(length_);
    return out;
  }

  bool operator==(const BinaryCode&) const = default;

 private:
  std::size_t length_ = 0;
  std::vector<std::uint64_t> words_;
};

/// sign(h) elementwise with sign(0) = +1.
inline BinaryCode quantize(std::span<const double> h) {
  if (!all_finite(h)) throw InvalidInput("quantize: non-finite element in hash code");
  return BinaryCode::from_signs(h);
}

inline BinaryCode quantize(const HashCode& h) { return quantize(h.values()); }

/// XOR + popcount over packed words.
inline std::size_t hamming(const BinaryCode& a, const BinaryCode& b) {
  if (a.size() != b.size())
    throw InvalidInput("hamming: code lengths differ (" + std::to_string(a.size()) + " vs " +
                       std::to_string(b.size()) + ")");
  const auto wa = a.words();
  const auto wb = b.words();
  std::size_t d = 0;
  for (std::size_t w = 0; w < wa.size(); ++w) d += static_cast<std::size_t>(std::popcount(wa[w] ^ wb[w]));
  return d;
}

/// Cosine similarity clamped to [-1, 1]. Throws DegenerateInput if either
/// norm is below kNormEpsilon.
inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw InvalidInput("cosine: length mismatch");
  const double nu = norm(u);
  const double nv = norm(v);
  if (!(nu >= kNormEpsilon) || !(nv >= kNormEpsilon)) throw DegenerateInput("cosine: near-zero norm");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

/// Hamming distance implied by a cosine similarity between K-bit codes.
inline double hamming_from_cosine(double s, std::size_t k) {
  if (k == 0) throw InvalidInput("hamming_from_cosine: K must be >= 1");
  return 0.5 * static_cast<double>(k) * (1.0 - s);
}

// Code file: "DHDC", u16 version, u16 K, u64 count, then count records of
// ceil(K/64) little-endian u64 words.

inline constexpr std::uint16_t kCodeFileVersion = 1;

inline void write_codes(std::ostream& out, std::size_t k, std::span<const BinaryCode> codes) {
  if (k == 0 || k > 0xFFFF) throw InvalidInput("write_codes: K out of range");
  io::write_magic(out, "DHDC");
  io::write_le<std::uint16_t>(out, kCodeFileVersion);
  io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(k));
  io::write_le<std::uint64_t>(out, codes.size());
  for (const auto& c : codes) {
    if (c.size() != k) throw ShapeError("write_codes: code length differs from K");
    for (std::uint64_t w : c.words()) io::write_le(out, w);
  }
  if (!out) throw IoError("write_codes: write failed");
}

struct CodeFile {
  std::size_t code_length = 0;
  std::vector<BinaryCode> codes;
};

inline CodeFile read_codes(std::istream& in) {
  io::expect_magic(in, "DHDC", "code file");
  const auto version = io::read_le<std::uint16_t>(in);
  if (version != kCodeFileVersion)
    throw VersionMismatch("code file: unsupported version " + std::to_string(version));
  CodeFile file;
  file.code_length = io::read_le<std::uint16_t>(in);
  if (file.code_length == 0) throw ShapeError("code file: K is zero");
  const auto count = io::read_le<std::uint64_t>(in);
  const std::size_t words = BinaryCode::word_count(file.code_length);
  file.codes.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::vector<std::uint64_t> packed(words);
    for (auto& w : packed) w = io::read_le<std::uint64_t>(in);
    file.codes.emplace_back(file.code_length, std::move(packed));
  }
  return file;
}

inline void save_codes(const std::filesystem::path& path, std::size_t k, std::span<const BinaryCode> codes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_codes(out, k, codes);
}

inline CodeFile load_codes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_codes(in);
}

}  // namespace dhd
