#pragma once

// Little-endian byte plumbing shared by the WAV, checkpoint and embedding
// codecs.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "tinyclap/errors.hpp"

namespace tinyclap {

template <typename UInt>
UInt le_load(const std::byte* p) noexcept {
  static_assert(std::is_unsigned_v<UInt>);
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(static_cast<UInt>(p[i]) << (8 * i));
  return v;
}

inline float f32_from_bits(std::uint32_t bits) noexcept { return std::bit_cast<float>(bits); }
inline std::uint32_t f32_bits(float f) noexcept { return std::bit_cast<std::uint32_t>(f); }

class ByteWriter {
 public:
  template <typename UInt>
  void put(UInt v) {
    static_assert(std::is_unsigned_v<UInt>);
    for (std::size_t i = 0; i < sizeof(UInt); ++i) buf_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
  }
  void put_f32(float f) { put<std::uint32_t>(f32_bits(f)); }
  void raw(std::string_view s) {
    for (char c : s) buf_.push_back(static_cast<std::byte>(c));
  }
  void raw(std::span<const std::byte> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void pad_to(std::size_t alignment) {
    while (buf_.size() % alignment) buf_.push_back(std::byte{0});
  }
  std::size_t size() const noexcept { return buf_.size(); }
  std::vector<std::byte> bytes() && { return std::move(buf_); }
  const std::vector<std::byte>& bytes() const& { return buf_; }

 private:
  std::vector<std::byte> buf_;
};

/// Bounds-checked little-endian reader; every failure is a FormatError
/// carrying the byte position.
class ByteReader {
 public:
  ByteReader(std::span<const std::byte> bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::size_t size() const noexcept { return bytes_.size(); }

  [[noreturn]] void fail(const std::string& what) const { fail_at(pos_, what); }
  [[noreturn]] void fail_at(std::size_t pos, const std::string& what) const {
    throw FormatError(source_ + ": " + what + " at byte " + std::to_string(pos));
  }

  std::span<const std::byte> take(std::size_t n, const char* what) {
    if (n > remaining())
      fail("truncated file: need " + std::to_string(n) + " bytes for " + what + ", " + std::to_string(remaining()) +
           " left");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename UInt>
  UInt get(const char* what) {
    return le_load<UInt>(take(sizeof(UInt), what).data());
  }
  float get_f32(const char* what) { return f32_from_bits(get<std::uint32_t>(what)); }
  std::string get_string(std::size_t n, const char* what) {
    auto s = take(n, what);
    return std::string(reinterpret_cast<const char*>(s.data()), s.size());
  }

 private:
  std::span<const std::byte> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

/// Whole-file read; a missing or unreadable file is a DataError.
std::vector<std::byte> read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace tinyclap
