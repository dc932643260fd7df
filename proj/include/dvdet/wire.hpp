#pragma once

// Little-endian binary helpers shared by the weight blob and KITTI readers.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string_view>

#include "dvdet/core.hpp"

namespace dvdet::wire {

inline constexpr std::string_view kKernelMagic = "DVKW";
inline constexpr std::string_view kModelMagic = "DVMW";

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b;
  for (std::size_t i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 8);
}

inline void write_f32(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  std::array<char, 4> b;
  for (std::size_t i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(b.data(), 4);
}

inline std::uint32_t load_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float load_f32le(const unsigned char* p) { return std::bit_cast<float>(load_u32le(p)); }

/// Sequential reader that tracks the byte offset for error reporting.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::size_t offset() const { return offset_; }

  void expect_magic(std::string_view magic) {
    std::array<char, 4> b{};
    read(b.data(), 4);
    if (std::string_view(b.data(), 4) != magic) {
      throw ParseError("bad magic, expected " + std::string(magic), offset_ - 4);
    }
  }

  std::uint64_t u64() {
    std::array<unsigned char, 8> b{};
    read(reinterpret_cast<char*>(b.data()), 8);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  double f32() {
    std::array<unsigned char, 4> b{};
    read(reinterpret_cast<char*>(b.data()), 4);
    return load_f32le(b.data());
  }

 private:
  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw ParseError("unexpected end of data", offset_ + static_cast<std::size_t>(in_.gcount()));
    }
    offset_ += n;
  }

  std::istream& in_;
  std::size_t offset_ = 0;
};

}  // namespace dvdet::wire
