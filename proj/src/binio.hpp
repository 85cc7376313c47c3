// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary I/O helpers shared by the TGMF/TGML/TGMM/TGMO formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "tgm/types.hpp"

namespace tgm::binio {

inline void writeBytes(std::ostream& os, const void* src, std::size_t n) {
  os.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
  if (!os) throw IoError("write failed");
}

inline void writeU32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  writeBytes(os, b, 4);
}

inline void writeU64(std::ostream& os, std::uint64_t v) {
  writeU32(os, static_cast<std::uint32_t>(v));
  writeU32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void writeF32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  writeU32(os, bits);
}

inline void writeF64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  writeU64(os, bits);
}

// Tracks the byte offset so format errors can point at it.
class Reader {
 public:
  explicit Reader(std::istream& is, std::string context)
      : is_(is), context_(std::move(context)) {}

  std::size_t offset() const { return offset_; }

  void readBytes(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw FormatError(context_ + ": truncated file at byte offset " + std::to_string(offset_));
    offset_ += n;
  }

  std::uint32_t readU32() {
    unsigned char b[4];
    readBytes(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint64_t readU64() {
    const std::uint64_t lo = readU32();
    const std::uint64_t hi = readU32();
    return lo | (hi << 32);
  }

  float readF32() {
    const std::uint32_t bits = readU32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  double readF64() {
    const std::uint64_t bits = readU64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  void expectMagic(const char magic[4]) {
    char got[4];
    readBytes(got, 4);
    if (std::memcmp(got, magic, 4) != 0)
      throw FormatError(context_ + ": bad magic '" + std::string(got, 4) + "', expected '" +
                        std::string(magic, 4) + "'");
  }

  bool atEof() {
    is_.peek();
    return is_.eof();
  }

 private:
  std::istream& is_;
  std::string context_;
  std::size_t offset_ = 0;
};

}  // namespace tgm::binio
