#pragma once

// Little-endian primitives for the on-disk formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "compress/error.hpp"

namespace compress::binary {

class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  const std::vector<char>& buffer() const noexcept { return buf_; }

  void save(const std::filesystem::path& path) const;

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path);
  explicit Reader(std::vector<char> data) : buf_(std::move(data)) {}

  void expect_magic(std::string_view magic);
  std::uint8_t u8();
  std::uint32_t u32();
  float f32() { return std::bit_cast<float>(u32()); }

  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  void require(std::size_t n) const;
  /// Throws SizeMismatch when unread bytes are left.
  void expect_end() const;

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace compress::binary
