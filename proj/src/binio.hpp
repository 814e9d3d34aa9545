// SPDX-License-Identifier: Apache-2.0
// Little-endian binary encoding helpers shared by the universe and checkpoint
// formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lcl/error.hpp"

namespace lcl::binio {

class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

  const std::vector<char>& data() const noexcept { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> buf_;
};

/// Bounds-checked reader. Every failure throws ParseError naming the byte
/// offset and the field being decoded.
class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}
  static Reader from_file(const std::filesystem::path& path);

  std::string bytes(std::size_t n, std::string_view what);
  std::uint8_t u8(std::string_view what) { return static_cast<std::uint8_t>(get(1, what)); }
  std::uint16_t u16(std::string_view what) { return static_cast<std::uint16_t>(get(2, what)); }
  std::uint32_t u32(std::string_view what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::uint64_t u64(std::string_view what) { return get(8, what); }
  double f64(std::string_view what) { return std::bit_cast<double>(get(8, what)); }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  [[noreturn]] void fail(std::string_view msg) const;

 private:
  std::uint64_t get(int n, std::string_view what);
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace lcl::binio
