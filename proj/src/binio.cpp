// SPDX-License-Identifier: Apache-2.0
#include "binio.hpp"

#include <fstream>
#include <iterator>

namespace lcl::binio {

void Writer::save(const std::filesystem::path& path) const {
  // Write to a sibling temp file first so readers never observe a partial file.
  auto tmp = path;
  tmp += ".tmp";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Reader Reader::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Reader(std::move(buf));
}

void Reader::fail(std::string_view msg) const {
  throw ParseError("at byte offset " + std::to_string(pos_) + ": " + std::string(msg));
}

std::string Reader::bytes(std::size_t n, std::string_view what) {
  if (remaining() < n) fail("unexpected end of file reading " + std::string(what));
  std::string s(buf_.data() + pos_, n);
  pos_ += n;
  return s;
}

std::uint64_t Reader::get(int n, std::string_view what) {
  if (remaining() < static_cast<std::size_t>(n)) {
    fail("unexpected end of file reading " + std::string(what));
  }
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
  }
  pos_ += n;
  return v;
}

}  // namespace lcl::binio
