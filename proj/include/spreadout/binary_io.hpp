#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "spreadout/error.hpp"

namespace spreadout::binary {

/// Little-endian byte sink.
class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  template <typename T>
    requires std::is_integral_v<T>
  void uint(T v) {
    auto u = static_cast<std::make_unsigned_t<T>>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
  }

  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<char>& buffer() const noexcept { return buf_; }

 private:
  std::vector<char> buf_;
};

/// Little-endian byte source over an in-memory file image.
class Reader {
 public:
  explicit Reader(std::vector<char> data) : data_(std::move(data)) {}

  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  void expect_magic(std::string_view magic, std::string_view what) {
    need(magic.size(), what);
    if (std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0)
      throw FormatError(std::string(what) + ": bad magic, expected \"" + std::string(magic) + "\"");
    pos_ += magic.size();
  }

  template <typename T>
    requires std::is_unsigned_v<T>
  T uint(std::string_view what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  double f64(std::string_view what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }

  void need(std::size_t n, std::string_view what) const {
    if (remaining() < n) throw FormatError(std::string(what) + ": truncated file");
  }

 private:
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace spreadout::binary
