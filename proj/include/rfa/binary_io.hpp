#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rfa/error.hpp"

namespace rfa::io {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

/// Appends little-endian encoded values to a byte buffer.
class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked little-endian cursor; every failure reports its byte offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  void expect_magic(std::string_view m, std::string_view what) {
    if (remaining() < m.size() || std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0) {
      throw FormatError(std::string("bad magic for ") + std::string(what), pos_);
    }
    pos_ += m.size();
  }

  template <typename T>
  T get(std::string_view field) {
    static_assert(std::is_trivially_copyable_v<T>);
    require(sizeof(T), field);
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::span<const std::uint8_t> take(std::size_t n, std::string_view field) {
    require(n, field);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  void require(std::size_t n, std::string_view field) const {
    if (remaining() < n) {
      throw FormatError("truncated payload while reading " + std::string(field), pos_);
    }
  }

  void expect_end() const {
    if (pos_ != data_.size()) throw FormatError("trailing bytes after payload", pos_);
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames, so a failed write never leaves a partial file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data);

void write_text_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace rfa::io
