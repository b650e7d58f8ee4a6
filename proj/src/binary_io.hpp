#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tomoforge/error.hpp"

namespace tomo::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void f32(double v) { put(static_cast<float>(v)); }
  void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  void zeros(std::size_t n) { bytes_.insert(bytes_.end(), n, 0); }

  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string context,
             ErrorCode code = ErrorCode::io)
      : bytes_(bytes), context_(std::move(context)), code_(code) {}

  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
      fail(code_, context_ + ": bad magic, expected \"" + std::string(m) + "\"");
    pos_ += m.size();
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  double f32() { return static_cast<double>(get<float>()); }
  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) { raw(n); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void expect_end() {
    if (remaining() != 0)
      fail(code_, context_ + ": " + std::to_string(remaining()) + " trailing bytes");
  }

 private:
  void need(std::size_t n) {
    if (bytes_.size() - pos_ < n) fail(code_, context_ + ": truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::string context_;
  ErrorCode code_;
  std::size_t pos_ = 0;
};

}  // namespace tomo::detail
