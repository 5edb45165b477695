#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "fame/error.hpp"

namespace fame::detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void tag(const char (&magic)[5]) { buf_.append(magic, 4); }

  const std::string& bytes() const noexcept { return buf_; }
  void flush_to(std::ostream& out) {
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    buf_.clear();
  }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

// Reads little-endian fields from a stream, tracking the absolute offset so
// failures can report where the data went wrong.
class ByteReader {
 public:
  ByteReader(std::istream& in, ErrorKind on_error, std::int64_t base_offset = 0)
      : in_(in), on_error_(on_error), offset_(base_offset) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(get(4))); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }

  void expect_tag(const char (&magic)[5]) {
    char got[4];
    std::int64_t at = offset_;
    read_raw(got, 4);
    for (int i = 0; i < 4; ++i) {
      if (got[i] != magic[i]) {
        fail(on_error_, std::string("bad magic, expected '") + magic + "'", at);
      }
    }
  }

  [[noreturn]] void error(const std::string& message) const { fail(on_error_, message, offset_); }

  std::int64_t offset() const noexcept { return offset_; }
  ErrorKind error_kind() const noexcept { return on_error_; }

 private:
  void read_raw(char* dst, int n) {
    in_.read(dst, n);
    if (in_.gcount() != n) {
      fail(on_error_, "unexpected end of data", offset_ + in_.gcount());
    }
    offset_ += n;
  }
  std::uint64_t get(int n) {
    unsigned char raw[8];
    read_raw(reinterpret_cast<char*>(raw), n);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(raw[i]) << (8 * i);
    return v;
  }

  std::istream& in_;
  ErrorKind on_error_;
  std::int64_t offset_;
};

}  // namespace fame::detail
