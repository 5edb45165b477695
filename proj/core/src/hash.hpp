#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string_view>

namespace fame::detail {

class Fnv1a {
 public:
  void bytes(std::span<const unsigned char> data) {
    for (unsigned char c : data) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      state_ ^= static_cast<unsigned char>(v >> (8 * i));
      state_ *= 0x100000001b3ULL;
    }
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    bytes({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
  }
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace fame::detail
