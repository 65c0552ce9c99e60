#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

namespace opesel {

// FNV-1a 64-bit content hashing, used for cache keys and file integrity tags.
class ContentHash {
 public:
  ContentHash() : h_(0xcbf29ce484222325ULL) {}

  ContentHash& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  ContentHash& str(std::string_view s) { return bytes(s.data(), s.size()); }

  ContentHash& u64(std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    return bytes(buf, 8);
  }

  ContentHash& f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    return u64(bits);
  }

  std::uint64_t value() const { return h_; }

  std::string hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[15 - i] = digits[(h_ >> (4 * i)) & 0xf];
    return out;
  }

 private:
  std::uint64_t h_;
};

}  // namespace opesel
