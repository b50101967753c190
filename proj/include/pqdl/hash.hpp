#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace pqdl {

/// 64-bit FNV-1a. Used for parameter fingerprints, label checksums and
/// config hashes; not a cryptographic digest.
class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, std::size_t n) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& u64(std::uint64_t v) noexcept {
    for (int i = 0; i < 8; ++i) {
      const auto b = static_cast<unsigned char>(v >> (8 * i));
      bytes(&b, 1);
    }
    return *this;
  }
  Fnv1a& f64(double v) noexcept { return u64(std::bit_cast<std::uint64_t>(v)); }
  Fnv1a& f64s(std::span<const double> vs) noexcept {
    for (double v : vs) f64(v);
    return *this;
  }
  Fnv1a& str(std::string_view s) noexcept {
    u64(s.size());
    return bytes(s.data(), s.size());
  }
  std::uint64_t value() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace pqdl
