#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

#include "opesel/types.hpp"

namespace opesel {

// Counter-based deterministic randomness.  Every consumer derives an
// independent stream from (master seed, purpose tag, integer coordinates), so
// results do not depend on scheduling order or thread count.  The generator is
// splitmix64; streams with distinct derivations are statistically independent
// for our purposes.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_u64(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  std::uint64_t s = h;
  return splitmix64(s);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  Rng() : state_(0x853c49e6748fea9bULL) {}
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static Rng derive(std::uint64_t seed, std::string_view tag,
                    std::initializer_list<std::uint64_t> coords = {}) {
    std::uint64_t h = mix_u64(seed, hash_tag(tag));
    for (std::uint64_t c : coords) h = mix_u64(h, c);
    return Rng(h);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53 random bits.
  Scalar next_double() {
    return static_cast<Scalar>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).  n must be positive and far below 2^63, which
  // covers every use here; modulo bias is negligible at these ranges but we
  // reject to keep draws exact.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = ~0ULL - ~0ULL % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Index into a cumulative-probability table: first i with u < cdf[i].
  // cdf must be nondecreasing with final entry >= 1 - 1e-12.
  Index next_categorical(const Vec& cdf) {
    const Scalar u = next_double();
    const Index n = cdf.size();
    for (Index i = 0; i < n - 1; ++i) {
      if (u < cdf[i]) return i;
    }
    return n - 1;
  }

 private:
  std::uint64_t state_;
};

}  // namespace opesel
