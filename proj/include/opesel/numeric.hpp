#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "opesel/types.hpp"

namespace opesel {

// Compensated accumulator (Kahan-Babuska/Neumaier variant).  Several
// invariants in this codebase check that two algebraically equal computation
// routes agree to ~1e-12 absolute error; plain left-to-right summation over
// 1e5+ terms is not reliable there.
class KahanSum {
 public:
  void add(Scalar x) {
    const Scalar t = s_ + x;
    if (std::abs(s_) >= std::abs(x)) {
      c_ += (s_ - t) + x;
    } else {
      c_ += (x - t) + s_;
    }
    s_ = t;
  }
  Scalar value() const { return s_ + c_; }

 private:
  Scalar s_ = 0.0;
  Scalar c_ = 0.0;
};

inline Scalar kahan_mean(const std::vector<Scalar>& xs) {
  if (xs.empty()) return 0.0;
  KahanSum s;
  for (Scalar x : xs) s.add(x);
  return s.value() / static_cast<Scalar>(xs.size());
}

// Population standard deviation (divides by n, not n-1): these are moment
// normalizers, not inferential estimates.
inline Scalar kahan_std(const std::vector<Scalar>& xs) {
  if (xs.empty()) return 0.0;
  const Scalar m = kahan_mean(xs);
  KahanSum s;
  for (Scalar x : xs) s.add((x - m) * (x - m));
  return std::sqrt(std::max(0.0, s.value() / static_cast<Scalar>(xs.size())));
}

// Linear-interpolation percentile of a sample, p in [0, 1].
inline Scalar percentile(std::vector<Scalar> xs, Scalar p) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const Scalar pos = p * static_cast<Scalar>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, xs.size() - 1);
  const Scalar frac = pos - static_cast<Scalar>(lo);
  return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

}  // namespace opesel
