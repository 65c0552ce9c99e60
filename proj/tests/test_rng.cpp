#include <doctest.h>

#include <cmath>
#include <vector>

#include "opesel/hashutil.hpp"
#include "opesel/numeric.hpp"
#include "opesel/rng.hpp"

using namespace opesel;

TEST_SUITE("rng") {

TEST_CASE("derived streams are reproducible and tag-sensitive") {
  Rng a = Rng::derive(42, "demo", {1, 2});
  Rng b = Rng::derive(42, "demo", {1, 2});
  Rng c = Rng::derive(42, "demo", {2, 1});
  Rng d = Rng::derive(42, "other", {1, 2});
  bool all_equal = true, c_differs = false, d_differs = false;
  for (int i = 0; i < 64; ++i) {
    const auto va = a.next_u64();
    all_equal = all_equal && va == b.next_u64();
    c_differs = c_differs || va != c.next_u64();
    d_differs = d_differs || va != d.next_u64();
  }
  CHECK(all_equal);
  CHECK(c_differs);
  CHECK(d_differs);
}

TEST_CASE("next_double is uniform on [0,1)") {
  Rng g = Rng::derive(7, "uniformity");
  const int n = 200000;
  std::vector<int> buckets(10, 0);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = g.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    buckets[static_cast<std::size_t>(u * 10.0)]++;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
  for (int count : buckets)
    CHECK(std::abs(count - n / 10) < 5 * std::sqrt(static_cast<double>(n / 10)));
}

TEST_CASE("next_below covers its range uniformly") {
  Rng g = Rng::derive(3, "below");
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) counts[g.next_below(7)]++;
  for (int count : counts)
    CHECK(std::abs(count - n / 7) < 5 * std::sqrt(static_cast<double>(n / 7)));
}

TEST_CASE("categorical sampling matches the cdf") {
  Rng g = Rng::derive(11, "categorical");
  Vec cdf(3);
  cdf << 0.2, 0.7, 1.0;
  std::vector<int> counts(3, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[g.next_categorical(cdf)]++;
  CHECK(counts[0] / static_cast<double>(n) == doctest::Approx(0.2).epsilon(0.05));
  CHECK(counts[1] / static_cast<double>(n) == doctest::Approx(0.5).epsilon(0.05));
  CHECK(counts[2] / static_cast<double>(n) == doctest::Approx(0.3).epsilon(0.05));
}

TEST_CASE("content hash is order-sensitive and stable") {
  ContentHash h1, h2, h3;
  h1.str("abc").u64(5);
  h2.str("abc").u64(5);
  h3.u64(5).str("abc");
  CHECK(h1.value() == h2.value());
  CHECK(h1.value() != h3.value());
  CHECK(h1.hex().size() == 16);
  // FNV-1a of the empty input is the offset basis.
  CHECK(ContentHash().value() == 0xcbf29ce484222325ULL);
}

TEST_CASE("compensated summation survives adversarial cancellation") {
  KahanSum s;
  s.add(1.0);
  for (int i = 0; i < 10000000; ++i) s.add(1e-16);
  CHECK(s.value() == doctest::Approx(1.0 + 1e-9).epsilon(1e-12));

  // Large alternating terms around a tiny true sum.
  KahanSum t;
  for (int i = 0; i < 100000; ++i) {
    t.add(1e8 + 1.0);
    t.add(-1e8);
  }
  CHECK(t.value() == doctest::Approx(100000.0).epsilon(1e-12));
}

TEST_CASE("percentile interpolates linearly") {
  std::vector<Scalar> xs = {4.0, 1.0, 3.0, 2.0};
  CHECK(percentile(xs, 0.0) == doctest::Approx(1.0));
  CHECK(percentile(xs, 1.0) == doctest::Approx(4.0));
  CHECK(percentile(xs, 0.5) == doctest::Approx(2.5));
  CHECK(percentile(xs, 0.25) == doctest::Approx(1.75));
}

}  // TEST_SUITE
