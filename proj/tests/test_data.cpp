#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "opesel/data.hpp"
#include "opesel/dp.hpp"
#include "opesel/errors.hpp"
#include "opesel/sim.hpp"
#include "oracles.hpp"

using namespace opesel;

TEST_SUITE("data") {

TEST_CASE("noisy_behavior mixes toward uniform") {
  QTable q;
  q.values = Mat(3, 4);
  q.values.setZero();
  q.values(0, 2) = 1.0;
  q.values(1, 0) = 1.0;
  q.values(2, 3) = 1.0;
  const Policy base = greedy_policy(q, "det");

  const Policy same = noisy_behavior(base, 1.0);
  CHECK((same.probs - base.probs).cwiseAbs().maxCoeff() == 0.0);

  const Policy uniform = noisy_behavior(base, 0.0);
  CHECK(uniform.probs.minCoeff() == doctest::Approx(0.25).epsilon(1e-14));

  const Policy eps = noisy_behavior(base, 0.7);
  CHECK(eps.probs(0, 2) == doctest::Approx(0.775).epsilon(1e-14));
  CHECK(eps.probs(0, 0) == doctest::Approx(0.075).epsilon(1e-14));
  for (Index s = 0; s < 3; ++s)
    CHECK(eps.probs.row(s).sum() == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(noisy_behavior(base, 1.2), std::invalid_argument);
}

TEST_CASE("single-state dataset is the only possible tuple") {
  const TabularMDP m = testing::single_state_mdp(0.7, 0.5);
  const Policy pi = uniform_policy(1, 1);
  const Dataset d = sample_dataset(m, pi, 1, SampleMode::iid, 3);
  CHECK(d.n() == 1);
  CHECK(d.s[0] == 0);
  CHECK(d.a[0] == 0);
  CHECK(d.s_next[0] == 0);
  CHECK(d.r[0] == doctest::Approx(0.7));
}

TEST_CASE("iid frequencies converge to the exact occupancy") {
  const TabularMDP m = testing::random_mdp(500, 5, 2, 0.8);
  const Policy mu = testing::random_policy(501, 5, 2);
  const Vec occ = discounted_occupancy(m, mu);
  const Index n = 1000000;
  const Dataset d = sample_dataset(m, mu, n, SampleMode::iid, 77);
  std::vector<double> freq(10, 0.0);
  for (Index t = 0; t < n; ++t)
    freq[static_cast<std::size_t>(m.sa(d.s[t], d.a[t]))] += 1.0;
  double tv = 0.0;
  for (Index i = 0; i < 10; ++i)
    tv += std::abs(freq[static_cast<std::size_t>(i)] / n - occ[i]);
  CHECK(tv / 2.0 < 5e-3);
}

TEST_CASE("conditional next-state frequencies follow the model") {
  const TabularMDP m = testing::random_mdp(510, 4, 2, 0.7);
  const Policy mu = testing::random_policy(511, 4, 2);
  const Dataset d = sample_dataset(m, mu, 200000, SampleMode::iid, 78);
  // Pick the most frequent (s,a) and compare empirical s' distribution.
  std::vector<double> count(8, 0.0);
  for (Index t = 0; t < d.n(); ++t)
    count[static_cast<std::size_t>(m.sa(d.s[t], d.a[t]))] += 1.0;
  Index best = 0;
  for (Index i = 1; i < 8; ++i)
    if (count[static_cast<std::size_t>(i)] > count[static_cast<std::size_t>(best)])
      best = i;
  std::vector<double> next(4, 0.0);
  double total = 0.0;
  for (Index t = 0; t < d.n(); ++t) {
    if (m.sa(d.s[t], d.a[t]) != best) continue;
    next[static_cast<std::size_t>(d.s_next[t])] += 1.0;
    total += 1.0;
  }
  for (Index sn = 0; sn < 4; ++sn)
    CHECK(next[static_cast<std::size_t>(sn)] / total ==
          doctest::Approx(m.transition(best, sn)).epsilon(0.05).scale(1.0));
}

TEST_CASE("sampling is deterministic in the seed") {
  const TabularMDP m = testing::random_mdp(520, 6, 3, 0.9);
  const Policy mu = testing::random_policy(521, 6, 3);
  const Dataset a = sample_dataset(m, mu, 5000, SampleMode::iid, 9);
  const Dataset b = sample_dataset(m, mu, 5000, SampleMode::iid, 9);
  const Dataset c = sample_dataset(m, mu, 5000, SampleMode::iid, 10);
  CHECK(dataset_hash(a) == dataset_hash(b));
  CHECK(dataset_hash(a) != dataset_hash(c));
  CHECK(a.s == b.s);
  CHECK(a.r == b.r);
}

TEST_CASE("trajectory mode yields exactly n chained tuples") {
  const TabularMDP m = testing::random_mdp(530, 6, 2, 0.9);
  const Policy mu = testing::random_policy(531, 6, 2);
  const Index n = 2500;
  const Dataset d = sample_dataset(m, mu, n, SampleMode::trajectory, 11);
  CHECK(d.n() == n);
  CHECK(d.mode == SampleMode::trajectory);
  const int episode_len = default_horizon(m.discount);
  // Within an episode, consecutive tuples chain s' -> s.
  int checked = 0;
  for (Index t = 0; t + 1 < n; ++t) {
    if ((t + 1) % episode_len == 0) continue;  // episode boundary
    CHECK(d.s[t + 1] == d.s_next[t]);
    ++checked;
  }
  CHECK(checked > 0);
  const Dataset again = sample_dataset(m, mu, n, SampleMode::trajectory, 11);
  CHECK(dataset_hash(d) == dataset_hash(again));
}

TEST_CASE("bootstrap replicates: determinism, multiset bookkeeping, e^-1 law") {
  const TabularMDP m = testing::random_mdp(540, 4, 2, 0.8);
  const Policy mu = testing::random_policy(541, 4, 2);

  const Dataset one = sample_dataset(m, mu, 1, SampleMode::iid, 12);
  const auto reps1 = bootstrap_resample(one, 5, 99);
  for (const Dataset& rep : reps1) {
    CHECK(rep.n() == 1);
    CHECK(rep.source_indices[0] == 0);
    CHECK(rep.s[0] == one.s[0]);
  }

  const Dataset d = sample_dataset(m, mu, 3200, SampleMode::iid, 13);
  const Index reps = 200;
  const auto replicates = bootstrap_resample(d, reps, 100);
  CHECK(replicates.size() == 200);

  double absent_total = 0.0;
  std::vector<double> multiplicity(3200, 0.0);
  for (const Dataset& rep : replicates) {
    std::vector<char> seen(3200, 0);
    for (Index t = 0; t < rep.n(); ++t) {
      const Index src = rep.source_indices[t];
      seen[static_cast<std::size_t>(src)] = 1;
      multiplicity[static_cast<std::size_t>(src)] += 1.0;
      // Replicate rows are copies of their source rows.
      CHECK(rep.s[t] == d.s[src]);
      CHECK(rep.r[t] == d.r[src]);
    }
    Index absent = 0;
    for (char c : seen) absent += (c == 0);
    absent_total += static_cast<double>(absent) / 3200.0;
  }
  CHECK(absent_total / reps == doctest::Approx(std::exp(-1.0)).epsilon(0.03));

  double mean_mult = 0.0;
  for (double v : multiplicity) mean_mult += v / (3200.0 * reps);
  CHECK(mean_mult == doctest::Approx(1.0).epsilon(1e-12));

  const auto again = bootstrap_resample(d, reps, 100);
  CHECK(again[7].source_indices == replicates[7].source_indices);
}

TEST_CASE("mix_datasets endpoints, counts, and provenance") {
  const TabularMDP m = testing::random_mdp(550, 5, 2, 0.85);
  const Policy mu_on = testing::random_policy(551, 5, 2);
  const Policy mu_off = testing::random_policy(552, 5, 2);
  const Dataset on = sample_dataset(m, mu_on, 100, SampleMode::iid, 14);
  const Dataset off = sample_dataset(m, mu_off, 100, SampleMode::iid, 15);

  const Dataset all_on = mix_datasets(on, off, 1.0, 100, 7);
  CHECK(dataset_hash(all_on) == dataset_hash(on));
  CHECK(all_on.s == on.s);  // order preserved at the endpoint

  const Dataset all_off = mix_datasets(on, off, 0.0, 100, 7);
  CHECK(dataset_hash(all_off) == dataset_hash(off));

  const Dataset half = mix_datasets(on, off, 0.5, 100, 7);
  Index from_on = 0;
  for (Index t = 0; t < 100; ++t) {
    const bool is_on = half.mix_src[t] == 0;
    from_on += is_on;
    const Dataset& src = is_on ? on : off;
    const Index row = half.mix_src_index[t];
    CHECK(half.s[t] == src.s[row]);
    CHECK(half.r[t] == src.r[row]);
    CHECK(half.s_next[t] == src.s_next[row]);
  }
  CHECK(from_on == 50);

  const Dataset half2 = mix_datasets(on, off, 0.5, 100, 7);
  CHECK(half2.s == half.s);

  CHECK_THROWS_AS(mix_datasets(on, off, 0.9, 150, 7), std::invalid_argument);
}

TEST_CASE("dataset files round-trip and reject corruption") {
  namespace fs = std::filesystem;
  const TabularMDP m = testing::random_mdp(560, 6, 2, 0.9);
  const Policy mu = testing::random_policy(561, 6, 2);
  const Dataset d = sample_dataset(m, mu, 400, SampleMode::iid, 16);

  const fs::path dir = fs::temp_directory_path() / "opesel_data_test";
  fs::remove_all(dir);
  save_dataset(d, dir, "main");
  const Dataset back = load_dataset(dir, "main");
  CHECK(back.n() == d.n());
  CHECK(back.s == d.s);
  CHECK(back.a == d.a);
  CHECK(back.s_next == d.s_next);
  CHECK(back.r == d.r);
  CHECK(back.behavior_id == d.behavior_id);
  CHECK(back.seed == d.seed);
  CHECK(dataset_hash(back) == dataset_hash(d));

  // Flip one byte in the block: load must fail the hash check.
  {
    std::fstream f(dir / "main.bin",
                   std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(17);
    char c;
    f.seekg(17);
    f.get(c);
    c = static_cast<char>(c ^ 0x01);
    f.seekp(17);
    f.put(c);
  }
  CHECK_THROWS_AS(load_dataset(dir, "main"), HashMismatchError);
  fs::remove_all(dir);
}

}  // TEST_SUITE
