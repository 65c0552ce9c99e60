#include <doctest.h>

#include <cmath>
#include <vector>

#include "opesel/dp.hpp"
#include "opesel/numeric.hpp"
#include "opesel/sim.hpp"
#include "oracles.hpp"

using namespace opesel;

TEST_SUITE("dp") {

TEST_CASE("single-state geometric series") {
  const TabularMDP m = testing::single_state_mdp(1.0, 0.5);
  const Policy pi = uniform_policy(1, 1);
  const QTable q = exact_q_pi(m, pi);
  CHECK(q.values(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(exact_return(m, pi) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("discount zero collapses Q to the reward table") {
  TabularMDP m = testing::random_mdp(5, 8, 3, 0.9);
  m.discount = 0.0;
  const Policy pi = testing::random_policy(6, 8, 3);
  const QTable q = exact_q_pi(m, pi);
  for (Index s = 0; s < m.num_states; ++s)
    for (Index a = 0; a < m.num_actions; ++a)
      CHECK(q.values(s, a) == doctest::Approx(m.reward[m.sa(s, a)]).epsilon(1e-14));
}

TEST_CASE("agrees with fixed-point iteration oracle on random instances") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TabularMDP m = testing::random_mdp(100 + seed, 10, 3, 0.9);
    const Policy pi = testing::random_policy(200 + seed, 10, 3);
    const QTable q = exact_q_pi(m, pi);
    const std::vector<double> oracle = testing::vi_q_pi(m, pi, 1e-13);
    double max_diff = 0.0;
    for (Index s = 0; s < 10; ++s)
      for (Index a = 0; a < 3; ++a)
        max_diff = std::max(max_diff,
                            std::abs(q.values(s, a) -
                                     oracle[static_cast<std::size_t>(s * 3 + a)]));
    CHECK(max_diff < 1e-9);
  }
}

TEST_CASE("apply_bellman fixed point, reward collapse, and contraction") {
  const TabularMDP m = testing::random_mdp(7, 9, 2, 0.85);
  const Policy pi = testing::random_policy(8, 9, 2);
  const QTable q = exact_q_pi(m, pi);
  const QTable back = apply_bellman(m, pi, q);
  CHECK((back.values - q.values).cwiseAbs().maxCoeff() < 1e-10);

  QTable zero;
  zero.values = Mat::Zero(9, 2);
  TabularMDP m0 = m;
  m0.discount = 0.0;
  const QTable collapsed = apply_bellman(m0, pi, zero);
  for (Index s = 0; s < 9; ++s)
    for (Index a = 0; a < 2; ++a)
      CHECK(collapsed.values(s, a) == m0.reward[m0.sa(s, a)]);

  // gamma-contraction in sup norm on random pairs.
  Rng g = Rng::derive(5, "contraction");
  for (int trial = 0; trial < 10; ++trial) {
    QTable f1, f2;
    f1.values = Mat(9, 2);
    f2.values = Mat(9, 2);
    for (Index i = 0; i < 18; ++i) {
      f1.values(i / 2, i % 2) = 10.0 * g.next_double() - 5.0;
      f2.values(i / 2, i % 2) = 10.0 * g.next_double() - 5.0;
    }
    const Scalar lhs = (apply_bellman(m, pi, f1).values -
                        apply_bellman(m, pi, f2).values)
                           .cwiseAbs()
                           .maxCoeff();
    const Scalar rhs =
        m.discount * (f1.values - f2.values).cwiseAbs().maxCoeff();
    CHECK(lhs <= rhs + 1e-12);
  }
}

TEST_CASE("exact_return matches the Q-route and stays within bounds") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TabularMDP m = testing::random_mdp(300 + seed, 12, 3, 0.92);
    const Policy pi = testing::random_policy(400 + seed, 12, 3);
    const Scalar j_v = exact_return(m, pi);
    const Scalar j_q = return_from_q(m, pi, exact_q_pi(m, pi));
    CHECK(j_v == doctest::Approx(j_q).epsilon(1e-10));
    CHECK(j_v >= 0.0);
    CHECK(j_v <= m.v_max());
  }
}

TEST_CASE("exact_return matches a large Monte-Carlo average") {
  const TabularMDP m = testing::random_mdp(55, 5, 2, 0.8);
  const Policy pi = testing::random_policy(56, 5, 2);
  const Scalar exact = exact_return(m, pi);

  const SimModel sim = make_sim(m);
  const SimPolicy sim_pi = make_sim_policy(pi);
  const int horizon = default_horizon(m.discount, 1e-6);
  const int n = 1000000;
  KahanSum sum, sumsq;
  Rng seq = Rng::derive(57, "mc_return_seeds");
  for (int i = 0; i < n; ++i) {
    Rng g = Rng::derive(seq.next_u64(), "mc_return");
    const Scalar x = rollout_return_from_start(sim, sim_pi, horizon, g);
    sum.add(x);
    sumsq.add(x * x);
  }
  const Scalar mean = sum.value() / n;
  const Scalar var = sumsq.value() / n - mean * mean;
  const Scalar se = std::sqrt(var / n);
  CHECK(std::abs(mean - exact) < 3.0 * se + 1e-6 * m.v_max());
}

TEST_CASE("rollout determinism and frozen small values") {
  const TabularMDP single = testing::single_state_mdp(1.0, 0.5);
  const Policy pi1 = uniform_policy(1, 1);
  Rng g = Rng::derive(1, "any");
  // 1 + 0.5 + 0.25
  CHECK(rollout_return(single, pi1, 0, 0, 3, g) == doctest::Approx(1.75).epsilon(1e-12));
  Rng g2 = Rng::derive(1, "any");
  CHECK(rollout_return(single, pi1, 0, 0, 1, g2) == doctest::Approx(1.0));

  const TabularMDP m = testing::random_mdp(60, 6, 2, 0.9);
  const Policy pi = testing::random_policy(61, 6, 2);
  Rng a = Rng::derive(99, "rollout", {4});
  Rng b = Rng::derive(99, "rollout", {4});
  const Scalar ra = rollout_return(m, pi, 2, 1, 50, a);
  const Scalar rb = rollout_return(m, pi, 2, 1, 50, b);
  CHECK(ra == rb);
  CHECK(ra >= 0.0);
  CHECK(ra <= m.r_max * (1.0 - std::pow(m.discount, 50)) / (1.0 - m.discount) + 1e-12);
}

TEST_CASE("rollout mean approaches exact Q within tolerance") {
  const TabularMDP m = testing::random_mdp(70, 5, 2, 0.85);
  const Policy pi = testing::random_policy(71, 5, 2);
  const QTable q = exact_q_pi(m, pi);
  const SimModel sim = make_sim(m);
  const SimPolicy sim_pi = make_sim_policy(pi);
  const int horizon = default_horizon(m.discount);
  const int n = 100000;
  KahanSum sum, sumsq;
  for (int i = 0; i < n; ++i) {
    Rng g = Rng::derive(72, "q_rollout", {static_cast<std::uint64_t>(i)});
    const Scalar x = rollout_return(sim, sim_pi, 3, 1, horizon, g);
    sum.add(x);
    sumsq.add(x * x);
  }
  const Scalar mean = sum.value() / n;
  const Scalar var = sumsq.value() / n - mean * mean;
  const Scalar se = std::sqrt(var / n);
  const Scalar trunc = std::pow(m.discount, horizon) * m.v_max();
  CHECK(std::abs(mean - q.values(3, 1)) < 3.0 * se + trunc);
}

TEST_CASE("occupancy solves match a brute-force trajectory oracle") {
  const TabularMDP m = testing::random_mdp(80, 5, 2, 0.5);
  const Policy pi = testing::random_policy(81, 5, 2);
  const Vec d = discounted_occupancy(m, pi);
  CHECK(d.sum() == doctest::Approx(1.0).epsilon(1e-12));

  // Monte-Carlo: accumulate (1-gamma) gamma^t visit mass along trajectories.
  const SimModel sim = make_sim(m);
  const SimPolicy sim_pi = make_sim_policy(pi);
  const int horizon = default_horizon(m.discount, 1e-6);
  const int trips = 1000000;
  std::vector<double> mass(static_cast<std::size_t>(m.num_states * m.num_actions), 0.0);
  const RowSampler d0 = make_row_sampler(m.initial_dist);
  for (int i = 0; i < trips; ++i) {
    Rng g = Rng::derive(82, "occupancy", {static_cast<std::uint64_t>(i)});
    Index s = sample_row(d0, g);
    Scalar disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      const Index a = sample_row(sim_pi.action[static_cast<std::size_t>(s)], g);
      mass[static_cast<std::size_t>(m.sa(s, a))] += disc;
      s = sample_row(sim.next_state[static_cast<std::size_t>(m.sa(s, a))], g);
      disc *= m.discount;
    }
  }
  double total = 0.0;
  for (double v : mass) total += v;
  double tv = 0.0;
  for (Index i = 0; i < d.size(); ++i)
    tv += std::abs(d[i] - mass[static_cast<std::size_t>(i)] / total);
  CHECK(tv / 2.0 < 1e-2);
}

TEST_CASE("coverage diagnostics: on-policy, uniform, and missing mass") {
  const TabularMDP m = testing::random_mdp(90, 6, 2, 0.9);
  const Policy pi = testing::random_policy(91, 6, 2);
  const Vec d = discounted_occupancy(m, pi);

  const CoverageDiagnostics on = occupancy_and_coverage(m, pi, d);
  CHECK(on.c_one == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(on.c_inf == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(on.c_one <= on.c_inf + 1e-12);

  const Index sa = m.num_states * m.num_actions;
  const Vec uniform = Vec::Constant(sa, 1.0 / static_cast<Scalar>(sa));
  const CoverageDiagnostics u = occupancy_and_coverage(m, pi, uniform);
  CHECK(u.c_inf >= 1.0);
  CHECK(u.c_one >= 1.0 - 1e-12);
  CHECK(u.c_one <= u.c_inf + 1e-12);
  // Closed form: c_inf = max d * SA, c_one = SA * sum d^2.
  CHECK(u.c_inf == doctest::Approx(d.maxCoeff() * sa).epsilon(1e-9));
  CHECK(u.c_one == doctest::Approx(sa * d.squaredNorm()).epsilon(1e-9));

  Vec missing = uniform;
  Index covered_pair = 0;
  d.maxCoeff(&covered_pair);
  missing[covered_pair] = 0.0;
  missing /= missing.sum();
  const CoverageDiagnostics inf_case = occupancy_and_coverage(m, pi, missing);
  CHECK(std::isinf(inf_case.c_inf));
}

TEST_CASE("point-mass occupancy against a uniform data distribution") {
  // Absorbing single state with 1 action: occupancy is a point mass; against
  // uniform mu over k pairs, c_inf = k.
  TabularMDP m;
  m.id = "pair";
  m.num_states = 2;
  m.num_actions = 2;
  m.discount = 0.5;
  m.r_max = 1.0;
  m.transition = Mat::Zero(4, 2);
  for (Index i = 0; i < 4; ++i) m.transition(i, 0) = 1.0;  // everything to s0
  m.reward = Vec::Zero(4);
  m.initial_dist = Vec::Zero(2);
  m.initial_dist[0] = 1.0;
  Policy pi = uniform_policy(2, 2);
  pi.probs(0, 0) = 1.0;
  pi.probs(0, 1) = 0.0;  // deterministic at s0
  const Vec uniform = Vec::Constant(4, 0.25);
  const CoverageDiagnostics diag = occupancy_and_coverage(m, pi, uniform);
  CHECK(diag.c_inf == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("optimal_q dominates policy values and matches its oracle") {
  const TabularMDP m = testing::random_mdp(95, 8, 3, 0.9);
  const QTable opt = optimal_q(m);
  const std::vector<double> oracle = testing::vi_q_opt(m);
  for (Index s = 0; s < m.num_states; ++s)
    for (Index a = 0; a < m.num_actions; ++a)
      CHECK(opt.values(s, a) ==
            doctest::Approx(oracle[static_cast<std::size_t>(s * 3 + a)])
                .epsilon(1e-8));
  const Policy pi = testing::random_policy(96, 8, 3);
  const QTable q = exact_q_pi(m, pi);
  CHECK((opt.values - q.values).minCoeff() > -1e-8);
}

TEST_CASE("default_horizon obeys the tail rule") {
  const int h = default_horizon(0.95);
  CHECK(std::pow(0.95, h) / 0.05 <= 1e-4);
  CHECK(std::pow(0.95, h - 1) / 0.05 > 1e-4);
  CHECK(default_horizon(0.0) == 1);
}

TEST_CASE("rollout counter increments per rollout") {
  const TabularMDP m = testing::single_state_mdp(1.0, 0.5);
  const Policy pi = uniform_policy(1, 1);
  const std::uint64_t before = rollouts_performed();
  Rng g = Rng::derive(1, "count");
  rollout_return(m, pi, 0, 0, 2, g);
  rollout_return(m, pi, 0, 0, 2, g);
  CHECK(rollouts_performed() == before + 2);
}

}  // TEST_SUITE
