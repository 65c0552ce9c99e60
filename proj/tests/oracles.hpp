#pragma once

// Test-only reference implementations.  These deliberately avoid the library's
// computation paths (no Eigen solves, no shared helpers) so that agreement
// between an oracle and the implementation is meaningful evidence, not an
// identity.

#include <cmath>
#include <cstdint>
#include <vector>

#include "opesel/mdp.hpp"
#include "opesel/rng.hpp"

namespace opesel::testing {

// Policy evaluation by plain fixed-point iteration over nested loops.
inline std::vector<double> vi_q_pi(const TabularMDP& m, const Policy& pi,
                                   double tol = 1e-13,
                                   int max_iter = 2000000) {
  const auto S = static_cast<std::size_t>(m.num_states);
  const auto A = static_cast<std::size_t>(m.num_actions);
  std::vector<double> q(S * A, 0.0), next(S * A, 0.0);
  for (int it = 0; it < max_iter; ++it) {
    double delta = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t a = 0; a < A; ++a) {
        const std::size_t sa = s * A + a;
        double acc = 0.0;
        for (std::size_t sn = 0; sn < S; ++sn) {
          const double p = m.transition(static_cast<Index>(sa),
                                        static_cast<Index>(sn));
          if (p == 0.0) continue;
          double v = 0.0;
          for (std::size_t an = 0; an < A; ++an)
            v += pi.probs(static_cast<Index>(sn), static_cast<Index>(an)) *
                 q[sn * A + an];
          acc += p * v;
        }
        next[sa] = m.reward[static_cast<Index>(sa)] + m.discount * acc;
        delta = std::max(delta, std::abs(next[sa] - q[sa]));
      }
    }
    q = next;
    if (delta <= tol) break;
  }
  return q;
}

// Optimal-value iteration with the same pedestrian style.
inline std::vector<double> vi_q_opt(const TabularMDP& m, double tol = 1e-13,
                                    int max_iter = 2000000) {
  const auto S = static_cast<std::size_t>(m.num_states);
  const auto A = static_cast<std::size_t>(m.num_actions);
  std::vector<double> q(S * A, 0.0), next(S * A, 0.0);
  for (int it = 0; it < max_iter; ++it) {
    double delta = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t a = 0; a < A; ++a) {
        const std::size_t sa = s * A + a;
        double acc = 0.0;
        for (std::size_t sn = 0; sn < S; ++sn) {
          const double p = m.transition(static_cast<Index>(sa),
                                        static_cast<Index>(sn));
          if (p == 0.0) continue;
          double best = q[sn * A];
          for (std::size_t an = 1; an < A; ++an)
            best = std::max(best, q[sn * A + an]);
          acc += p * best;
        }
        next[sa] = m.reward[static_cast<Index>(sa)] + m.discount * acc;
        delta = std::max(delta, std::abs(next[sa] - q[sa]));
      }
    }
    q = next;
    if (delta <= tol) break;
  }
  return q;
}

// Random MDP generator for property tests.  Transition rows are drawn from a
// symmetric Dirichlet via normalized exponentials, optionally sparsified.
inline TabularMDP random_mdp(std::uint64_t seed, Index num_states,
                             Index num_actions, Scalar gamma,
                             int support = 0) {
  Rng g = Rng::derive(seed, "random_mdp");
  TabularMDP m;
  m.id = "random_" + std::to_string(seed);
  m.num_states = num_states;
  m.num_actions = num_actions;
  m.discount = gamma;
  m.r_max = 1.0;
  const Index sa = num_states * num_actions;
  m.transition = Mat::Zero(sa, num_states);
  for (Index i = 0; i < sa; ++i) {
    if (support > 0 && support < num_states) {
      // Pick `support` distinct columns, then spread mass over them.
      std::vector<Index> cols;
      while (static_cast<int>(cols.size()) < support) {
        const auto c = static_cast<Index>(g.next_below(
            static_cast<std::uint64_t>(num_states)));
        bool seen = false;
        for (Index existing : cols) seen = seen || existing == c;
        if (!seen) cols.push_back(c);
      }
      Scalar total = 0.0;
      std::vector<Scalar> w(cols.size());
      for (std::size_t k = 0; k < cols.size(); ++k) {
        w[k] = -std::log(1.0 - g.next_double());
        total += w[k];
      }
      for (std::size_t k = 0; k < cols.size(); ++k)
        m.transition(i, cols[k]) = w[k] / total;
    } else {
      Scalar total = 0.0;
      for (Index c = 0; c < num_states; ++c) {
        const Scalar w = -std::log(1.0 - g.next_double());
        m.transition(i, c) = w;
        total += w;
      }
      m.transition.row(i) /= total;
    }
    // Exact renormalization so validate_mdp's 1e-12 row-sum check passes.
    m.transition.row(i) /= m.transition.row(i).sum();
  }
  m.reward = Vec(sa);
  for (Index i = 0; i < sa; ++i) m.reward[i] = g.next_double();
  m.initial_dist = Vec(num_states);
  Scalar total = 0.0;
  for (Index s = 0; s < num_states; ++s) {
    m.initial_dist[s] = -std::log(1.0 - g.next_double());
    total += m.initial_dist[s];
  }
  m.initial_dist /= total;
  m.initial_dist /= m.initial_dist.sum();
  return m;
}

inline Policy random_policy(std::uint64_t seed, Index num_states,
                            Index num_actions) {
  Rng g = Rng::derive(seed, "random_policy");
  Policy pi;
  pi.id = "random_policy_" + std::to_string(seed);
  pi.probs = Mat(num_states, num_actions);
  for (Index s = 0; s < num_states; ++s) {
    Scalar total = 0.0;
    for (Index a = 0; a < num_actions; ++a) {
      pi.probs(s, a) = -std::log(1.0 - g.next_double());
      total += pi.probs(s, a);
    }
    pi.probs.row(s) /= total;
    pi.probs.row(s) /= pi.probs.row(s).sum();
  }
  return pi;
}

// Hand-rolled single-state helpers used by the frozen-value examples.
inline TabularMDP single_state_mdp(Scalar reward, Scalar gamma) {
  TabularMDP m;
  m.id = "single";
  m.num_states = 1;
  m.num_actions = 1;
  m.discount = gamma;
  m.r_max = std::max(reward, 1.0);
  m.transition = Mat::Ones(1, 1);
  m.reward = Vec::Constant(1, reward);
  m.initial_dist = Vec::Ones(1);
  return m;
}

}  // namespace opesel::testing
