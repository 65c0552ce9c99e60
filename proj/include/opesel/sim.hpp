#pragma once

#include <cstdint>
#include <vector>

#include "opesel/mdp.hpp"
#include "opesel/rng.hpp"

namespace opesel {

// Sparse inverse-CDF sampler for one probability row.  Rows in this codebase
// have small support (a handful of reachable cells), so a linear cumulative
// scan beats binary search.
struct RowSampler {
  std::vector<std::int32_t> idx;
  std::vector<Scalar> cdf;
};

RowSampler make_row_sampler(const Vec& probs);
Index sample_row(const RowSampler& row, Rng& g);

// Precomputed simulation tables for one MDP.  States whose every action
// self-loops with a common reward are marked absorbing so rollouts can close
// the discounted tail in closed form instead of looping.
struct SimModel {
  const TabularMDP* mdp = nullptr;
  std::vector<RowSampler> next_state;   // per flattened (s,a)
  std::vector<std::uint8_t> absorbing;  // per state
  Vec absorb_reward;                    // per state; valid where absorbing
};

struct SimPolicy {
  const Policy* policy = nullptr;
  std::vector<RowSampler> action;  // per state
};

SimModel make_sim(const TabularMDP& model);
SimPolicy make_sim_policy(const Policy& policy);

// One truncated discounted return sum_{t<H} gamma^t r_t starting from the
// forced pair (s0, a0); subsequent actions follow the policy.  Deterministic
// given the rng stream.
Scalar rollout_return(const SimModel& model, const SimPolicy& policy, Index s0,
                      Index a0, int horizon, Rng& g);
// Convenience overload building the simulation tables on the fly.
Scalar rollout_return(const TabularMDP& model, const Policy& policy, Index s0,
                      Index a0, int horizon, Rng& g);

// First transition taken in `first`, all remaining steps in `rest`; this is
// the single-step mixed Bellman backup rollout.
Scalar rollout_return_mixed(const SimModel& first, const SimModel& rest,
                            const SimPolicy& policy, Index s0, Index a0,
                            int horizon, Rng& g);

// Return from an initial state drawn from d0 with the first action from the
// policy (used by Monte-Carlo J estimates and the occupancy oracle).
Scalar rollout_return_from_start(const SimModel& model, const SimPolicy& policy,
                                 int horizon, Rng& g);

// Process-wide count of rollouts performed, used to assert that cache-reusing
// code paths trigger no new simulation.
std::uint64_t rollouts_performed();

// Smallest H with gamma^H / (1 - gamma) <= tail_tol, i.e. truncation error at
// most tail_tol * r_max.
int default_horizon(Scalar gamma, Scalar tail_tol = 1e-4);

}  // namespace opesel
