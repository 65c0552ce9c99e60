#include "opesel/sim.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

namespace opesel {

namespace {

std::atomic<std::uint64_t> g_rollouts{0};

inline void count_rollout() {
  g_rollouts.fetch_add(1, std::memory_order_relaxed);
}

// Discounted tail of an absorbing state: r * sum_{k=0}^{rem-1} gamma^k,
// already scaled by the caller's current discount factor.
inline Scalar absorb_tail(Scalar r, Scalar gamma, int rem) {
  if (gamma == 0.0) return rem >= 1 ? r : 0.0;
  return r * (1.0 - std::pow(gamma, rem)) / (1.0 - gamma);
}

}  // namespace

RowSampler make_row_sampler(const Vec& probs) {
  RowSampler row;
  Scalar cum = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) {
      cum += probs[i];
      row.idx.push_back(static_cast<std::int32_t>(i));
      row.cdf.push_back(cum);
    }
  }
  if (row.idx.empty() || std::abs(cum - 1.0) > 1e-9)
    throw std::invalid_argument("make_row_sampler: row is not a distribution");
  // Guard the last bucket against cumulative rounding.
  row.cdf.back() = 1.0;
  return row;
}

Index sample_row(const RowSampler& row, Rng& g) {
  const Scalar u = g.next_double();
  const std::size_t n = row.cdf.size();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (u < row.cdf[i]) return row.idx[i];
  }
  return row.idx[n - 1];
}

SimModel make_sim(const TabularMDP& model) {
  SimModel sim;
  sim.mdp = &model;
  const Index sa = model.num_states * model.num_actions;
  sim.next_state.reserve(static_cast<std::size_t>(sa));
  for (Index i = 0; i < sa; ++i)
    sim.next_state.push_back(make_row_sampler(model.transition.row(i).transpose()));
  sim.absorbing.assign(static_cast<std::size_t>(model.num_states), 0);
  sim.absorb_reward = Vec::Zero(model.num_states);
  for (Index s = 0; s < model.num_states; ++s) {
    bool absorbing = true;
    const Scalar r0 = model.reward[model.sa(s, 0)];
    for (Index a = 0; a < model.num_actions && absorbing; ++a) {
      if (model.transition(model.sa(s, a), s) != 1.0) absorbing = false;
      if (model.reward[model.sa(s, a)] != r0) absorbing = false;
    }
    sim.absorbing[static_cast<std::size_t>(s)] = absorbing ? 1 : 0;
    if (absorbing) sim.absorb_reward[s] = r0;
  }
  return sim;
}

SimPolicy make_sim_policy(const Policy& policy) {
  SimPolicy sim;
  sim.policy = &policy;
  sim.action.reserve(static_cast<std::size_t>(policy.probs.rows()));
  for (Index s = 0; s < policy.probs.rows(); ++s)
    sim.action.push_back(make_row_sampler(policy.probs.row(s).transpose()));
  return sim;
}

namespace {

// Core loop shared by all rollout flavors: continue from `s` with `rem` steps
// left and accumulated discount `disc`.
Scalar continue_rollout(const SimModel& model, const SimPolicy& policy, Index s,
                        int rem, Scalar disc, Scalar acc, Rng& g) {
  const TabularMDP& mdp = *model.mdp;
  const Scalar gamma = mdp.discount;
  while (rem > 0) {
    if (model.absorbing[static_cast<std::size_t>(s)]) {
      return acc + disc * absorb_tail(model.absorb_reward[s], gamma, rem);
    }
    const Index a = sample_row(policy.action[static_cast<std::size_t>(s)], g);
    const Index i = mdp.sa(s, a);
    acc += disc * mdp.reward[i];
    s = sample_row(model.next_state[static_cast<std::size_t>(i)], g);
    disc *= gamma;
    --rem;
  }
  return acc;
}

}  // namespace

Scalar rollout_return(const SimModel& model, const SimPolicy& policy, Index s0,
                      Index a0, int horizon, Rng& g) {
  if (horizon < 1) throw std::invalid_argument("rollout_return: horizon must be >= 1");
  count_rollout();
  const TabularMDP& mdp = *model.mdp;
  const Index i = mdp.sa(s0, a0);
  if (model.absorbing[static_cast<std::size_t>(s0)])
    return absorb_tail(model.absorb_reward[s0], mdp.discount, horizon);
  Scalar acc = mdp.reward[i];
  const Index s1 = sample_row(model.next_state[static_cast<std::size_t>(i)], g);
  return continue_rollout(model, policy, s1, horizon - 1, mdp.discount, acc, g);
}

Scalar rollout_return(const TabularMDP& model, const Policy& policy, Index s0,
                      Index a0, int horizon, Rng& g) {
  const SimModel sim = make_sim(model);
  const SimPolicy sim_pi = make_sim_policy(policy);
  return rollout_return(sim, sim_pi, s0, a0, horizon, g);
}

Scalar rollout_return_mixed(const SimModel& first, const SimModel& rest,
                            const SimPolicy& policy, Index s0, Index a0,
                            int horizon, Rng& g) {
  if (horizon < 1)
    throw std::invalid_argument("rollout_return_mixed: horizon must be >= 1");
  count_rollout();
  const TabularMDP& mdp = *first.mdp;
  const Index i = mdp.sa(s0, a0);
  const Scalar acc = mdp.reward[i];
  if (horizon == 1) return acc;
  const Index s1 = sample_row(first.next_state[static_cast<std::size_t>(i)], g);
  return continue_rollout(rest, policy, s1, horizon - 1, mdp.discount, acc, g);
}

Scalar rollout_return_from_start(const SimModel& model, const SimPolicy& policy,
                                 int horizon, Rng& g) {
  if (horizon < 1)
    throw std::invalid_argument("rollout_return_from_start: horizon must be >= 1");
  count_rollout();
  const RowSampler d0 = make_row_sampler(model.mdp->initial_dist);
  const Index s0 = sample_row(d0, g);
  return continue_rollout(model, policy, s0, horizon, 1.0, 0.0, g);
}

std::uint64_t rollouts_performed() {
  return g_rollouts.load(std::memory_order_relaxed);
}

int default_horizon(Scalar gamma, Scalar tail_tol) {
  if (gamma <= 0.0) return 1;
  const Scalar h = std::log(tail_tol * (1.0 - gamma)) / std::log(gamma);
  return std::max(1, static_cast<int>(std::ceil(h)));
}

}  // namespace opesel
