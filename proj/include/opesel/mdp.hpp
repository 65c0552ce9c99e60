#pragma once

#include <string>
#include <vector>

#include "opesel/types.hpp"

namespace opesel {

// Finite MDP with dense tables.  Transition rows are indexed by the flattened
// state-action index sa = s * num_actions + a.
struct TabularMDP {
  std::string id;
  Index num_states = 0;
  Index num_actions = 0;
  Scalar discount = 0.0;
  Scalar r_max = 1.0;
  Mat transition;    // (S*A) x S; each row a distribution over next states
  Vec reward;        // S*A; entries in [0, r_max]
  Vec initial_dist;  // S; distribution over start states

  Index sa(Index s, Index a) const { return s * num_actions + a; }
  Scalar v_max() const { return r_max / (1.0 - discount); }
};

// Stochastic policy: S x A row-stochastic matrix plus a label used in
// manifests and reports.
struct Policy {
  std::string id;
  Mat probs;
};

// State-action value table with provenance labels.
struct QTable {
  std::string model_id;
  std::string policy_id;
  Mat values;  // S x A
};

// Ratios of a target policy's discounted occupancy d^pi to the data
// distribution mu, both over flattened (s,a) pairs.
struct CoverageDiagnostics {
  Scalar c_one = 1.0;  // E_{d^pi}[d^pi / mu]
  Scalar c_inf = 1.0;  // max over (s,a) of d^pi / mu
  Vec occupancy_pi;    // S*A, sums to 1
  Vec data_dist;       // S*A, sums to 1
};

// Throw std::invalid_argument when tables violate the distribution / range
// invariants (rows summing to 1 within 1e-12, rewards in [0, r_max], ...).
void validate_mdp(const TabularMDP& m);
void validate_policy(const TabularMDP& m, const Policy& pi);

Policy uniform_policy(Index num_states, Index num_actions,
                      std::string id = "uniform");
// Deterministic argmax policy (lowest action index on ties).
Policy greedy_policy(const QTable& q, std::string id = "greedy");
// softmax(q / temperature) per state; temperature > 0.
Policy softmax_policy(const QTable& q, Scalar temperature, std::string id);

}  // namespace opesel
