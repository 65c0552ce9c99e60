#pragma once

#include "opesel/mdp.hpp"

namespace opesel {

// Exact Q^pi by direct dense solve of the (SA x SA) fixed-point system
// (I - gamma * P^pi) q = R.  Residual is checked to 1e-9 before returning.
QTable exact_q_pi(const TabularMDP& model, const Policy& policy);

// One exact application of the Bellman operator:
// (T^pi f)(s,a) = R(s,a) + gamma * sum_s' P(s'|s,a) * sum_a' pi(a'|s') f(s',a').
QTable apply_bellman(const TabularMDP& model, const Policy& policy,
                     const QTable& f);

// J(pi) = E_{d0}[V^pi(s)] via the state-value linear system (S x S).  This is
// deliberately a different linear system from exact_q_pi so the two routes can
// cross-check each other.
Scalar exact_return(const TabularMDP& model, const Policy& policy);

// d0- and pi-weighted average of a Q-table; equals exact_return when q is
// exact_q_pi of the same model/policy.
Scalar return_from_q(const TabularMDP& model, const Policy& policy,
                     const QTable& q);

// Normalized discounted state-action occupancy of `policy` plus coverage
// ratios against `data_dist` (length S*A, sums to 1).  Pairs outside the
// occupancy's support (below 1e-12) are ignored; covered-but-unvisited pairs
// make c_inf (and c_one) infinite rather than failing.
CoverageDiagnostics occupancy_and_coverage(const TabularMDP& model,
                                           const Policy& policy,
                                           const Vec& data_dist);

// Discounted occupancy alone: (1-gamma) * sum_t gamma^t Pr[s_t, a_t].
Vec discounted_occupancy(const TabularMDP& model, const Policy& policy);

// Optimal Q via value iteration, used to derive target-policy ladders.
// Iterates until the sup-norm update falls below tol (or max_iter).
QTable optimal_q(const TabularMDP& model, Scalar tol = 1e-12,
                 int max_iter = 1000000);

}  // namespace opesel
