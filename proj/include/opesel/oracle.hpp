#pragma once

#include <vector>

#include "opesel/data.hpp"
#include "opesel/mdp.hpp"
#include "opesel/qcache.hpp"
#include "opesel/view.hpp"

namespace opesel {

// Exact-expectation harness: estimators that consume a (cache, data, weights)
// view compute closed-form expectations instead of sample averages when fed
// this.  The dataset enumerates every (s, a, s') in the support of
// sa_dist x P_truth with weight sa_dist(s,a) * P(s'|s,a); the cache holds
// exact Q-values, so there is no Monte-Carlo noise anywhere.
struct ExactHarness {
  Dataset data;
  Vec weights;
  QCache cache;

  EvalView view() const { return make_weighted_view(cache, data, weights); }
};

// Fill the harness from exact dynamic programming: q_sa rows come from
// exact_q_pi per model (both halves equal, l = 0 marks the cache as exact),
// q_next takes the policy-expected value at s', and backup row (j, i) applies
// one exact Bellman step of model j to model i's table.
ExactHarness make_exact_harness(const TabularMDP& truth,
                                const std::vector<TabularMDP>& models,
                                const Policy& policy, const Vec& sa_dist,
                                bool with_backups = true);

}  // namespace opesel
