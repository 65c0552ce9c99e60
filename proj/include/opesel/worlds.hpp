#pragma once

#include <string>
#include <vector>

#include "opesel/mdp.hpp"

namespace opesel {

// Parameters of one perturbed gridworld.  `world` names a registered base
// layout; `noise` is the action-slip probability (the chosen action is
// resampled uniformly over all four moves); `drift` is the probability of an
// extra downward push after the move.
struct EnvParams {
  std::string world = "default8";
  Scalar noise = 0.0;
  Scalar drift = 0.0;
  Scalar gamma = 0.95;
};

// Evenly spaced parameter ladder, endpoints inclusive (count == 1 -> {start}).
struct GridSpec {
  Scalar start = 0.0;
  Scalar stop = 0.0;
  Index count = 1;
};

enum class VaryAxis { noise, drift };

struct ModelGrid {
  std::vector<TabularMDP> models;
  std::vector<EnvParams> params;
  std::vector<Scalar> values;         // varied parameter per model, pre-clamp
  std::vector<std::string> warnings;  // clamp records, possibly empty
};

struct SanityReport {
  Mat j_matrix;  // models x policies, exact returns
  // Policies for which J varies by less than the threshold across models, and
  // models for which J varies by less than the threshold across policies.
  std::vector<Index> flat_policy_indices;
  std::vector<Index> flat_model_indices;
  bool degenerate_in_models = false;
  bool degenerate_in_policies = false;
  Scalar threshold = 0.0;  // 0.05 * v_max
};

// Registered layouts: "default8" (8x8, pits), "open5" (5x5, no pits),
// "cliff4" (4x4, pit row along the bottom).
std::vector<std::string> known_worlds();

// Build the tabular MDP for one parameter setting.  Goal and pit cells are
// absorbing (reward 1 and 0 per step respectively); other cells earn
// 1 - manhattan_distance_to_goal / max_distance.  Deterministic in params.
TabularMDP make_world(const EnvParams& params);

// Models differing only in the varied axis, ordered by parameter value.
// Values escaping [0,1] are clamped, with a warning recorded per clamp.
ModelGrid make_grid(const EnvParams& base, VaryAxis axis, const GridSpec& spec);

// Softmax-of-optimal-Q ladder over decreasing temperatures: index 0 is the
// most stochastic policy, the last is near-greedy.  Ids are "target_<k>".
std::vector<Policy> make_target_policies(const TabularMDP& reference,
                                         Index count);

// Exact J matrix over (model, policy) with degeneracy flags: a setting is
// degenerate when some policy cannot distinguish the models (or some model
// cannot distinguish the policies) by at least 0.05 * v_max.
SanityReport sanity_check_grid(const std::vector<TabularMDP>& models,
                               const std::vector<Policy>& policies);

// (row, col) coordinates per state of a layout, used as the state embedding
// for model-prediction distances.
Mat world_embedding(const std::string& world);

// Content hash of the layout tables (dimensions, start, goal, pits).
std::uint64_t layout_hash(const std::string& world);

}  // namespace opesel
