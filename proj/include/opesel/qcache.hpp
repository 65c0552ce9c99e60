#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "opesel/data.hpp"
#include "opesel/mdp.hpp"
#include "opesel/types.hpp"

namespace opesel {

// Rollout budget for one cached estimate.  horizon == 0 resolves to
// default_horizon(gamma) at build time; l must be even when split is set.
struct RolloutSpec {
  int l = 32;
  int horizon = 0;
  std::uint64_t master_seed = 0;
  bool split = true;
};

// Monte-Carlo estimates evaluated at every dataset row.  Row i of q_sa holds
// estimates of Q_{M_i}^pi(s_t, a_t); row i of q_next holds Q_{M_i}^pi(s'_t, pi)
// with the first action re-drawn from pi on every rollout.  With split set,
// the first l/2 and last l/2 rollouts are averaged separately into the *_a and
// *_b blocks and the full estimate is exactly their midpoint, which gives
// estimators two independent copies of every value at the same data row.
// backup row j*m+i holds the one-step mixed estimate (T_{M_j}^pi Q_{M_i}^pi)
// at (s_t, a_t): reward and next state from model j, continuation in model i.
struct QCache {
  RMat q_sa, q_next;      // m x n
  RMat q_sa_a, q_sa_b;    // m x n when split, else 0 x 0
  RMat q_next_a, q_next_b;
  RMat backup;            // (m*m) x n when built with backups, else 0 x 0

  RolloutSpec spec;       // spec.horizon holds the resolved value
  Scalar gamma = 0.0;     // shared discount of the cached model family
  Scalar v_max = 0.0;     // max_i r_max_i / (1 - gamma), the value scale
  std::vector<std::string> model_ids;
  std::string policy_id;
  std::string dataset_hash;

  Index models() const { return q_sa.rows(); }
  Index n() const { return q_sa.cols(); }
  bool has_backups() const { return backup.size() > 0; }
  Index backup_row(Index j, Index i) const { return j * models() + i; }

  // Half-estimate access that degrades to the full estimate for unsplit
  // caches, so estimators can be written once against the A/B convention.
  const RMat& sa_a() const { return spec.split ? q_sa_a : q_sa; }
  const RMat& sa_b() const { return spec.split ? q_sa_b : q_sa; }
  const RMat& next_a() const { return spec.split ? q_next_a : q_next; }
  const RMat& next_b() const { return spec.split ? q_next_b : q_next; }
};

// Build all estimates for `data` under `policy`.  Every rollout draws a
// dedicated counter-derived stream keyed by (field, model, row, rollout), so
// the result is byte-identical for any jobs count and any task interleaving.
// When resume_dir is non-empty, finished per-model (and per-model-pair) part
// files are written there and picked up by a later build of the same request;
// save_cache removes them once the final files exist.
QCache build_cache(const Dataset& data, const std::vector<TabularMDP>& models,
                   const Policy& policy, const RolloutSpec& spec,
                   bool with_backups, int jobs = 1,
                   const std::filesystem::path& resume_dir = {});

// Final on-disk layout: manifest.json plus one little-endian float64 block
// per matrix (row-major, matching the in-memory layout).
void save_cache(const QCache& cache, const std::filesystem::path& dir);
QCache load_cache(const std::filesystem::path& dir);

// Cheap manifest-only check that `dir` already holds the requested cache
// (backups may be present even when not required).  Block integrity is still
// verified by load_cache.
bool cache_matches(const std::filesystem::path& dir,
                   const std::string& dataset_hash_hex,
                   const std::string& policy_id,
                   const std::vector<std::string>& model_ids,
                   const RolloutSpec& spec, int resolved_horizon, Scalar gamma,
                   bool need_backups);

}  // namespace opesel
