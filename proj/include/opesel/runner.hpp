#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "opesel/data.hpp"
#include "opesel/mdp.hpp"
#include "opesel/qcache.hpp"
#include "opesel/selectors.hpp"

namespace opesel {

// One experiment: a ground-truth model, a candidate subset of the model grid,
// a dataset size, target policies to average over, and the selectors to race.
struct ExperimentUnit {
  std::string unit_id;
  Index truth_index = 0;                 // position in the model grid
  std::vector<Index> candidate_indices;  // positions in the model grid
  std::string behavior_id;
  Index n = 0;
  std::vector<Index> target_indices;     // positions in the target list
  std::vector<std::string> selector_specs;
  RolloutSpec rollout_spec;
  Index bootstrap_reps = 1;
  std::uint64_t master_seed = 0;
};

// One (selector, target, bootstrap replicate) evaluation.
struct ReportRow {
  std::string unit_id;
  std::string selector;  // kind, without the variant suffix
  std::string variant;   // tournament basis name, empty otherwise
  std::string target;    // target policy id
  Index rep = 0;
  Index chosen = -1;     // global model index
  Scalar predicted_return = 0.0;  // exact J of the chosen model
  Scalar true_return = 0.0;       // exact J of the ground truth
  Scalar ope_error = 0.0;         // |predicted_return - true_return|
  Scalar sigma_min = 0.0;  // tournament conditioning at the chosen candidate
  Scalar c_one = 0.0;      // coverage ratios of the target vs the data dist
  Scalar c_inf = 0.0;
  bool realizable = false;
  Vec losses;  // per-candidate, aligned with candidate_indices
};

// Per-selector summary: replicate means over targets, percentile 95% CI.
struct AggregateRow {
  std::string unit_id;
  std::string selector;  // full spec string including any variant
  Scalar mean_error = 0.0;
  Scalar ci_low = 0.0;
  Scalar ci_high = 0.0;
};

struct UnitReport {
  ExperimentUnit unit;
  bool realizable = false;
  std::vector<CoverageDiagnostics> coverage;  // one per target
  std::vector<ReportRow> rows;        // selector-major, then target, then rep
  std::vector<AggregateRow> aggregates;
};

// Shared immutable inputs resolved by the pipeline.
struct UnitContext {
  const std::vector<TabularMDP>* grid = nullptr;
  const std::vector<Policy>* targets = nullptr;
  const Mat* embedding = nullptr;  // state embedding for naive_model_based
  int naive_samples = 16;
  int jobs = 1;
  // Exact (s,a) distribution of the data when the caller knows it; when
  // empty the empirical frequencies are used for the coverage diagnostics.
  Vec data_dist;
};

// Empirical (s,a) frequencies of a dataset, flattened s * A + a.
Vec empirical_sa_dist(const Dataset& data, Index num_states,
                      Index num_actions);

// Runs every selector on every (target, bootstrap replicate) cell over a
// prebuilt cache per target (caches[k] belongs to target_indices[k] and must
// match the dataset hash and the full model grid).  All replicates share the
// B index multisets drawn from (master_seed, "bootstrap"); true and predicted
// returns are exact tabular solves, never Monte-Carlo.
UnitReport run_unit(const ExperimentUnit& unit, const Dataset& data,
                    const std::vector<const QCache*>& caches,
                    const UnitContext& ctx);

// Candidate subsets {center - r, center, center + r} per radius, reusing the
// parent unit's data and caches (no new rollouts).
std::vector<UnitReport> gap_sweep(const ExperimentUnit& base,
                                  const Dataset& data,
                                  const std::vector<const QCache*>& caches,
                                  const UnitContext& ctx, Index center_index,
                                  const std::vector<Index>& radii);

// Sliding candidate windows {offset, ..., offset + window - 1}; the rows'
// realizable flag records whether the ground truth falls inside the window.
std::vector<UnitReport> misspec_sweep(const ExperimentUnit& base,
                                      const Dataset& data,
                                      const std::vector<const QCache*>& caches,
                                      const UnitContext& ctx, Index window,
                                      const std::vector<Index>& offsets);

// Builds the cache of a mixture dataset by copying columns out of its two
// parents (matched via mix_src / mix_src_index), so mixtures never trigger
// rollouts.  Parents must agree on policy, models, discount, and rollout
// budget.
QCache assemble_mixed_cache(const Dataset& mixed, const QCache& on_cache,
                            const QCache& off_cache);

// One run per lambda on mix_datasets(on, off, lambda, unit.n).  on_dist /
// off_dist are the exact (s,a) distributions of the two sources; the mixture
// coverage diagnostics use their exact convex combination at the realized
// mixing fraction round(lambda * n) / n.
std::vector<UnitReport> coverage_sweep(const ExperimentUnit& unit,
                                       const Dataset& on_data,
                                       const Dataset& off_data,
                                       const std::vector<const QCache*>& on_caches,
                                       const std::vector<const QCache*>& off_caches,
                                       const Vec& on_dist, const Vec& off_dist,
                                       const std::vector<Scalar>& lambdas,
                                       const UnitContext& ctx);

// CSV emission with shortest-round-trip float formatting; both writers are
// deterministic in the report contents.
// Row columns: unit_id, selector, variant, target, rep, chosen,
// predicted_return, true_return, ope_error, sigma_min, c_one, c_inf,
// realizable_flag.
void write_report_csv(const std::vector<UnitReport>& reports,
                      const std::filesystem::path& path);
// Aggregate columns: unit_id, selector, mean_error, ci_low, ci_high.
void write_aggregate_csv(const std::vector<UnitReport>& reports,
                         const std::filesystem::path& path);

}  // namespace opesel
