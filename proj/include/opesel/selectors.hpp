#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "opesel/lstdq.hpp"
#include "opesel/mdp.hpp"
#include "opesel/view.hpp"

namespace opesel {

// Per-candidate losses plus the argmin choice.  `losses[k]` scores candidate
// `indices[k]` of the call; `chosen` is the global model index (ties go to
// the lowest global index).  predicted_return / ope_error stay NaN until the
// experiment runner fills them from the chosen model's exact tables.
struct SelectorResult {
  std::string selector_id;
  Vec losses;
  Index chosen = -1;
  Scalar predicted_return = std::numeric_limits<Scalar>::quiet_NaN();
  Scalar ope_error = std::numeric_limits<Scalar>::quiet_NaN();
  std::map<std::string, Vec> diagnostics;
};

// Mean squared TD error E_w[(q_i - r - gamma q_i')^2] on the full estimates.
// Biased even at exact values: it adds gamma^2 E[Var_{s'} q_i(s', pi)].
SelectorResult td_squared(const EvalView& view, const std::vector<Index>& indices);

// |E_w[q_i - r - gamma q_i']| on the candidate-side (B) halves; identical to
// correlating the TD error against a constant discriminator.
SelectorResult avg_bellman(const EvalView& view, const std::vector<Index>& indices);

// Pairwise fixed-point tournament: candidate i is scored by the worst
// |discriminator x TD| correlation over every pair basis (i, j), and the
// candidate with the smallest worst case wins.  Every pair is evaluated by
// both the moment route and the direct TD route; disagreement beyond
// accumulated rounding throws, since the two must be algebraically equal.
// Requires at least two candidates.
SelectorResult lstd_tournament(const EvalView& view,
                               const std::vector<Index>& indices,
                               FeatureVariant variant);

inline const std::vector<Scalar>& bvft_default_resolutions() {
  static const std::vector<Scalar> r = {0.02, 0.05, 0.1, 0.2};
  return r;
}

// Piecewise-constant projection baseline: rows are bucketed into cells of
// width rho * v_max over the (q_i, q_j) value pairs, the TD target is
// averaged per cell, and candidate i pays the mean squared residual against
// that projection (min over resolutions, max over partners j).  With one
// point per cell this is exactly td_squared.  Root-mean-square losses per
// resolution are kept in diagnostics ("bvft_rms_res<k>").
SelectorResult bvft(const EvalView& view, const std::vector<Index>& indices,
                    const std::vector<Scalar>& resolutions = bvft_default_resolutions());

// Model-prediction distance baseline: for each data row, compares the
// observed next state against `samples` next states drawn from candidate
// model i, as mean Euclidean distance between embedded states.  Biased
// toward deterministic dynamics by construction.
SelectorResult naive_model_based(const EvalView& view,
                                 const std::vector<Index>& indices,
                                 const std::vector<TabularMDP>& models,
                                 const Mat& embedding, int samples,
                                 std::uint64_t seed);

// Two-step regression selector: pick the backup g = T_j q_i closest to the
// TD target in mean square, then score candidate i by E_w[(g - q_i)^2].
// The winning j per candidate lands in diagnostics["regression_argmin_j"].
SelectorResult regression_zitovsky(const EvalView& view,
                                   const std::vector<Index>& indices);

// Variance-corrected squared TD error: subtracts the best achievable
// regression loss over the backup class from the TD-squared objective.
// Clipped at zero for ranking; raw values in diagnostics["antos_raw"].
SelectorResult regression_antos(const EvalView& view,
                                const std::vector<Index>& indices);

// Sign-test selector: loss_i = max_j E_w[sgn(q_i - T_j q_i) * td_i] with
// sgn(0) = +1; the maximizing sign pattern plays the role of the absolute
// value without squaring.
SelectorResult sign_flip(const EvalView& view, const std::vector<Index>& indices);

// Control baseline: losses are the ranks of a seed-derived permutation, so
// the argmin is uniform over candidates and reproducible.
SelectorResult random_baseline(const std::vector<Index>& indices,
                               std::uint64_t seed);

// Extra inputs for selectors that need more than the view.
struct SelectorContext {
  const std::vector<TabularMDP>* models = nullptr;  // naive_model_based
  const Mat* embedding = nullptr;                   // rows = embedded states
  int naive_samples = 16;
  std::uint64_t seed = 0;  // naive_model_based and random_baseline
};

// Dispatch by name: "td_squared", "avg_bellman", "lstd_tournament[:variant]",
// "bvft", "naive_model_based", "regression_zitovsky", "regression_antos",
// "sign_flip", "random_baseline".  The tournament variant defaults to
// normalized_diff.
SelectorResult run_selector(const std::string& name, const EvalView& view,
                            const std::vector<Index>& indices,
                            const SelectorContext& ctx);

// True when `name` parses to a known selector specification.
bool selector_name_valid(const std::string& name);

// Normalized form of a selector specification; spells out defaulted variants
// (e.g. "lstd_tournament" -> "lstd_tournament:normalized_diff").
std::string canonical_selector_id(const std::string& name);

// Planar fixture demonstrating the determinism bias of the naive
// model-prediction loss: the true dynamics scatter uniformly over the four
// corners (+-1, +-1) (expected pairwise distance 1 + sqrt(2)/2), while a
// wrong deterministic model jumps to the origin (distance sqrt(2)) and
// therefore wins.  Rewards are identically zero; the start state emits the
// only transition.
struct DeterminismBiasFixture {
  TabularMDP truth;
  TabularMDP det;     // deterministic wrong model
  Mat embedding;      // 6 x 2 planar coordinates
  Vec start_dist;     // point mass on the start pair (s0, a0)
};
DeterminismBiasFixture make_determinism_bias_fixture(Scalar gamma = 0.9);

}  // namespace opesel
