#pragma once

#include <string>

#include "opesel/types.hpp"
#include "opesel/view.hpp"

namespace opesel {

// Basis used for the pairwise least-squares temporal-difference fit.
//  vanilla          phi = [q_i, q_j]
//  normalized       phi = [q_i / c_i, q_j / c_j]
//  normalized_diff  phi = [q_i / c_i, (q_j - q_i) / c_ij]
// The scales c are empirical standard deviations, so ill-scaled candidates
// cannot dominate the max-correlation loss; the difference basis additionally
// keeps the second column informative when two candidates nearly coincide.
enum class FeatureVariant { vanilla, normalized, normalized_diff };

FeatureVariant parse_feature_variant(const std::string& name);
std::string feature_variant_name(FeatureVariant v);

// One two-candidate basis.  j == -1 selects the constant discriminator
// (single feature identically 1), used by the average-TD cross-check.
struct FeaturePair {
  Index i = 0;
  Index j = -1;
  FeatureVariant variant = FeatureVariant::normalized_diff;
  Scalar c_i = 1.0;
  Scalar c_j = 1.0;
  Scalar c_ij = 1.0;

  Index dim() const { return j < 0 ? 1 : 2; }
  // Coefficients recovering candidate `cand` (i or j) in this basis:
  // phi(s,a) . theta(cand) == q_cand(s,a).
  Vec theta(Index cand) const;
};

// Computes the scales from the view's full estimates: weighted standard
// deviation of q_i, q_j and q_j - q_i, floored at 1e-8 * v_max.
FeaturePair make_feature_pair(const EvalView& view, Index i, Index j,
                              FeatureVariant variant);

// First-moment blocks of the fixed-point system in the pair's basis.  On a
// split cache the left factor comes from the A halves and the right factor
// (and the TD target) from the B halves, so no estimate multiplies itself
// and E[sigma] has no Monte-Carlo variance bias.
struct LstdMoments {
  Mat sigma;        // E_w[ phi_A(s,a) phi_B(s,a)^T ]
  Mat sigma_cross;  // E_w[ phi_A(s,a) phi_B(s',pi)^T ]
  Mat a_mat;        // sigma - gamma * sigma_cross
  Vec b_vec;        // E_w[ phi_A(s,a) r ]
  Scalar sigma_min_a = 0.0;  // conditioning diagnostic of a_mat
};

LstdMoments empirical_moments(const EvalView& view, const FeaturePair& pair);

// max-norm fixed-point residual ||A theta - b||_inf of a candidate encoding.
Scalar lstdq_param_loss(const LstdMoments& mo, const Vec& theta);

// Same residual by the direct route: the discriminator features correlated
// against the candidate's per-row TD error, E_w[phi_A * (q_cand - r -
// gamma * q_cand')], with compensated summation.  Algebraically equal to
// a_mat * theta(cand) - b_vec; kept separate as a cross-check.
Vec pairwise_td_correlation(const EvalView& view, const FeaturePair& pair,
                            Index cand);

// Smallest singular value (dense SVD).
Scalar sigma_min(const Mat& m);

}  // namespace opesel
