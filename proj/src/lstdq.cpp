#include "opesel/lstdq.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

#include "opesel/numeric.hpp"

namespace opesel {

FeatureVariant parse_feature_variant(const std::string& name) {
  if (name == "vanilla") return FeatureVariant::vanilla;
  if (name == "normalized") return FeatureVariant::normalized;
  if (name == "normalized_diff") return FeatureVariant::normalized_diff;
  throw std::invalid_argument("unknown feature variant: " + name);
}

std::string feature_variant_name(FeatureVariant v) {
  switch (v) {
    case FeatureVariant::vanilla: return "vanilla";
    case FeatureVariant::normalized: return "normalized";
    case FeatureVariant::normalized_diff: return "normalized_diff";
  }
  throw std::logic_error("bad feature variant");
}

Vec FeaturePair::theta(Index cand) const {
  if (j < 0)
    throw std::invalid_argument("theta: constant discriminator spans no candidate");
  Vec th(2);
  if (cand == i) {
    th << (variant == FeatureVariant::vanilla ? 1.0 : c_i), 0.0;
  } else if (cand == j) {
    switch (variant) {
      case FeatureVariant::vanilla: th << 0.0, 1.0; break;
      case FeatureVariant::normalized: th << 0.0, c_j; break;
      case FeatureVariant::normalized_diff: th << c_i, c_ij; break;
    }
  } else {
    throw std::invalid_argument("theta: candidate not in this pair");
  }
  return th;
}

namespace {

// Weighted population standard deviation of one cached row (or row
// difference) over the view.
Scalar weighted_std(const EvalView& view, const RMat& q, Index row_a, Index row_b) {
  KahanSum mean_acc;
  for (Index e = 0; e < view.n(); ++e) {
    const Index c = view.cols[e];
    const Scalar v = row_b < 0 ? q(row_a, c) : q(row_b, c) - q(row_a, c);
    mean_acc.add(view.weights[e] * v);
  }
  const Scalar mean = mean_acc.value();
  KahanSum var_acc;
  for (Index e = 0; e < view.n(); ++e) {
    const Index c = view.cols[e];
    const Scalar v = row_b < 0 ? q(row_a, c) : q(row_b, c) - q(row_a, c);
    var_acc.add(view.weights[e] * (v - mean) * (v - mean));
  }
  return std::sqrt(std::max(0.0, var_acc.value()));
}

// Evaluates the pair's features at one cache column of a q block.
inline void features(const FeaturePair& p, const RMat& q, Index col,
                     Scalar* out) {
  if (p.j < 0) {
    out[0] = 1.0;
    return;
  }
  const Scalar qi = q(p.i, col);
  const Scalar qj = q(p.j, col);
  switch (p.variant) {
    case FeatureVariant::vanilla:
      out[0] = qi;
      out[1] = qj;
      break;
    case FeatureVariant::normalized:
      out[0] = qi / p.c_i;
      out[1] = qj / p.c_j;
      break;
    case FeatureVariant::normalized_diff:
      out[0] = qi / p.c_i;
      out[1] = (qj - qi) / p.c_ij;
      break;
  }
}

void check_pair(const EvalView& view, const FeaturePair& pair) {
  const Index m = view.cache->models();
  if (pair.i < 0 || pair.i >= m || pair.j >= m)
    throw std::invalid_argument("feature pair indexes outside the cache");
}

}  // namespace

FeaturePair make_feature_pair(const EvalView& view, Index i, Index j,
                              FeatureVariant variant) {
  FeaturePair p;
  p.i = i;
  p.j = j;
  p.variant = variant;
  check_pair(view, p);
  if (j < 0 || variant == FeatureVariant::vanilla) return p;
  const Scalar floor = 1e-8 * view.cache->v_max;
  const RMat& q = view.cache->q_sa;
  p.c_i = std::max(floor, weighted_std(view, q, i, -1));
  if (variant == FeatureVariant::normalized)
    p.c_j = std::max(floor, weighted_std(view, q, j, -1));
  else
    p.c_ij = std::max(floor, weighted_std(view, q, i, j));
  return p;
}

LstdMoments empirical_moments(const EvalView& view, const FeaturePair& pair) {
  check_pair(view, pair);
  const QCache& cache = *view.cache;
  const Scalar gamma = cache.gamma;
  const Index d = pair.dim();
  KahanSum sig[4], cross[4], b[2];
  Scalar fa[2], fb[2], fn[2];
  for (Index e = 0; e < view.n(); ++e) {
    const Index c = view.cols[e];
    const Scalar w = view.weights[e];
    features(pair, cache.sa_a(), c, fa);
    features(pair, cache.sa_b(), c, fb);
    features(pair, cache.next_b(), c, fn);
    for (Index r = 0; r < d; ++r) {
      for (Index k = 0; k < d; ++k) {
        sig[r * d + k].add(w * fa[r] * fb[k]);
        cross[r * d + k].add(w * fa[r] * fn[k]);
      }
      b[r].add(w * fa[r] * view.data->r[e]);
    }
  }
  LstdMoments mo;
  mo.sigma.resize(d, d);
  mo.sigma_cross.resize(d, d);
  mo.b_vec.resize(d);
  for (Index r = 0; r < d; ++r) {
    for (Index k = 0; k < d; ++k) {
      mo.sigma(r, k) = sig[r * d + k].value();
      mo.sigma_cross(r, k) = cross[r * d + k].value();
    }
    mo.b_vec[r] = b[r].value();
  }
  mo.a_mat = mo.sigma - gamma * mo.sigma_cross;
  mo.sigma_min_a = sigma_min(mo.a_mat);
  return mo;
}

Scalar lstdq_param_loss(const LstdMoments& mo, const Vec& theta) {
  if (theta.size() != mo.a_mat.cols())
    throw std::invalid_argument("lstdq_param_loss: theta dimension mismatch");
  return (mo.a_mat * theta - mo.b_vec).cwiseAbs().maxCoeff();
}

Vec pairwise_td_correlation(const EvalView& view, const FeaturePair& pair,
                            Index cand) {
  check_pair(view, pair);
  if (cand < 0 || cand >= view.cache->models())
    throw std::invalid_argument("pairwise_td_correlation: bad candidate");
  const QCache& cache = *view.cache;
  const Scalar gamma = cache.gamma;
  const Index d = pair.dim();
  KahanSum acc[2];
  Scalar fa[2];
  for (Index e = 0; e < view.n(); ++e) {
    const Index c = view.cols[e];
    const Scalar td = cache.sa_b()(cand, c) - view.data->r[e] -
                      gamma * cache.next_b()(cand, c);
    features(pair, cache.sa_a(), c, fa);
    for (Index r = 0; r < d; ++r) acc[r].add(view.weights[e] * fa[r] * td);
  }
  Vec out(d);
  for (Index r = 0; r < d; ++r) out[r] = acc[r].value();
  return out;
}

Scalar sigma_min(const Mat& m) {
  if (m.size() == 0) throw std::invalid_argument("sigma_min: empty matrix");
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues().minCoeff();
}

}  // namespace opesel
