#pragma once

#include <stdexcept>

#include "opesel/data.hpp"
#include "opesel/qcache.hpp"

namespace opesel {

// One weighted evaluation pass over cached estimates.  Row e reads dataset
// fields at e and cache columns at cols[e].  Plain datasets use the identity
// mapping; bootstrap replicates map rows back into the cache built on their
// source dataset via source_indices; exact enumeration datasets carry the
// transition probabilities as weights.  Weights are normalized to sum to 1.
struct EvalView {
  const QCache* cache = nullptr;
  const Dataset* data = nullptr;
  IVec cols;
  Vec weights;

  Index n() const { return cols.size(); }
};

inline EvalView make_weighted_view(const QCache& cache, const Dataset& data,
                                   const Vec& weights) {
  if (weights.size() != data.n())
    throw std::invalid_argument("make_weighted_view: weight length mismatch");
  EvalView v;
  v.cache = &cache;
  v.data = &data;
  const bool mapped = data.source_indices.size() == data.n() && data.n() > 0;
  v.cols.resize(data.n());
  for (Index t = 0; t < data.n(); ++t) {
    const Index col = mapped ? data.source_indices[t] : t;
    if (col < 0 || col >= cache.n())
      throw std::invalid_argument("make_weighted_view: cache column out of range");
    v.cols[t] = col;
  }
  Scalar total = 0.0;
  for (Index t = 0; t < weights.size(); ++t) {
    if (weights[t] < 0.0)
      throw std::invalid_argument("make_weighted_view: negative weight");
    total += weights[t];
  }
  if (!(total > 0.0))
    throw std::invalid_argument("make_weighted_view: weights sum to zero");
  v.weights = weights / total;
  return v;
}

inline EvalView make_view(const QCache& cache, const Dataset& data) {
  return make_weighted_view(cache, data, Vec::Constant(data.n(), 1.0));
}

}  // namespace opesel
