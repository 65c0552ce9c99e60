#include "opesel/selectors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <utility>

#include "opesel/data.hpp"
#include "opesel/numeric.hpp"
#include "opesel/qcache.hpp"
#include "opesel/rng.hpp"
#include "opesel/sim.hpp"

namespace opesel {

namespace {

void check_view(const EvalView& view) {
  if (view.cache == nullptr || view.data == nullptr)
    throw std::invalid_argument("selector: view not bound to cache and data");
  if (view.n() == 0) throw std::invalid_argument("selector: empty view");
}

void check_candidates(const EvalView& view, const std::vector<Index>& indices) {
  check_view(view);
  if (indices.empty())
    throw std::invalid_argument("selector: empty candidate set");
  const Index m = view.cache->models();
  for (Index g : indices)
    if (g < 0 || g >= m)
      throw std::invalid_argument("selector: candidate index out of range");
}

// Argmin over losses; ties resolve to the lowest global model index so the
// choice is invariant under reordering of the candidate list.
SelectorResult finish(std::string id, const std::vector<Index>& indices,
                      Vec losses) {
  SelectorResult res;
  res.selector_id = std::move(id);
  res.losses = std::move(losses);
  Index best = 0;
  for (Index k = 1; k < static_cast<Index>(indices.size()); ++k) {
    if (res.losses[k] < res.losses[best] ||
        (res.losses[k] == res.losses[best] && indices[k] < indices[best]))
      best = k;
  }
  res.chosen = indices[best];
  return res;
}

// Full-estimate TD error of candidate (global index) at view row e.
inline Scalar td_full(const EvalView& v, Index cand, Index e) {
  const Index col = v.cols[e];
  return v.cache->q_sa(cand, col) - v.data->r[e] -
         v.cache->gamma * v.cache->q_next(cand, col);
}

// Weighted mean squared distance between a backup row and the TD target of
// the candidate; step 1 of the regression selectors.
Scalar backup_regression_loss(const EvalView& v, Index j, Index cand) {
  const Index row = v.cache->backup_row(j, cand);
  KahanSum acc;
  for (Index e = 0; e < v.n(); ++e) {
    const Index col = v.cols[e];
    const Scalar target =
        v.data->r[e] + v.cache->gamma * v.cache->q_next(cand, col);
    const Scalar d = v.cache->backup(row, col) - target;
    acc.add(v.weights[e] * d * d);
  }
  return acc.value();
}

Scalar best_backup_loss(const EvalView& v, const std::vector<Index>& indices,
                        Index cand, Index* best_j) {
  Scalar best = std::numeric_limits<Scalar>::infinity();
  Index arg = -1;
  for (Index j : indices) {
    const Scalar loss = backup_regression_loss(v, j, cand);
    if (loss < best || (loss == best && j < arg)) {
      best = loss;
      arg = j;
    }
  }
  if (best_j != nullptr) *best_j = arg;
  return best;
}

Vec td_squared_losses(const EvalView& view, const std::vector<Index>& indices) {
  Vec losses(static_cast<Index>(indices.size()));
  for (Index k = 0; k < losses.size(); ++k) {
    KahanSum acc;
    for (Index e = 0; e < view.n(); ++e) {
      const Scalar td = td_full(view, indices[k], e);
      acc.add(view.weights[e] * td * td);
    }
    losses[k] = acc.value();
  }
  return losses;
}

struct CellKey {
  std::int64_t x = 0;
  std::int64_t y = 0;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = mix_u64(0x9e3779b97f4a7c15ULL,
                              static_cast<std::uint64_t>(k.x));
    return static_cast<std::size_t>(mix_u64(h, static_cast<std::uint64_t>(k.y)));
  }
};

// Weighted mean squared residual of candidate `cand` against the per-cell
// mean TD target, cells of the given width over the (q_cand, q_part) plane.
// Non-positive width puts every row in its own cell.
Scalar bvft_pair_loss(const EvalView& v, Index cand, Index part, Scalar width) {
  const Index n = v.n();
  struct CellAcc {
    KahanSum wsum, target;
  };
  std::unordered_map<CellKey, CellAcc, CellHash> cells;
  cells.reserve(static_cast<std::size_t>(2 * n));
  std::vector<CellKey> keys(static_cast<std::size_t>(n));
  for (Index e = 0; e < n; ++e) {
    const Index col = v.cols[e];
    CellKey key;
    if (width > 0.0) {
      key.x = static_cast<std::int64_t>(
          std::floor(v.cache->q_sa(cand, col) / width));
      key.y = static_cast<std::int64_t>(
          std::floor(v.cache->q_sa(part, col) / width));
    } else {
      key.x = e;
    }
    keys[static_cast<std::size_t>(e)] = key;
    CellAcc& cell = cells[key];
    cell.wsum.add(v.weights[e]);
    cell.target.add(v.weights[e] *
                    (v.data->r[e] + v.cache->gamma * v.cache->q_next(cand, col)));
  }
  KahanSum loss;
  for (Index e = 0; e < n; ++e) {
    const CellAcc& cell = cells[keys[static_cast<std::size_t>(e)]];
    const Scalar ghat = cell.target.value() / cell.wsum.value();
    const Scalar d = v.cache->q_sa(cand, v.cols[e]) - ghat;
    loss.add(v.weights[e] * d * d);
  }
  return loss.value();
}

enum class SelectorKind {
  td_squared,
  avg_bellman,
  lstd_tournament,
  bvft,
  naive_model_based,
  regression_zitovsky,
  regression_antos,
  sign_flip,
  random_baseline,
};

struct ParsedSelector {
  SelectorKind kind = SelectorKind::td_squared;
  FeatureVariant variant = FeatureVariant::normalized_diff;
};

ParsedSelector parse_selector(const std::string& name) {
  std::string head = name;
  std::string suffix;
  if (const auto pos = name.find(':'); pos != std::string::npos) {
    head = name.substr(0, pos);
    suffix = name.substr(pos + 1);
  }
  ParsedSelector p;
  if (head == "td_squared") p.kind = SelectorKind::td_squared;
  else if (head == "avg_bellman") p.kind = SelectorKind::avg_bellman;
  else if (head == "lstd_tournament") p.kind = SelectorKind::lstd_tournament;
  else if (head == "bvft") p.kind = SelectorKind::bvft;
  else if (head == "naive_model_based") p.kind = SelectorKind::naive_model_based;
  else if (head == "regression_zitovsky") p.kind = SelectorKind::regression_zitovsky;
  else if (head == "regression_antos") p.kind = SelectorKind::regression_antos;
  else if (head == "sign_flip") p.kind = SelectorKind::sign_flip;
  else if (head == "random_baseline") p.kind = SelectorKind::random_baseline;
  else throw std::invalid_argument("unknown selector: " + name);
  if (!suffix.empty()) {
    if (p.kind != SelectorKind::lstd_tournament)
      throw std::invalid_argument("selector takes no variant suffix: " + name);
    p.variant = parse_feature_variant(suffix);
  }
  return p;
}

}  // namespace

SelectorResult td_squared(const EvalView& view,
                          const std::vector<Index>& indices) {
  check_candidates(view, indices);
  return finish("td_squared", indices, td_squared_losses(view, indices));
}

SelectorResult avg_bellman(const EvalView& view,
                           const std::vector<Index>& indices) {
  check_candidates(view, indices);
  const RMat& sa = view.cache->sa_b();
  const RMat& next = view.cache->next_b();
  Vec losses(static_cast<Index>(indices.size()));
  for (Index k = 0; k < losses.size(); ++k) {
    const Index cand = indices[k];
    KahanSum acc;
    for (Index e = 0; e < view.n(); ++e) {
      const Index col = view.cols[e];
      const Scalar td = sa(cand, col) - view.data->r[e] -
                        view.cache->gamma * next(cand, col);
      acc.add(view.weights[e] * td);
    }
    losses[k] = std::abs(acc.value());
  }
  return finish("avg_bellman", indices, losses);
}

SelectorResult lstd_tournament(const EvalView& view,
                               const std::vector<Index>& indices,
                               FeatureVariant variant) {
  check_candidates(view, indices);
  const Index msub = static_cast<Index>(indices.size());
  if (msub < 2)
    throw std::invalid_argument("lstd_tournament: needs at least two candidates");
  Vec losses = Vec::Zero(msub);
  Vec sig_pairs = Vec::Zero(msub * msub);
  for (Index c = 0; c < msub; ++c) {
    Scalar worst = 0.0;
    for (Index p = 0; p < msub; ++p) {
      if (p == c) continue;
      const FeaturePair pair =
          make_feature_pair(view, indices[c], indices[p], variant);
      const LstdMoments mo = empirical_moments(view, pair);
      const Vec theta = pair.theta(indices[c]);
      const Vec res = mo.a_mat * theta - mo.b_vec;
      const Vec direct = pairwise_td_correlation(view, pair, indices[c]);
      const Scalar scale =
          std::max<Scalar>(1.0, mo.a_mat.cwiseAbs().maxCoeff() *
                                        theta.cwiseAbs().maxCoeff() +
                                    mo.b_vec.cwiseAbs().maxCoeff());
      if ((res - direct).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw std::logic_error(
            "lstd_tournament: moment and TD routes diverged");
      worst = std::max(worst, res.cwiseAbs().maxCoeff());
      sig_pairs[c * msub + p] = mo.sigma_min_a;
    }
    losses[c] = worst;
  }
  SelectorResult out = finish("lstd_tournament:" + feature_variant_name(variant),
                              indices, std::move(losses));
  out.diagnostics["sigma_min_pairs"] = std::move(sig_pairs);
  return out;
}

SelectorResult bvft(const EvalView& view, const std::vector<Index>& indices,
                    const std::vector<Scalar>& resolutions) {
  check_candidates(view, indices);
  if (resolutions.empty())
    throw std::invalid_argument("bvft: empty resolution list");
  const Index msub = static_cast<Index>(indices.size());
  const Index nres = static_cast<Index>(resolutions.size());
  const Scalar vmax = view.cache->v_max;
  Vec losses = Vec::Zero(msub);
  Mat per_res = Mat::Zero(msub, nres);  // max over partners, per resolution
  for (Index c = 0; c < msub; ++c) {
    Scalar worst = 0.0;
    for (Index p = 0; p < msub; ++p) {
      if (p == c) continue;
      Scalar best = std::numeric_limits<Scalar>::infinity();
      for (Index ri = 0; ri < nres; ++ri) {
        const Scalar loss = bvft_pair_loss(view, indices[c], indices[p],
                                           resolutions[ri] * vmax);
        best = std::min(best, loss);
        per_res(c, ri) = std::max(per_res(c, ri), loss);
      }
      worst = std::max(worst, best);
    }
    losses[c] = worst;
  }
  SelectorResult out = finish("bvft", indices, std::move(losses));
  for (Index ri = 0; ri < nres; ++ri) {
    const std::string tag = "_res" + std::to_string(ri);
    out.diagnostics["bvft_mse" + tag] = per_res.col(ri);
    out.diagnostics["bvft_rms" + tag] = per_res.col(ri).cwiseSqrt();
  }
  return out;
}

SelectorResult naive_model_based(const EvalView& view,
                                 const std::vector<Index>& indices,
                                 const std::vector<TabularMDP>& models,
                                 const Mat& embedding, int samples,
                                 std::uint64_t seed) {
  check_view(view);
  if (indices.empty())
    throw std::invalid_argument("selector: empty candidate set");
  for (Index g : indices)
    if (g < 0 || g >= static_cast<Index>(models.size()))
      throw std::invalid_argument("naive_model_based: model index out of range");
  if (samples < 1)
    throw std::invalid_argument("naive_model_based: needs samples >= 1");
  Vec losses(static_cast<Index>(indices.size()));
  for (Index k = 0; k < losses.size(); ++k) {
    const Index g = indices[k];
    const TabularMDP& model = models[static_cast<std::size_t>(g)];
    if (embedding.rows() < model.num_states)
      throw std::invalid_argument("naive_model_based: embedding too small");
    const SimModel sim = make_sim(model);
    KahanSum acc;
    for (Index e = 0; e < view.n(); ++e) {
      const Index sa = model.sa(view.data->s[e], view.data->a[e]);
      const auto obs = embedding.row(view.data->s_next[e]);
      Scalar dist = 0.0;
      for (int r = 0; r < samples; ++r) {
        Rng g_row = Rng::derive(seed, "naive",
                                {static_cast<std::uint64_t>(g),
                                 static_cast<std::uint64_t>(e),
                                 static_cast<std::uint64_t>(r)});
        const Index st = sample_row(sim.next_state[static_cast<std::size_t>(sa)],
                                    g_row);
        dist += (obs - embedding.row(st)).norm();
      }
      acc.add(view.weights[e] * dist / samples);
    }
    losses[k] = acc.value();
  }
  return finish("naive_model_based", indices, std::move(losses));
}

SelectorResult regression_zitovsky(const EvalView& view,
                                   const std::vector<Index>& indices) {
  check_candidates(view, indices);
  if (!view.cache->has_backups())
    throw std::invalid_argument("regression_zitovsky: cache lacks backups");
  const Index msub = static_cast<Index>(indices.size());
  Vec losses(msub);
  Vec argj(msub);
  for (Index k = 0; k < msub; ++k) {
    const Index cand = indices[k];
    Index best_j = -1;
    best_backup_loss(view, indices, cand, &best_j);
    const Index row = view.cache->backup_row(best_j, cand);
    KahanSum acc;
    for (Index e = 0; e < view.n(); ++e) {
      const Index col = view.cols[e];
      const Scalar d =
          view.cache->backup(row, col) - view.cache->q_sa(cand, col);
      acc.add(view.weights[e] * d * d);
    }
    losses[k] = acc.value();
    argj[k] = static_cast<Scalar>(best_j);
  }
  SelectorResult out = finish("regression_zitovsky", indices, std::move(losses));
  out.diagnostics["regression_argmin_j"] = std::move(argj);
  return out;
}

SelectorResult regression_antos(const EvalView& view,
                                const std::vector<Index>& indices) {
  check_candidates(view, indices);
  if (!view.cache->has_backups())
    throw std::invalid_argument("regression_antos: cache lacks backups");
  const Vec tdsq = td_squared_losses(view, indices);
  const Index msub = static_cast<Index>(indices.size());
  Vec losses(msub);
  Vec raw(msub);
  for (Index k = 0; k < msub; ++k) {
    raw[k] = tdsq[k] - best_backup_loss(view, indices, indices[k], nullptr);
    losses[k] = std::max<Scalar>(0.0, raw[k]);
  }
  SelectorResult out = finish("regression_antos", indices, std::move(losses));
  out.diagnostics["antos_raw"] = std::move(raw);
  return out;
}

SelectorResult sign_flip(const EvalView& view,
                         const std::vector<Index>& indices) {
  check_candidates(view, indices);
  if (!view.cache->has_backups())
    throw std::invalid_argument("sign_flip: cache lacks backups");
  const Index msub = static_cast<Index>(indices.size());
  Vec losses(msub);
  for (Index k = 0; k < msub; ++k) {
    const Index cand = indices[k];
    Scalar best = -std::numeric_limits<Scalar>::infinity();
    for (Index j : indices) {
      const Index row = view.cache->backup_row(j, cand);
      KahanSum acc;
      for (Index e = 0; e < view.n(); ++e) {
        const Index col = view.cols[e];
        const Scalar sg =
            view.cache->q_sa(cand, col) - view.cache->backup(row, col) >= 0.0
                ? 1.0
                : -1.0;
        acc.add(view.weights[e] * sg * td_full(view, cand, e));
      }
      best = std::max(best, acc.value());
    }
    losses[k] = best;
  }
  return finish("sign_flip", indices, std::move(losses));
}

SelectorResult random_baseline(const std::vector<Index>& indices,
                               std::uint64_t seed) {
  if (indices.empty())
    throw std::invalid_argument("selector: empty candidate set");
  const Index msub = static_cast<Index>(indices.size());
  std::vector<Index> rank(static_cast<std::size_t>(msub));
  for (Index k = 0; k < msub; ++k) rank[static_cast<std::size_t>(k)] = k;
  Rng g = Rng::derive(seed, "random_baseline");
  for (Index k = msub - 1; k > 0; --k) {
    const auto r = static_cast<Index>(
        g.next_below(static_cast<std::uint64_t>(k) + 1));
    std::swap(rank[static_cast<std::size_t>(k)],
              rank[static_cast<std::size_t>(r)]);
  }
  Vec losses(msub);
  for (Index k = 0; k < msub; ++k)
    losses[k] = static_cast<Scalar>(rank[static_cast<std::size_t>(k)]);
  return finish("random_baseline", indices, std::move(losses));
}

SelectorResult run_selector(const std::string& name, const EvalView& view,
                            const std::vector<Index>& indices,
                            const SelectorContext& ctx) {
  const ParsedSelector p = parse_selector(name);
  switch (p.kind) {
    case SelectorKind::td_squared:
      return td_squared(view, indices);
    case SelectorKind::avg_bellman:
      return avg_bellman(view, indices);
    case SelectorKind::lstd_tournament:
      return lstd_tournament(view, indices, p.variant);
    case SelectorKind::bvft:
      return bvft(view, indices);
    case SelectorKind::naive_model_based:
      if (ctx.models == nullptr || ctx.embedding == nullptr)
        throw std::invalid_argument(
            "naive_model_based: context lacks models or embedding");
      return naive_model_based(view, indices, *ctx.models, *ctx.embedding,
                               ctx.naive_samples, ctx.seed);
    case SelectorKind::regression_zitovsky:
      return regression_zitovsky(view, indices);
    case SelectorKind::regression_antos:
      return regression_antos(view, indices);
    case SelectorKind::sign_flip:
      return sign_flip(view, indices);
    case SelectorKind::random_baseline:
      return random_baseline(indices, ctx.seed);
  }
  throw std::logic_error("run_selector: unreachable");
}

bool selector_name_valid(const std::string& name) {
  try {
    parse_selector(name);
    return true;
  } catch (const std::invalid_argument&) {
    return false;
  }
}

std::string canonical_selector_id(const std::string& name) {
  const ParsedSelector p = parse_selector(name);
  if (p.kind == SelectorKind::lstd_tournament)
    return "lstd_tournament:" + feature_variant_name(p.variant);
  return name;  // other kinds reject suffixes at parse time
}

DeterminismBiasFixture make_determinism_bias_fixture(Scalar gamma) {
  // States: 0 start, 1..4 the corners (+1,+1), (+1,-1), (-1,+1), (-1,-1),
  // 5 the origin.  One action; zero reward everywhere; corners and origin
  // absorb.
  const Index S = 6;
  DeterminismBiasFixture fx;
  TabularMDP base;
  base.num_states = S;
  base.num_actions = 1;
  base.discount = gamma;
  base.r_max = 1.0;
  base.reward = Vec::Zero(S);
  base.initial_dist = Vec::Zero(S);
  base.initial_dist[0] = 1.0;
  base.transition = Mat::Zero(S, S);
  for (Index s = 1; s < S; ++s) base.transition(s, s) = 1.0;

  fx.truth = base;
  fx.truth.id = "detbias_truth";
  for (Index s = 1; s <= 4; ++s) fx.truth.transition(0, s) = 0.25;

  fx.det = base;
  fx.det.id = "detbias_det";
  fx.det.transition(0, 5) = 1.0;

  fx.embedding = Mat::Zero(S, 2);
  fx.embedding.row(1) << 1.0, 1.0;
  fx.embedding.row(2) << 1.0, -1.0;
  fx.embedding.row(3) << -1.0, 1.0;
  fx.embedding.row(4) << -1.0, -1.0;

  fx.start_dist = Vec::Zero(S);  // over flattened (s, a); A == 1
  fx.start_dist[0] = 1.0;
  return fx;
}

}  // namespace opesel
