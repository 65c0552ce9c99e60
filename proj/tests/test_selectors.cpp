#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "opesel/data.hpp"
#include "opesel/dp.hpp"
#include "opesel/lstdq.hpp"
#include "opesel/oracle.hpp"
#include "opesel/qcache.hpp"
#include "opesel/selectors.hpp"
#include "opesel/view.hpp"
#include "oracles.hpp"

using namespace opesel;

namespace {

// Hand-built cache (both halves equal the full estimate) with an optional
// backup block, for closed-form selector checks on tiny inputs.
struct ManualFixture {
  QCache cache;
  Dataset data;
};

ManualFixture manual_fixture(const RMat& q_sa, const RMat& q_next, const Vec& r,
                             Scalar gamma, Scalar v_max,
                             const RMat& backup = RMat()) {
  ManualFixture f;
  f.cache.q_sa = q_sa;
  f.cache.q_next = q_next;
  f.cache.q_sa_a = q_sa;
  f.cache.q_sa_b = q_sa;
  f.cache.q_next_a = q_next;
  f.cache.q_next_b = q_next;
  f.cache.backup = backup;
  f.cache.spec.split = true;
  f.cache.gamma = gamma;
  f.cache.v_max = v_max;
  const Index n = q_sa.cols();
  f.data.s = IVec::Zero(n);
  f.data.a = IVec::Zero(n);
  f.data.s_next = IVec::Zero(n);
  f.data.r = r;
  return f;
}

struct ExactSetup {
  TabularMDP truth;
  std::vector<TabularMDP> models;
  Policy pi;
  Vec sa_dist;
  ExactHarness harness;
};

ExactSetup exact_setup(std::uint64_t seed, Index S, Index A, Scalar gamma,
                       int num_models) {
  ExactSetup e;
  e.truth = testing::random_mdp(seed, S, A, gamma);
  e.models.push_back(e.truth);
  for (int k = 1; k < num_models; ++k)
    e.models.push_back(testing::random_mdp(seed + 10 * k, S, A, gamma));
  e.pi = testing::random_policy(seed + 1, S, A);
  e.sa_dist = Vec::Constant(S * A, 1.0 / static_cast<Scalar>(S * A));
  e.harness = make_exact_harness(e.truth, e.models, e.pi, e.sa_dist, true);
  return e;
}

// Shifts candidate row `i` of an exact harness cache by +c everywhere,
// including the backups T_j(q_i + c) = T_j q_i + gamma * c.
void shift_candidate(QCache& cache, Index i, Scalar c) {
  cache.q_sa.row(i).array() += c;
  cache.q_sa_a.row(i).array() += c;
  cache.q_sa_b.row(i).array() += c;
  cache.q_next.row(i).array() += c;
  cache.q_next_a.row(i).array() += c;
  cache.q_next_b.row(i).array() += c;
  for (Index j = 0; j < cache.models(); ++j)
    cache.backup.row(cache.backup_row(j, i)).array() += cache.gamma * c;
}

}  // namespace

TEST_SUITE("selectors") {

TEST_CASE("exact expectations: truth-aware selectors vanish on the true value function") {
  const ExactSetup e = exact_setup(901, 4, 2, 0.9, 3);
  const EvalView view = e.harness.view();
  const std::vector<Index> all = {0, 1, 2};
  const Scalar S = 4, A = 2;

  // Independent squared-TD oracle: Bellman residual plus the next-value
  // variance term, from nested-loop policy evaluation per model.
  std::vector<Scalar> tdsq_oracle(3, 0.0);
  for (int i = 0; i < 3; ++i) {
    const std::vector<double> q = testing::vi_q_pi(e.models[i], e.pi);
    std::vector<double> qn(static_cast<std::size_t>(S));
    for (Index sn = 0; sn < S; ++sn) {
      double v = 0.0;
      for (Index an = 0; an < A; ++an)
        v += e.pi.probs(sn, an) * q[static_cast<std::size_t>(sn * A + an)];
      qn[static_cast<std::size_t>(sn)] = v;
    }
    double total = 0.0;
    for (Index sa = 0; sa < S * A; ++sa) {
      double mean = 0.0, mean_sq = 0.0;
      for (Index sn = 0; sn < S; ++sn) {
        const double p = e.truth.transition(sa, sn);
        mean += p * qn[static_cast<std::size_t>(sn)];
        mean_sq += p * qn[static_cast<std::size_t>(sn)] *
                   qn[static_cast<std::size_t>(sn)];
      }
      const double be = q[static_cast<std::size_t>(sa)] -
                        e.truth.reward[sa] - 0.9 * mean;
      total += e.sa_dist[sa] * (be * be + 0.81 * (mean_sq - mean * mean));
    }
    tdsq_oracle[static_cast<std::size_t>(i)] = total;
  }

  const SelectorResult tds = td_squared(view, all);
  for (Index i = 0; i < 3; ++i)
    CHECK(tds.losses[i] ==
          doctest::Approx(tdsq_oracle[static_cast<std::size_t>(i)])
              .epsilon(1e-9));
  // The bias term keeps td_squared away from zero even for the exact Q^pi.
  CHECK(tds.losses[0] > 1e-4);

  const SelectorResult ab = avg_bellman(view, all);
  CHECK(ab.losses[0] < 1e-10);
  CHECK(ab.chosen == 0);

  for (const auto variant :
       {FeatureVariant::vanilla, FeatureVariant::normalized,
        FeatureVariant::normalized_diff}) {
    const SelectorResult lt = lstd_tournament(view, all, variant);
    CHECK(lt.losses[0] < 1e-10);
    CHECK(lt.losses[1] > 1e-6);
    CHECK(lt.losses[2] > 1e-6);
    CHECK(lt.chosen == 0);
    REQUIRE(lt.diagnostics.count("sigma_min_pairs") == 1);
    const Vec& sig = lt.diagnostics.at("sigma_min_pairs");
    REQUIRE(sig.size() == 9);
    for (Index c = 0; c < 3; ++c) CHECK(sig[c * 3 + c] == 0.0);
    for (Index k = 0; k < 9; ++k) CHECK(sig[k] >= 0.0);
  }

  const SelectorResult sf = sign_flip(view, all);
  CHECK(std::abs(sf.losses[0]) < 1e-10);
  CHECK(sf.chosen == 0);

  const SelectorResult rz = regression_zitovsky(view, all);
  CHECK(rz.losses[0] < 1e-10);
  CHECK(rz.chosen == 0);
  REQUIRE(rz.diagnostics.count("regression_argmin_j") == 1);
  CHECK(rz.diagnostics.at("regression_argmin_j")[0] == 0.0);

  const SelectorResult ra = regression_antos(view, all);
  CHECK(ra.losses[0] < 1e-10);
  CHECK(std::abs(ra.diagnostics.at("antos_raw")[0]) < 1e-10);
  CHECK(ra.chosen == 0);
}

TEST_CASE("constant shift of the true value function hits the closed forms") {
  ExactSetup e = exact_setup(905, 4, 2, 0.9, 1);
  e.models.push_back(e.truth);  // duplicate, then shift candidate 1 by c
  e.harness = make_exact_harness(e.truth, e.models, e.pi, e.sa_dist, true);
  const Scalar c = 0.37, gamma = 0.9;
  shift_candidate(e.harness.cache, 1, c);
  const EvalView view = e.harness.view();
  const std::vector<Index> all = {0, 1};

  const SelectorResult ab = avg_bellman(view, all);
  CHECK(ab.losses[0] < 1e-12);
  CHECK(ab.losses[1] == doctest::Approx(c * (1.0 - gamma)).epsilon(1e-12));
  CHECK(ab.chosen == 0);

  // td^2 of q + c expands to the base variance bias plus c^2 (1-gamma)^2;
  // the cross term carries E[td] = 0.
  const SelectorResult tds = td_squared(view, all);
  CHECK(tds.losses[1] ==
        doctest::Approx(tds.losses[0] + c * c * (1.0 - gamma) * (1.0 - gamma))
            .epsilon(1e-10));

  const SelectorResult rz = regression_zitovsky(view, all);
  CHECK(rz.losses[0] < 1e-12);
  CHECK(rz.losses[1] ==
        doctest::Approx(c * c * (1.0 - gamma) * (1.0 - gamma)).epsilon(1e-10));
  CHECK(rz.diagnostics.at("regression_argmin_j")[1] == 0.0);

  // Singleton class: the only backup is one exact application of the true
  // operator, so the loss is the squared Bellman error of q + c.
  const SelectorResult rz1 = regression_zitovsky(view, {1});
  CHECK(rz1.losses[0] ==
        doctest::Approx(c * c * (1.0 - gamma) * (1.0 - gamma)).epsilon(1e-10));

  const SelectorResult ra = regression_antos(view, all);
  CHECK(ra.losses[1] ==
        doctest::Approx(c * c * (1.0 - gamma) * (1.0 - gamma)).epsilon(1e-10));

  const SelectorResult sf = sign_flip(view, all);
  CHECK(sf.losses[1] == doctest::Approx(c * (1.0 - gamma)).epsilon(1e-10));
  CHECK(sf.chosen == 0);

  // Vanilla tournament: the shifted candidate's TD error is the constant
  // c (1-gamma), so each correlation is that constant times E[q_k].
  const SelectorResult lt = lstd_tournament(view, all, FeatureVariant::vanilla);
  Scalar mean_q0 = 0.0;
  for (Index t = 0; t < view.n(); ++t)
    mean_q0 += view.weights[t] * view.cache->q_sa(0, view.cols[t]);
  const Scalar expect1 =
      c * (1.0 - gamma) * std::max(std::abs(mean_q0), std::abs(mean_q0 + c));
  CHECK(lt.losses[0] < 1e-10);
  CHECK(lt.losses[1] == doctest::Approx(expect1).epsilon(1e-9));
  CHECK(lt.chosen == 0);
}

TEST_CASE("aggregation identities on a Monte-Carlo cache") {
  const Index S = 5, A = 2;
  const TabularMDP truth = testing::random_mdp(911, S, A, 0.9);
  const std::vector<TabularMDP> models = {
      truth, testing::random_mdp(912, S, A, 0.9),
      testing::random_mdp(913, S, A, 0.9)};
  const Policy pi = testing::random_policy(914, S, A);
  const Policy behavior = noisy_behavior(pi, 0.8);
  const Dataset data = sample_dataset(truth, behavior, 200, SampleMode::iid, 915);
  RolloutSpec spec;
  spec.l = 8;
  spec.master_seed = 916;
  const QCache cache = build_cache(data, models, pi, spec, true);
  const EvalView view = make_view(cache, data);
  const std::vector<Index> all = {0, 1, 2};

  const SelectorResult ab = avg_bellman(view, all);
  for (Index i = 0; i < 3; ++i) {
    FeaturePair flat;
    flat.i = i;
    flat.j = -1;
    flat.variant = FeatureVariant::vanilla;
    const Vec corr = pairwise_td_correlation(view, flat, i);
    CHECK(std::abs(std::abs(corr[0]) - ab.losses[i]) < 1e-12);
  }

  // Single cell: every row falls into bucket (0, 0), so the projection is the
  // global weighted mean TD target.
  const SelectorResult coarse = bvft(view, all, {2.0});
  for (Index i = 0; i < 3; ++i) {
    double ghat = 0.0;
    for (Index t = 0; t < view.n(); ++t)
      ghat += view.weights[t] *
              (data.r[t] + 0.9 * cache.q_next(i, view.cols[t]));
    double loss = 0.0;
    for (Index t = 0; t < view.n(); ++t) {
      const double d = cache.q_sa(i, view.cols[t]) - ghat;
      loss += view.weights[t] * d * d;
    }
    CHECK(coarse.losses[i] == doctest::Approx(loss).epsilon(1e-12));
  }

  // One point per cell: the projection reproduces each row's own target and
  // the loss degenerates to the squared TD error.
  const SelectorResult fine = bvft(view, all, {1e-12});
  const SelectorResult tds = td_squared(view, all);
  for (Index i = 0; i < 3; ++i)
    CHECK(std::abs(fine.losses[i] - tds.losses[i]) <
          1e-12 * (1.0 + tds.losses[i]));

  const SelectorResult full = bvft(view, all);
  CHECK(full.losses.size() == 3);
  for (Index i = 0; i < 3; ++i) {
    CHECK(full.losses[i] >= 0.0);
    // min over resolutions can only improve on any single resolution
    CHECK(full.losses[i] <= coarse.losses[i] + 1e-12);
  }
  REQUIRE(full.diagnostics.count("bvft_rms_res0") == 1);
  const Vec& mse0 = full.diagnostics.at("bvft_mse_res0");
  const Vec& rms0 = full.diagnostics.at("bvft_rms_res0");
  for (Index i = 0; i < 3; ++i)
    CHECK(rms0[i] == doctest::Approx(std::sqrt(mse0[i])).epsilon(1e-12));
}

TEST_CASE("zero-discount regression reduces to reward fitting") {
  const Index S = 3, A = 2;
  std::vector<TabularMDP> models;
  for (std::uint64_t k = 0; k < 3; ++k)
    models.push_back(testing::random_mdp(921 + k, S, A, 0.0));
  const TabularMDP& truth = models[0];
  const Policy pi = testing::random_policy(925, S, A);
  const Vec sa_dist = Vec::Constant(S * A, 1.0 / static_cast<Scalar>(S * A));
  const ExactHarness h = make_exact_harness(truth, models, pi, sa_dist, true);
  const EvalView view = h.view();

  const SelectorResult rz = regression_zitovsky(view, {0, 1, 2});
  for (Index i = 0; i < 3; ++i) {
    // At gamma = 0 each Q equals its model's reward table, the best backup is
    // the true reward, and the loss is the squared reward misfit.
    double expect = 0.0;
    for (Index sa = 0; sa < S * A; ++sa)
      expect += sa_dist[sa] * (truth.reward[sa] - models[i].reward[sa]) *
                (truth.reward[sa] - models[i].reward[sa]);
    CHECK(rz.losses[i] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(rz.diagnostics.at("regression_argmin_j")[i] == 0.0);
  }
  CHECK(rz.chosen == 0);
}

TEST_CASE("sign-test selector on hand values") {
  RMat q_sa(2, 1), q_next(2, 1);
  q_sa << 2.0, 0.5;
  q_next << 1.0, 0.7;
  Vec r(1);
  r << 0.3;
  RMat backup(4, 1);  // rows (j, i) = j * 2 + i
  backup << 1.0, 0.2, 3.0, 0.9;
  ManualFixture f = manual_fixture(q_sa, q_next, r, 0.5, 4.0, backup);
  const EvalView view = make_view(f.cache, f.data);

  // One data point with backups on both sides of q: the maximizing sign
  // recovers the absolute TD error, 1.2 for candidate 0 and 0.15 for 1.
  const SelectorResult sf = sign_flip(view, {0, 1});
  CHECK(sf.losses[0] == doctest::Approx(1.2).epsilon(1e-14));
  CHECK(sf.losses[1] == doctest::Approx(0.15).epsilon(1e-14));
  CHECK(sf.chosen == 1);

  // Backup exactly equal to q: sgn(0) counts as +1, so the single-j value
  // keeps the TD error's own sign.
  f.cache.backup(0, 0) = 2.0;
  const SelectorResult tie = sign_flip(make_view(f.cache, f.data), {0});
  CHECK(tie.losses[0] == doctest::Approx(1.2).epsilon(1e-14));
}

TEST_CASE("model-prediction distance prefers the wrong deterministic model") {
  const DeterminismBiasFixture fx = make_determinism_bias_fixture();
  const std::vector<TabularMDP> models = {fx.truth, fx.det};
  const Index n = 100000;
  const Dataset data =
      sample_dataset_from_dist(fx.truth, fx.start_dist, n, 931, "start_only");

  QCache stub;  // selector only reads the view's data and weights
  stub.q_sa = RMat::Zero(2, n);
  stub.q_next = RMat::Zero(2, n);
  stub.spec.split = false;
  stub.gamma = fx.truth.discount;
  stub.v_max = fx.truth.v_max();
  stub.model_ids = {fx.truth.id, fx.det.id};
  const EvalView view = make_view(stub, data);

  const SelectorResult res =
      naive_model_based(view, {0, 1}, models, fx.embedding, 1, 932);
  CHECK(res.losses[0] == doctest::Approx(1.0 + std::sqrt(2.0) / 2.0).epsilon(0.02));
  CHECK(res.losses[1] == doctest::Approx(std::sqrt(2.0)).epsilon(0.02));
  CHECK(res.chosen == 1);  // the deterministic wrong model wins

  SelectorContext ctx;
  ctx.models = &models;
  ctx.embedding = &fx.embedding;
  ctx.naive_samples = 1;
  ctx.seed = 932;
  const SelectorResult again =
      run_selector("naive_model_based", view, {0, 1}, ctx);
  CHECK(again.losses == res.losses);
  CHECK(again.chosen == 1);
}

TEST_CASE("permuting the candidate list permutes losses and keeps the choice") {
  const Index S = 5, A = 2;
  const TabularMDP truth = testing::random_mdp(941, S, A, 0.9);
  const std::vector<TabularMDP> models = {
      truth, testing::random_mdp(942, S, A, 0.9),
      testing::random_mdp(943, S, A, 0.9)};
  const Policy pi = testing::random_policy(944, S, A);
  const Dataset data =
      sample_dataset(truth, noisy_behavior(pi, 0.7), 100, SampleMode::iid, 945);
  RolloutSpec spec;
  spec.l = 4;
  spec.master_seed = 946;
  const QCache cache = build_cache(data, models, pi, spec, true);
  const EvalView view = make_view(cache, data);
  const Mat embedding = Mat::Identity(S, S);

  SelectorContext ctx;
  ctx.models = &models;
  ctx.embedding = &embedding;
  ctx.naive_samples = 4;
  ctx.seed = 947;

  const std::vector<Index> base = {0, 1, 2};
  const std::vector<Index> perm = {2, 0, 1};
  for (const std::string& name :
       {std::string("td_squared"), std::string("avg_bellman"),
        std::string("lstd_tournament:normalized_diff"), std::string("bvft"),
        std::string("regression_zitovsky"), std::string("regression_antos"),
        std::string("sign_flip"), std::string("naive_model_based")}) {
    CAPTURE(name);
    const SelectorResult a = run_selector(name, view, base, ctx);
    const SelectorResult b = run_selector(name, view, perm, ctx);
    for (std::size_t k = 0; k < perm.size(); ++k) {
      const auto pos = static_cast<Index>(
          std::find(base.begin(), base.end(), perm[k]) - base.begin());
      CHECK(b.losses[static_cast<Index>(k)] == a.losses[pos]);
    }
    CHECK(b.chosen == a.chosen);
  }
}

TEST_CASE("identical candidates tie toward the lowest model index") {
  ExactSetup e = exact_setup(951, 3, 2, 0.8, 1);
  e.models.push_back(e.truth);
  e.harness = make_exact_harness(e.truth, e.models, e.pi, e.sa_dist, true);
  const EvalView view = e.harness.view();

  for (const auto& res :
       {td_squared(view, {0, 1}), td_squared(view, {1, 0}),
        bvft(view, {0, 1}), regression_zitovsky(view, {1, 0}),
        sign_flip(view, {0, 1}),
        lstd_tournament(view, {1, 0}, FeatureVariant::normalized_diff)}) {
    CHECK(res.losses[0] == res.losses[1]);
    CHECK(res.chosen == 0);
  }
}

TEST_CASE("selector preconditions throw") {
  ExactSetup e = exact_setup(955, 3, 2, 0.8, 2);
  const EvalView view = e.harness.view();
  CHECK_THROWS_AS((void)td_squared(view, {}), std::invalid_argument);
  CHECK_THROWS_AS((void)td_squared(view, {5}), std::invalid_argument);
  CHECK_THROWS_AS((void)lstd_tournament(view, {0}, FeatureVariant::vanilla),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)bvft(view, {0, 1}, {}), std::invalid_argument);

  // Backup-dependent selectors reject caches built without backups.
  const ExactHarness bare =
      make_exact_harness(e.truth, e.models, e.pi, e.sa_dist, false);
  const EvalView bare_view = bare.view();
  CHECK_THROWS_AS((void)regression_zitovsky(bare_view, {0, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)regression_antos(bare_view, {0, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)sign_flip(bare_view, {0, 1}), std::invalid_argument);
}

TEST_CASE("random baseline is uniform, reproducible, and rank-valued") {
  const std::vector<Index> indices = {0, 1, 2, 3};
  std::map<Index, int> counts;
  for (std::uint64_t seed = 0; seed < 10000; ++seed)
    counts[random_baseline(indices, seed).chosen]++;
  for (Index i = 0; i < 4; ++i)
    CHECK(std::abs(counts[i] / 10000.0 - 0.25) <= 0.02);

  const SelectorResult a = random_baseline(indices, 77);
  const SelectorResult b = random_baseline(indices, 77);
  CHECK(a.losses == b.losses);
  CHECK(a.chosen == b.chosen);
  Vec sorted = a.losses;
  std::sort(sorted.begin(), sorted.end());
  for (Index k = 0; k < 4; ++k) CHECK(sorted[k] == static_cast<Scalar>(k));

  const SelectorResult single = random_baseline({7}, 3);
  CHECK(single.chosen == 7);
  CHECK(single.losses[0] == 0.0);
}

TEST_CASE("selector registry parses names and rejects malformed ones") {
  ExactSetup e = exact_setup(961, 3, 2, 0.8, 2);
  const EvalView view = e.harness.view();
  SelectorContext ctx;

  CHECK(run_selector("lstd_tournament", view, {0, 1}, ctx).selector_id ==
        "lstd_tournament:normalized_diff");
  CHECK(run_selector("lstd_tournament:vanilla", view, {0, 1}, ctx).selector_id ==
        "lstd_tournament:vanilla");
  CHECK(run_selector("td_squared", view, {0, 1}, ctx).selector_id ==
        "td_squared");
  CHECK(run_selector("random_baseline", view, {0, 1}, ctx).selector_id ==
        "random_baseline");

  CHECK_THROWS_AS((void)run_selector("nope", view, {0, 1}, ctx),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)run_selector("td_squared:x", view, {0, 1}, ctx),
                  std::invalid_argument);
  // naive needs models and an embedding in the context
  CHECK_THROWS_AS((void)run_selector("naive_model_based", view, {0, 1}, ctx),
                  std::invalid_argument);

  CHECK(selector_name_valid("bvft"));
  CHECK(selector_name_valid("lstd_tournament:normalized"));
  CHECK(!selector_name_valid("lstd_tournament:fancy"));
  CHECK(!selector_name_valid("bvft:0.1"));
  CHECK(!selector_name_valid(""));
}

}  // TEST_SUITE
