#include "opesel/oracle.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "opesel/dp.hpp"

namespace opesel {

ExactHarness make_exact_harness(const TabularMDP& truth,
                                const std::vector<TabularMDP>& models,
                                const Policy& policy, const Vec& sa_dist,
                                bool with_backups) {
  if (models.empty())
    throw std::invalid_argument("make_exact_harness: no models");
  const Index s_dim = truth.num_states;
  const Index a_dim = truth.num_actions;
  if (sa_dist.size() != s_dim * a_dim)
    throw std::invalid_argument("make_exact_harness: sa_dist length mismatch");
  if (std::abs(sa_dist.sum() - 1.0) > 1e-9 || sa_dist.minCoeff() < 0.0)
    throw std::invalid_argument("make_exact_harness: sa_dist is not a distribution");
  for (const TabularMDP& m : models) {
    if (m.num_states != s_dim || m.num_actions != a_dim ||
        m.discount != truth.discount)
      throw std::invalid_argument("make_exact_harness: model shape mismatch");
  }

  ExactHarness h;
  std::vector<Index> ss, aa, sn;
  std::vector<Scalar> rr, ww;
  for (Index s = 0; s < s_dim; ++s) {
    for (Index a = 0; a < a_dim; ++a) {
      const Index i = truth.sa(s, a);
      if (sa_dist[i] <= 0.0) continue;
      for (Index nx = 0; nx < s_dim; ++nx) {
        const Scalar p = truth.transition(i, nx);
        if (p <= 0.0) continue;
        ss.push_back(s);
        aa.push_back(a);
        sn.push_back(nx);
        rr.push_back(truth.reward[i]);
        ww.push_back(sa_dist[i] * p);
      }
    }
  }
  const Index n = static_cast<Index>(ss.size());
  h.data.behavior_id = "exact_enum";
  h.data.source_model_id = truth.id;
  h.data.mode = SampleMode::iid;
  h.data.s.resize(n);
  h.data.a.resize(n);
  h.data.s_next.resize(n);
  h.data.r.resize(n);
  h.weights.resize(n);
  for (Index t = 0; t < n; ++t) {
    h.data.s[t] = ss[static_cast<std::size_t>(t)];
    h.data.a[t] = aa[static_cast<std::size_t>(t)];
    h.data.s_next[t] = sn[static_cast<std::size_t>(t)];
    h.data.r[t] = rr[static_cast<std::size_t>(t)];
    h.weights[t] = ww[static_cast<std::size_t>(t)];
  }

  const Index m = static_cast<Index>(models.size());
  QCache& c = h.cache;
  c.spec.l = 0;  // marks the cache as exact rather than Monte-Carlo
  c.spec.horizon = 0;
  c.spec.master_seed = 0;
  c.spec.split = true;
  c.gamma = truth.discount;
  c.v_max = truth.v_max();
  for (const TabularMDP& md : models) c.v_max = std::max(c.v_max, md.v_max());
  c.policy_id = policy.id;
  c.dataset_hash = dataset_hash_hex(h.data);
  c.q_sa.resize(m, n);
  c.q_next.resize(m, n);
  if (with_backups) c.backup.resize(m * m, n);

  std::vector<QTable> q;
  q.reserve(models.size());
  for (const TabularMDP& md : models) {
    c.model_ids.push_back(md.id);
    q.push_back(exact_q_pi(md, policy));
  }
  for (Index i = 0; i < m; ++i) {
    const Mat& qv = q[static_cast<std::size_t>(i)].values;
    for (Index t = 0; t < n; ++t) {
      c.q_sa(i, t) = qv(h.data.s[t], h.data.a[t]);
      Scalar v = 0.0;
      const Index nx = h.data.s_next[t];
      for (Index an = 0; an < a_dim; ++an)
        v += policy.probs(nx, an) * qv(nx, an);
      c.q_next(i, t) = v;
    }
  }
  if (with_backups) {
    for (Index j = 0; j < m; ++j) {
      for (Index i = 0; i < m; ++i) {
        const QTable backed =
            apply_bellman(models[static_cast<std::size_t>(j)], policy,
                          q[static_cast<std::size_t>(i)]);
        const Index row = c.backup_row(j, i);
        for (Index t = 0; t < n; ++t)
          c.backup(row, t) = backed.values(h.data.s[t], h.data.a[t]);
      }
    }
  }
  c.q_sa_a = c.q_sa;
  c.q_sa_b = c.q_sa;
  c.q_next_a = c.q_next;
  c.q_next_b = c.q_next;
  return h;
}

}  // namespace opesel
