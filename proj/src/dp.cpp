#include "opesel/dp.hpp"

#include <Eigen/LU>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace opesel {

namespace {

// pi-weighted state values v(s') = sum_a' pi(a'|s') f(s',a').
Vec policy_values(const Policy& policy, const Mat& f) {
  return (f.array() * policy.probs.array()).rowwise().sum();
}

// State-to-state transition matrix P^pi(s,s') = sum_a pi(a|s) P(s'|s,a).
Mat state_transition(const TabularMDP& m, const Policy& pi) {
  Mat p(m.num_states, m.num_states);
  for (Index s = 0; s < m.num_states; ++s) {
    Vec row = Vec::Zero(m.num_states);
    for (Index a = 0; a < m.num_actions; ++a)
      row += pi.probs(s, a) * m.transition.row(m.sa(s, a)).transpose();
    p.row(s) = row.transpose();
  }
  return p;
}

}  // namespace

QTable exact_q_pi(const TabularMDP& model, const Policy& policy) {
  validate_mdp(model);
  validate_policy(model, policy);
  const Index sa = model.num_states * model.num_actions;
  // (P^pi)_{(s,a),(s',a')} = P(s'|s,a) * pi(a'|s'), as P * E with
  // E(s',(s',a')) = pi(a'|s').
  Mat e = Mat::Zero(model.num_states, sa);
  for (Index s = 0; s < model.num_states; ++s)
    for (Index a = 0; a < model.num_actions; ++a)
      e(s, model.sa(s, a)) = policy.probs(s, a);
  const Mat sys = Mat::Identity(sa, sa) - model.discount * (model.transition * e);
  Vec q = Eigen::PartialPivLU<Mat>(sys).solve(model.reward);

  QTable out;
  out.model_id = model.id;
  out.policy_id = policy.id;
  out.values = Mat(model.num_states, model.num_actions);
  for (Index s = 0; s < model.num_states; ++s)
    for (Index a = 0; a < model.num_actions; ++a)
      out.values(s, a) = q[model.sa(s, a)];

  const QTable back = apply_bellman(model, policy, out);
  const Scalar resid = (back.values - out.values).cwiseAbs().maxCoeff();
  if (resid > 1e-9)
    throw std::runtime_error("exact_q_pi: fixed-point residual " +
                             std::to_string(resid) + " exceeds 1e-9");
  return out;
}

QTable apply_bellman(const TabularMDP& model, const Policy& policy,
                     const QTable& f) {
  if (f.values.rows() != model.num_states || f.values.cols() != model.num_actions)
    throw std::invalid_argument("apply_bellman: Q-table shape mismatch");
  const Vec v = policy_values(policy, f.values);
  const Vec backed = model.reward + model.discount * (model.transition * v);
  QTable out;
  out.model_id = model.id;
  out.policy_id = policy.id;
  out.values = Mat(model.num_states, model.num_actions);
  for (Index s = 0; s < model.num_states; ++s)
    for (Index a = 0; a < model.num_actions; ++a)
      out.values(s, a) = backed[model.sa(s, a)];
  return out;
}

Scalar exact_return(const TabularMDP& model, const Policy& policy) {
  validate_mdp(model);
  validate_policy(model, policy);
  const Mat p_pi = state_transition(model, policy);
  Vec r_pi = Vec::Zero(model.num_states);
  for (Index s = 0; s < model.num_states; ++s)
    for (Index a = 0; a < model.num_actions; ++a)
      r_pi[s] += policy.probs(s, a) * model.reward[model.sa(s, a)];
  const Mat sys =
      Mat::Identity(model.num_states, model.num_states) - model.discount * p_pi;
  const Vec v = Eigen::PartialPivLU<Mat>(sys).solve(r_pi);
  return model.initial_dist.dot(v);
}

Scalar return_from_q(const TabularMDP& model, const Policy& policy,
                     const QTable& q) {
  return model.initial_dist.dot(policy_values(policy, q.values));
}

Vec discounted_occupancy(const TabularMDP& model, const Policy& policy) {
  validate_mdp(model);
  validate_policy(model, policy);
  // rho(s) = sum_t gamma^t Pr[s_t = s] solves rho = d0 + gamma (P^pi)^T rho.
  const Mat p_pi = state_transition(model, policy);
  const Mat sys = Mat::Identity(model.num_states, model.num_states) -
                  model.discount * p_pi.transpose();
  const Vec rho = Eigen::PartialPivLU<Mat>(sys).solve(model.initial_dist);
  Vec d(model.num_states * model.num_actions);
  for (Index s = 0; s < model.num_states; ++s)
    for (Index a = 0; a < model.num_actions; ++a)
      d[model.sa(s, a)] = (1.0 - model.discount) * rho[s] * policy.probs(s, a);
  // The solve leaves errors around 1e-15; renormalize so downstream sums to 1.
  d /= d.sum();
  return d;
}

CoverageDiagnostics occupancy_and_coverage(const TabularMDP& model,
                                           const Policy& policy,
                                           const Vec& data_dist) {
  const Index sa = model.num_states * model.num_actions;
  if (data_dist.size() != sa)
    throw std::invalid_argument("occupancy_and_coverage: data_dist wrong length");
  if (std::abs(data_dist.sum() - 1.0) > 1e-10)
    throw std::invalid_argument("occupancy_and_coverage: data_dist must sum to 1");

  CoverageDiagnostics diag;
  diag.occupancy_pi = discounted_occupancy(model, policy);
  diag.data_dist = data_dist;

  constexpr Scalar support_tol = 1e-12;
  const Scalar inf = std::numeric_limits<Scalar>::infinity();
  Scalar c_inf = 0.0, c_one = 0.0;
  for (Index i = 0; i < sa; ++i) {
    const Scalar d = diag.occupancy_pi[i];
    if (d <= support_tol) continue;
    if (data_dist[i] <= 0.0) {
      c_inf = inf;
      c_one = inf;
      break;
    }
    const Scalar ratio = d / data_dist[i];
    c_inf = std::max(c_inf, ratio);
    c_one += d * ratio;
  }
  diag.c_inf = c_inf;
  diag.c_one = c_one;
  return diag;
}

QTable optimal_q(const TabularMDP& model, Scalar tol, int max_iter) {
  validate_mdp(model);
  const Index sa = model.num_states * model.num_actions;
  Vec q = Vec::Zero(sa);
  Vec v = Vec::Zero(model.num_states);
  for (int it = 0; it < max_iter; ++it) {
    for (Index s = 0; s < model.num_states; ++s) {
      Scalar best = q[model.sa(s, 0)];
      for (Index a = 1; a < model.num_actions; ++a)
        best = std::max(best, q[model.sa(s, a)]);
      v[s] = best;
    }
    const Vec next = model.reward + model.discount * (model.transition * v);
    const Scalar delta = (next - q).cwiseAbs().maxCoeff();
    q = next;
    if (delta <= tol) break;
  }
  QTable out;
  out.model_id = model.id;
  out.policy_id = "optimal";
  out.values = Mat(model.num_states, model.num_actions);
  for (Index s = 0; s < model.num_states; ++s)
    for (Index a = 0; a < model.num_actions; ++a)
      out.values(s, a) = q[model.sa(s, a)];
  return out;
}

}  // namespace opesel
