#include "opesel/mdp.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "opesel/serialize.hpp"

namespace opesel {

namespace {

constexpr Scalar kDistTol = 1e-12;

void check_distribution_rows(const Mat& rows, const char* what) {
  for (Index r = 0; r < rows.rows(); ++r) {
    if ((rows.row(r).array() < 0.0).any()) {
      std::ostringstream msg;
      msg << what << " row " << r << " has a negative entry";
      throw std::invalid_argument(msg.str());
    }
    const Scalar sum = rows.row(r).sum();
    if (std::abs(sum - 1.0) > kDistTol) {
      std::ostringstream msg;
      msg << what << " row " << r << " sums to " << sum << ", expected 1";
      throw std::invalid_argument(msg.str());
    }
  }
}

}  // namespace

void validate_mdp(const TabularMDP& m) {
  if (m.num_states <= 0 || m.num_actions <= 0)
    throw std::invalid_argument("mdp: num_states and num_actions must be positive");
  if (!(m.discount >= 0.0 && m.discount < 1.0))
    throw std::invalid_argument("mdp: discount must lie in [0, 1)");
  if (!(m.r_max > 0.0))
    throw std::invalid_argument("mdp: r_max must be positive");
  const Index sa = m.num_states * m.num_actions;
  if (m.transition.rows() != sa || m.transition.cols() != m.num_states)
    throw std::invalid_argument("mdp: transition table has wrong shape");
  if (m.reward.size() != sa)
    throw std::invalid_argument("mdp: reward table has wrong shape");
  if (m.initial_dist.size() != m.num_states)
    throw std::invalid_argument("mdp: initial_dist has wrong shape");
  check_distribution_rows(m.transition, "mdp: transition");
  check_distribution_rows(Mat(m.initial_dist.transpose()), "mdp: initial_dist");
  for (Index i = 0; i < sa; ++i) {
    if (m.reward[i] < 0.0 || m.reward[i] > m.r_max)
      throw std::invalid_argument("mdp: reward out of [0, r_max]");
  }
}

void validate_policy(const TabularMDP& m, const Policy& pi) {
  if (pi.probs.rows() != m.num_states || pi.probs.cols() != m.num_actions)
    throw std::invalid_argument("policy '" + pi.id + "' has wrong shape");
  check_distribution_rows(pi.probs, "policy");
}

Policy uniform_policy(Index num_states, Index num_actions, std::string id) {
  Policy pi;
  pi.id = std::move(id);
  pi.probs = Mat::Constant(num_states, num_actions,
                           1.0 / static_cast<Scalar>(num_actions));
  return pi;
}

Policy greedy_policy(const QTable& q, std::string id) {
  Policy pi;
  pi.id = std::move(id);
  pi.probs = Mat::Zero(q.values.rows(), q.values.cols());
  for (Index s = 0; s < q.values.rows(); ++s) {
    Index best = 0;
    q.values.row(s).maxCoeff(&best);
    pi.probs(s, best) = 1.0;
  }
  return pi;
}

Policy softmax_policy(const QTable& q, Scalar temperature, std::string id) {
  if (!(temperature > 0.0))
    throw std::invalid_argument("softmax_policy: temperature must be positive");
  Policy pi;
  pi.id = std::move(id);
  pi.probs = Mat(q.values.rows(), q.values.cols());
  for (Index s = 0; s < q.values.rows(); ++s) {
    // Shift by the row max before exponentiating for stability.
    Vec z = (q.values.row(s).array() - q.values.row(s).maxCoeff()) / temperature;
    Vec e = z.array().exp();
    pi.probs.row(s) = e.transpose() / e.sum();
  }
  return pi;
}

nlohmann::json mdp_to_json(const TabularMDP& m) {
  nlohmann::json j;
  j["id"] = m.id;
  j["num_states"] = m.num_states;
  j["num_actions"] = m.num_actions;
  j["discount"] = m.discount;
  j["r_max"] = m.r_max;
  auto flat = [](const auto& mat) {
    std::vector<Scalar> out;
    out.reserve(static_cast<std::size_t>(mat.size()));
    for (Index r = 0; r < mat.rows(); ++r)
      for (Index c = 0; c < mat.cols(); ++c) out.push_back(mat(r, c));
    return out;
  };
  j["transition"] = flat(m.transition);
  j["reward"] = std::vector<Scalar>(m.reward.begin(), m.reward.end());
  j["initial_dist"] =
      std::vector<Scalar>(m.initial_dist.begin(), m.initial_dist.end());
  return j;
}

TabularMDP mdp_from_json(const nlohmann::json& j) {
  TabularMDP m;
  m.id = j.at("id").get<std::string>();
  m.num_states = j.at("num_states").get<Index>();
  m.num_actions = j.at("num_actions").get<Index>();
  m.discount = j.at("discount").get<Scalar>();
  m.r_max = j.at("r_max").get<Scalar>();
  const Index sa = m.num_states * m.num_actions;
  const auto trans = j.at("transition").get<std::vector<Scalar>>();
  if (static_cast<Index>(trans.size()) != sa * m.num_states)
    throw std::invalid_argument("mdp_from_json: transition length mismatch");
  m.transition = Mat(sa, m.num_states);
  for (Index r = 0; r < sa; ++r)
    for (Index c = 0; c < m.num_states; ++c)
      m.transition(r, c) = trans[static_cast<std::size_t>(r * m.num_states + c)];
  const auto rew = j.at("reward").get<std::vector<Scalar>>();
  if (static_cast<Index>(rew.size()) != sa)
    throw std::invalid_argument("mdp_from_json: reward length mismatch");
  m.reward = Eigen::Map<const Vec>(rew.data(), sa);
  const auto d0 = j.at("initial_dist").get<std::vector<Scalar>>();
  if (static_cast<Index>(d0.size()) != m.num_states)
    throw std::invalid_argument("mdp_from_json: initial_dist length mismatch");
  m.initial_dist = Eigen::Map<const Vec>(d0.data(), m.num_states);
  validate_mdp(m);
  return m;
}

nlohmann::json policy_to_json(const Policy& pi) {
  nlohmann::json j;
  j["id"] = pi.id;
  j["num_states"] = pi.probs.rows();
  j["num_actions"] = pi.probs.cols();
  std::vector<Scalar> flat;
  flat.reserve(static_cast<std::size_t>(pi.probs.size()));
  for (Index r = 0; r < pi.probs.rows(); ++r)
    for (Index c = 0; c < pi.probs.cols(); ++c) flat.push_back(pi.probs(r, c));
  j["probs"] = flat;
  return j;
}

Policy policy_from_json(const nlohmann::json& j) {
  Policy pi;
  pi.id = j.at("id").get<std::string>();
  const Index s = j.at("num_states").get<Index>();
  const Index a = j.at("num_actions").get<Index>();
  const auto flat = j.at("probs").get<std::vector<Scalar>>();
  if (static_cast<Index>(flat.size()) != s * a)
    throw std::invalid_argument("policy_from_json: probs length mismatch");
  pi.probs = Mat(s, a);
  for (Index r = 0; r < s; ++r)
    for (Index c = 0; c < a; ++c)
      pi.probs(r, c) = flat[static_cast<std::size_t>(r * a + c)];
  return pi;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  nlohmann::json j;
  in >> j;
  return j;
}

}  // namespace opesel
