#include "opesel/worlds.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "opesel/dp.hpp"
#include "opesel/hashutil.hpp"

namespace opesel {

namespace {

struct Layout {
  Index width = 0;
  Index height = 0;
  Index start = 0;  // cell = row * width + col
  Index goal = 0;
  std::vector<Index> pits;
};

Index cell(const Layout& lay, Index row, Index col) {
  return row * lay.width + col;
}

Layout get_layout(const std::string& world) {
  if (world == "default8") {
    Layout lay;
    lay.width = 8;
    lay.height = 8;
    lay.start = cell(lay, 0, 0);
    lay.goal = cell(lay, 7, 7);
    lay.pits = {cell(lay, 3, 2), cell(lay, 3, 3), cell(lay, 3, 4),
                cell(lay, 5, 6), cell(lay, 6, 2)};
    return lay;
  }
  if (world == "open5") {
    Layout lay;
    lay.width = 5;
    lay.height = 5;
    lay.start = cell(lay, 0, 0);
    lay.goal = cell(lay, 4, 4);
    return lay;
  }
  if (world == "cliff4") {
    Layout lay;
    lay.width = 4;
    lay.height = 4;
    lay.start = cell(lay, 3, 0);
    lay.goal = cell(lay, 3, 3);
    lay.pits = {cell(lay, 3, 1), cell(lay, 3, 2)};
    return lay;
  }
  throw std::invalid_argument("unknown world layout: " + world);
}

bool is_terminal(const Layout& lay, Index s) {
  if (s == lay.goal) return true;
  return std::find(lay.pits.begin(), lay.pits.end(), s) != lay.pits.end();
}

// Clamped move; off-grid moves stay in place.  Directions: 0 up, 1 right,
// 2 down, 3 left (down = increasing row).
Index move(const Layout& lay, Index s, int dir) {
  Index row = s / lay.width, col = s % lay.width;
  switch (dir) {
    case 0: row = std::max<Index>(0, row - 1); break;
    case 1: col = std::min(lay.width - 1, col + 1); break;
    case 2: row = std::min(lay.height - 1, row + 1); break;
    case 3: col = std::max<Index>(0, col - 1); break;
    default: throw std::logic_error("bad direction");
  }
  return cell(lay, row, col);
}

std::string format_param(Scalar v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

}  // namespace

std::vector<std::string> known_worlds() {
  return {"default8", "open5", "cliff4"};
}

TabularMDP make_world(const EnvParams& params) {
  if (params.noise < 0.0 || params.noise > 1.0)
    throw std::invalid_argument("make_world: noise must lie in [0,1]");
  if (params.drift < 0.0 || params.drift > 1.0)
    throw std::invalid_argument("make_world: drift must lie in [0,1]");
  if (!(params.gamma >= 0.0 && params.gamma < 1.0))
    throw std::invalid_argument("make_world: gamma must lie in [0,1)");
  const Layout lay = get_layout(params.world);

  TabularMDP m;
  m.id = params.world + "_n" + format_param(params.noise) + "_d" +
         format_param(params.drift);
  m.num_states = lay.width * lay.height;
  m.num_actions = 4;
  m.discount = params.gamma;
  m.r_max = 1.0;
  const Index sa = m.num_states * m.num_actions;
  m.transition = Mat::Zero(sa, m.num_states);
  m.reward = Vec::Zero(sa);
  m.initial_dist = Vec::Zero(m.num_states);
  m.initial_dist[lay.start] = 1.0;

  const Index goal_row = lay.goal / lay.width, goal_col = lay.goal % lay.width;
  const Scalar max_dist =
      static_cast<Scalar>((lay.width - 1) + (lay.height - 1));

  for (Index s = 0; s < m.num_states; ++s) {
    Scalar shaped;
    if (s == lay.goal) {
      shaped = 1.0;
    } else if (is_terminal(lay, s)) {
      shaped = 0.0;
    } else {
      const Index row = s / lay.width, col = s % lay.width;
      const Scalar dist = static_cast<Scalar>(std::abs(row - goal_row) +
                                              std::abs(col - goal_col));
      shaped = 1.0 - dist / max_dist;
    }
    for (Index a = 0; a < 4; ++a) {
      m.reward[m.sa(s, a)] = shaped;
      if (is_terminal(lay, s)) {
        m.transition(m.sa(s, a), s) = 1.0;
        continue;
      }
      for (int dir = 0; dir < 4; ++dir) {
        // Slip: the executed direction is resampled uniformly w.p. noise.
        Scalar p = params.noise / 4.0;
        if (dir == a) p += 1.0 - params.noise;
        if (p == 0.0) continue;
        const Index dest = move(lay, s, dir);
        if (is_terminal(lay, dest) || params.drift == 0.0) {
          // Entering a terminal cell ends movement; no drift afterwards.
          m.transition(m.sa(s, a), dest) += p;
        } else {
          const Index pushed = move(lay, dest, 2);
          m.transition(m.sa(s, a), dest) += p * (1.0 - params.drift);
          m.transition(m.sa(s, a), pushed) += p * params.drift;
        }
      }
    }
  }
  validate_mdp(m);
  return m;
}

ModelGrid make_grid(const EnvParams& base, VaryAxis axis,
                    const GridSpec& spec) {
  if (spec.count < 1)
    throw std::invalid_argument("make_grid: count must be >= 1");
  ModelGrid grid;
  for (Index k = 0; k < spec.count; ++k) {
    const Scalar raw =
        spec.count == 1
            ? spec.start
            : spec.start + (spec.stop - spec.start) *
                               (static_cast<Scalar>(k) /
                                static_cast<Scalar>(spec.count - 1));
    Scalar value = raw;
    if (value < 0.0 || value > 1.0) {
      value = std::clamp(value, 0.0, 1.0);
      // Endpoint arithmetic can overshoot by an ulp; snap silently, warn only
      // about genuine escapes.
      if (std::abs(raw - value) > 1e-12) {
        std::ostringstream warn;
        warn << "grid value " << format_param(raw) << " at position " << k
             << " clamped to " << format_param(value);
        grid.warnings.push_back(warn.str());
      }
    }
    EnvParams p = base;
    (axis == VaryAxis::noise ? p.noise : p.drift) = value;
    grid.values.push_back(raw);
    grid.params.push_back(p);
    grid.models.push_back(make_world(p));
  }
  return grid;
}

std::vector<Policy> make_target_policies(const TabularMDP& reference,
                                         Index count) {
  if (count < 1)
    throw std::invalid_argument("make_target_policies: count must be >= 1");
  const QTable opt = optimal_q(reference, 1e-10);
  // The hot end is kept mildly directed (v_max/5, not v_max): a near-uniform
  // policy returns almost the same value in every model of a slip-noise grid,
  // which would trip the sanity check's degenerate-in-models flag.
  const Scalar tau_hi = reference.v_max() / 5.0;
  const Scalar tau_lo = reference.v_max() / 500.0;
  std::vector<Policy> out;
  for (Index k = 0; k < count; ++k) {
    const Scalar frac =
        count == 1 ? 1.0
                   : static_cast<Scalar>(k) / static_cast<Scalar>(count - 1);
    const Scalar tau = tau_hi * std::pow(tau_lo / tau_hi, frac);
    out.push_back(softmax_policy(opt, tau, "target_" + std::to_string(k)));
  }
  return out;
}

SanityReport sanity_check_grid(const std::vector<TabularMDP>& models,
                               const std::vector<Policy>& policies) {
  if (models.empty() || policies.empty())
    throw std::invalid_argument("sanity_check_grid: empty inputs");
  SanityReport report;
  const auto n_models = static_cast<Index>(models.size());
  const auto n_policies = static_cast<Index>(policies.size());
  report.j_matrix = Mat(n_models, n_policies);
  for (Index i = 0; i < n_models; ++i)
    for (Index p = 0; p < n_policies; ++p)
      report.j_matrix(i, p) = exact_return(models[static_cast<std::size_t>(i)],
                                           policies[static_cast<std::size_t>(p)]);
  report.threshold = 0.05 * models[0].v_max();
  for (Index p = 0; p < n_policies; ++p) {
    const Scalar range =
        report.j_matrix.col(p).maxCoeff() - report.j_matrix.col(p).minCoeff();
    if (range < report.threshold) report.flat_policy_indices.push_back(p);
  }
  for (Index i = 0; i < n_models; ++i) {
    const Scalar range =
        report.j_matrix.row(i).maxCoeff() - report.j_matrix.row(i).minCoeff();
    if (range < report.threshold) report.flat_model_indices.push_back(i);
  }
  report.degenerate_in_models = !report.flat_policy_indices.empty();
  report.degenerate_in_policies = !report.flat_model_indices.empty();
  return report;
}

Mat world_embedding(const std::string& world) {
  const Layout lay = get_layout(world);
  Mat embed(lay.width * lay.height, 2);
  for (Index s = 0; s < lay.width * lay.height; ++s) {
    embed(s, 0) = static_cast<Scalar>(s / lay.width);
    embed(s, 1) = static_cast<Scalar>(s % lay.width);
  }
  return embed;
}

std::uint64_t layout_hash(const std::string& world) {
  const Layout lay = get_layout(world);
  ContentHash h;
  h.str(world)
      .u64(static_cast<std::uint64_t>(lay.width))
      .u64(static_cast<std::uint64_t>(lay.height))
      .u64(static_cast<std::uint64_t>(lay.start))
      .u64(static_cast<std::uint64_t>(lay.goal));
  for (Index pit : lay.pits) h.u64(static_cast<std::uint64_t>(pit));
  return h.value();
}

}  // namespace opesel
