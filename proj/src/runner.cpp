#include "opesel/runner.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "opesel/dp.hpp"
#include "opesel/errors.hpp"
#include "opesel/numeric.hpp"
#include "opesel/parallel.hpp"
#include "opesel/rng.hpp"
#include "opesel/view.hpp"

namespace opesel {

namespace {

std::pair<std::string, std::string> split_selector_id(const std::string& id) {
  const auto pos = id.find(':');
  if (pos == std::string::npos) return {id, ""};
  return {id.substr(0, pos), id.substr(pos + 1)};
}

// min over partners of the pairwise conditioning diagnostic at the chosen
// candidate; NaN for selectors without the tournament's moment matrices.
Scalar sigma_min_at_chosen(const SelectorResult& res,
                           const std::vector<Index>& candidates) {
  const auto it = res.diagnostics.find("sigma_min_pairs");
  if (it == res.diagnostics.end())
    return std::numeric_limits<Scalar>::quiet_NaN();
  const auto msub = static_cast<Index>(candidates.size());
  Index pos = -1;
  for (Index k = 0; k < msub; ++k)
    if (candidates[static_cast<std::size_t>(k)] == res.chosen) {
      pos = k;
      break;
    }
  Scalar best = std::numeric_limits<Scalar>::infinity();
  for (Index p = 0; p < msub; ++p)
    if (p != pos) best = std::min(best, it->second[pos * msub + p]);
  return best;
}

void append_num(std::string& out, Scalar v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

void validate_unit(const ExperimentUnit& unit, const Dataset& data,
                   const std::vector<const QCache*>& caches,
                   const UnitContext& ctx) {
  if (ctx.grid == nullptr || ctx.targets == nullptr)
    throw std::invalid_argument("run_unit: context lacks grid or targets");
  const auto G = static_cast<Index>(ctx.grid->size());
  if (unit.candidate_indices.empty())
    throw std::invalid_argument("run_unit: empty candidate list");
  if (unit.truth_index < 0 || unit.truth_index >= G)
    throw std::invalid_argument("run_unit: truth index out of range");
  for (Index c : unit.candidate_indices)
    if (c < 0 || c >= G)
      throw std::invalid_argument("run_unit: candidate index out of range");
  if (unit.target_indices.empty())
    throw std::invalid_argument("run_unit: no target policies");
  for (Index t : unit.target_indices)
    if (t < 0 || t >= static_cast<Index>(ctx.targets->size()))
      throw std::invalid_argument("run_unit: target index out of range");
  if (unit.bootstrap_reps < 1)
    throw std::invalid_argument("run_unit: bootstrap_reps must be >= 1");
  if (unit.selector_specs.empty())
    throw std::invalid_argument("run_unit: no selectors");
  for (const auto& name : unit.selector_specs) {
    if (!selector_name_valid(name))
      throw std::invalid_argument("run_unit: unknown selector " + name);
    if (split_selector_id(name).first == "naive_model_based" &&
        ctx.embedding == nullptr)
      throw std::invalid_argument("run_unit: naive_model_based needs an embedding");
  }
  if (data.n() != unit.n)
    throw std::invalid_argument("run_unit: dataset size differs from unit.n");
  if (caches.size() != unit.target_indices.size())
    throw std::invalid_argument("run_unit: one cache per target required");
  const std::string want_hash = dataset_hash_hex(data);
  for (std::size_t k = 0; k < caches.size(); ++k) {
    const QCache* cache = caches[k];
    if (cache == nullptr) throw std::invalid_argument("run_unit: null cache");
    if (cache->dataset_hash != want_hash)
      throw HashMismatchError("run_unit: cache was built for another dataset");
    const Policy& pol = (*ctx.targets)[static_cast<std::size_t>(
        unit.target_indices[k])];
    if (cache->policy_id != pol.id)
      throw std::invalid_argument("run_unit: cache policy mismatch");
    if (cache->models() != G)
      throw std::invalid_argument("run_unit: cache does not cover the grid");
    for (Index i = 0; i < G; ++i)
      if (cache->model_ids[static_cast<std::size_t>(i)] !=
          (*ctx.grid)[static_cast<std::size_t>(i)].id)
        throw std::invalid_argument("run_unit: cache model ids mismatch");
  }
}

}  // namespace

Vec empirical_sa_dist(const Dataset& data, Index num_states,
                      Index num_actions) {
  Vec dist = Vec::Zero(num_states * num_actions);
  for (Index t = 0; t < data.n(); ++t) {
    const Index sa = data.s[t] * num_actions + data.a[t];
    if (sa < 0 || sa >= dist.size())
      throw std::invalid_argument("empirical_sa_dist: row out of range");
    dist[sa] += 1.0;
  }
  if (data.n() > 0) dist /= static_cast<Scalar>(data.n());
  return dist;
}

UnitReport run_unit(const ExperimentUnit& unit, const Dataset& data,
                    const std::vector<const QCache*>& caches,
                    const UnitContext& ctx) {
  validate_unit(unit, data, caches, ctx);
  const std::vector<TabularMDP>& grid = *ctx.grid;
  const TabularMDP& truth = grid[static_cast<std::size_t>(unit.truth_index)];
  const auto n_sel = static_cast<Index>(unit.selector_specs.size());
  const auto n_tgt = static_cast<Index>(unit.target_indices.size());
  const Index B = unit.bootstrap_reps;
  const auto msub = static_cast<Index>(unit.candidate_indices.size());

  UnitReport report;
  report.unit = unit;
  report.realizable =
      std::find(unit.candidate_indices.begin(), unit.candidate_indices.end(),
                unit.truth_index) != unit.candidate_indices.end();

  // Exact returns of the truth and of every candidate, per target.
  std::vector<Scalar> j_true(static_cast<std::size_t>(n_tgt));
  std::vector<std::unordered_map<Index, Scalar>> j_cand(
      static_cast<std::size_t>(n_tgt));
  const Vec data_dist =
      ctx.data_dist.size() > 0
          ? ctx.data_dist
          : empirical_sa_dist(data, truth.num_states, truth.num_actions);
  report.coverage.resize(static_cast<std::size_t>(n_tgt));
  for (Index t = 0; t < n_tgt; ++t) {
    const Policy& pol =
        (*ctx.targets)[static_cast<std::size_t>(unit.target_indices[t])];
    j_true[static_cast<std::size_t>(t)] = exact_return(truth, pol);
    for (Index c : unit.candidate_indices)
      j_cand[static_cast<std::size_t>(t)].try_emplace(
          c, exact_return(grid[static_cast<std::size_t>(c)], pol));
    report.coverage[static_cast<std::size_t>(t)] =
        occupancy_and_coverage(truth, pol, data_dist);
  }

  const std::vector<Dataset> replicates =
      bootstrap_resample(data, B, unit.master_seed);

  report.rows.resize(static_cast<std::size_t>(n_sel * n_tgt * B));
  run_tasks(n_sel * n_tgt * B, ctx.jobs, [&](Index cell) {
    const Index b = cell % B;
    const Index t = (cell / B) % n_tgt;
    const Index s = cell / (B * n_tgt);
    const std::string& spec = unit.selector_specs[static_cast<std::size_t>(s)];
    const Policy& pol =
        (*ctx.targets)[static_cast<std::size_t>(unit.target_indices[t])];
    const EvalView view = make_view(*caches[static_cast<std::size_t>(t)],
                                    replicates[static_cast<std::size_t>(b)]);
    SelectorContext sctx;
    sctx.models = &grid;
    sctx.embedding = ctx.embedding;
    sctx.naive_samples = ctx.naive_samples;
    sctx.seed = Rng::derive(unit.master_seed, "cell_seed",
                            {static_cast<std::uint64_t>(t),
                             static_cast<std::uint64_t>(b)})
                    .next_u64();

    SelectorResult res;
    if (msub == 1) {
      // Argmin over a singleton: no selector can do anything but pick it.
      res.selector_id = canonical_selector_id(spec);
      res.losses = Vec::Zero(1);
      res.chosen = unit.candidate_indices[0];
    } else {
      res = run_selector(spec, view, unit.candidate_indices, sctx);
    }

    ReportRow row;
    row.unit_id = unit.unit_id;
    const auto [kind, variant] = split_selector_id(res.selector_id);
    row.selector = kind;
    row.variant = variant;
    row.target = pol.id;
    row.rep = b;
    row.chosen = res.chosen;
    row.predicted_return = j_cand[static_cast<std::size_t>(t)].at(res.chosen);
    row.true_return = j_true[static_cast<std::size_t>(t)];
    row.ope_error = std::abs(row.predicted_return - row.true_return);
    row.sigma_min = sigma_min_at_chosen(res, unit.candidate_indices);
    row.c_one = report.coverage[static_cast<std::size_t>(t)].c_one;
    row.c_inf = report.coverage[static_cast<std::size_t>(t)].c_inf;
    row.realizable = report.realizable;
    row.losses = std::move(res.losses);
    report.rows[static_cast<std::size_t>(cell)] = std::move(row);
  });

  // Percentile bootstrap over the per-replicate target-averaged errors.  The
  // interval is widened to contain the mean when an extreme replicate drags
  // the mean past a percentile.
  for (Index s = 0; s < n_sel; ++s) {
    std::vector<Scalar> rep_means(static_cast<std::size_t>(B), 0.0);
    for (Index b = 0; b < B; ++b) {
      KahanSum acc;
      for (Index t = 0; t < n_tgt; ++t)
        acc.add(report.rows[static_cast<std::size_t>((s * n_tgt + t) * B + b)]
                    .ope_error);
      rep_means[static_cast<std::size_t>(b)] =
          acc.value() / static_cast<Scalar>(n_tgt);
    }
    AggregateRow agg;
    agg.unit_id = unit.unit_id;
    agg.selector = canonical_selector_id(
        unit.selector_specs[static_cast<std::size_t>(s)]);
    agg.mean_error = kahan_mean(rep_means);
    agg.ci_low = std::min(percentile(rep_means, 0.025), agg.mean_error);
    agg.ci_high = std::max(percentile(rep_means, 0.975), agg.mean_error);
    report.aggregates.push_back(std::move(agg));
  }
  return report;
}

std::vector<UnitReport> gap_sweep(const ExperimentUnit& base,
                                  const Dataset& data,
                                  const std::vector<const QCache*>& caches,
                                  const UnitContext& ctx, Index center_index,
                                  const std::vector<Index>& radii) {
  if (ctx.grid == nullptr) throw std::invalid_argument("gap_sweep: no grid");
  const auto G = static_cast<Index>(ctx.grid->size());
  if (center_index < 0 || center_index >= G)
    throw std::invalid_argument("gap_sweep: center out of range");
  std::vector<UnitReport> reports;
  for (Index r : radii) {
    if (r < 1 || center_index - r < 0 || center_index + r >= G)
      throw std::invalid_argument("gap_sweep: radius out of range");
    ExperimentUnit u = base;
    u.unit_id = base.unit_id + "_gap" + std::to_string(r);
    u.candidate_indices = {center_index - r, center_index, center_index + r};
    reports.push_back(run_unit(u, data, caches, ctx));
  }
  return reports;
}

std::vector<UnitReport> misspec_sweep(const ExperimentUnit& base,
                                      const Dataset& data,
                                      const std::vector<const QCache*>& caches,
                                      const UnitContext& ctx, Index window,
                                      const std::vector<Index>& offsets) {
  if (ctx.grid == nullptr) throw std::invalid_argument("misspec_sweep: no grid");
  const auto G = static_cast<Index>(ctx.grid->size());
  if (window < 1) throw std::invalid_argument("misspec_sweep: window must be >= 1");
  std::vector<UnitReport> reports;
  for (Index off : offsets) {
    if (off < 0 || off + window > G)
      throw std::invalid_argument("misspec_sweep: window out of range");
    ExperimentUnit u = base;
    u.unit_id = base.unit_id + "_off" + std::to_string(off);
    u.candidate_indices.clear();
    for (Index k = 0; k < window; ++k) u.candidate_indices.push_back(off + k);
    reports.push_back(run_unit(u, data, caches, ctx));
  }
  return reports;
}

QCache assemble_mixed_cache(const Dataset& mixed, const QCache& on_cache,
                            const QCache& off_cache) {
  const Index n = mixed.n();
  if (mixed.mix_src.size() != n || mixed.mix_src_index.size() != n)
    throw std::invalid_argument("assemble_mixed_cache: mixture provenance missing");
  if (on_cache.policy_id != off_cache.policy_id ||
      on_cache.model_ids != off_cache.model_ids ||
      on_cache.gamma != off_cache.gamma ||
      on_cache.spec.l != off_cache.spec.l ||
      on_cache.spec.horizon != off_cache.spec.horizon ||
      on_cache.spec.split != off_cache.spec.split)
    throw std::invalid_argument("assemble_mixed_cache: parent caches disagree");
  const bool backups = on_cache.has_backups() && off_cache.has_backups();
  const Index m = on_cache.models();

  QCache out;
  out.spec = on_cache.spec;
  out.gamma = on_cache.gamma;
  out.v_max = on_cache.v_max;
  out.model_ids = on_cache.model_ids;
  out.policy_id = on_cache.policy_id;
  out.dataset_hash = dataset_hash_hex(mixed);
  out.q_sa.resize(m, n);
  out.q_next.resize(m, n);
  if (out.spec.split) {
    out.q_sa_a.resize(m, n);
    out.q_sa_b.resize(m, n);
    out.q_next_a.resize(m, n);
    out.q_next_b.resize(m, n);
  }
  if (backups) out.backup.resize(m * m, n);

  for (Index t = 0; t < n; ++t) {
    const Index src = mixed.mix_src[t];
    if (src != 0 && src != 1)
      throw std::invalid_argument("assemble_mixed_cache: bad mix_src");
    const QCache& parent = src == 0 ? on_cache : off_cache;
    const Index col = mixed.mix_src_index[t];
    if (col < 0 || col >= parent.n())
      throw std::invalid_argument("assemble_mixed_cache: source column out of range");
    out.q_sa.col(t) = parent.q_sa.col(col);
    out.q_next.col(t) = parent.q_next.col(col);
    if (out.spec.split) {
      out.q_sa_a.col(t) = parent.q_sa_a.col(col);
      out.q_sa_b.col(t) = parent.q_sa_b.col(col);
      out.q_next_a.col(t) = parent.q_next_a.col(col);
      out.q_next_b.col(t) = parent.q_next_b.col(col);
    }
    if (backups) out.backup.col(t) = parent.backup.col(col);
  }
  return out;
}

std::vector<UnitReport> coverage_sweep(
    const ExperimentUnit& unit, const Dataset& on_data,
    const Dataset& off_data, const std::vector<const QCache*>& on_caches,
    const std::vector<const QCache*>& off_caches, const Vec& on_dist,
    const Vec& off_dist, const std::vector<Scalar>& lambdas,
    const UnitContext& ctx) {
  if (on_caches.size() != unit.target_indices.size() ||
      off_caches.size() != unit.target_indices.size())
    throw std::invalid_argument("coverage_sweep: one cache per target required");
  if (on_dist.size() != off_dist.size() || on_dist.size() == 0)
    throw std::invalid_argument("coverage_sweep: source distribution mismatch");
  std::vector<UnitReport> reports;
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    const Scalar lambda = lambdas[k];
    if (!(lambda >= 0.0 && lambda <= 1.0))
      throw std::invalid_argument("coverage_sweep: lambda outside [0, 1]");
    const std::uint64_t seed =
        Rng::derive(unit.master_seed, "mix", {static_cast<std::uint64_t>(k)})
            .next_u64();
    const Dataset mixed = mix_datasets(on_data, off_data, lambda, unit.n, seed);
    const std::string mixed_hash = dataset_hash_hex(mixed);

    // Reuse a parent cache outright when the mixture IS that parent; other
    // mixtures get their caches assembled column-by-column, never rolled out.
    std::vector<QCache> assembled;
    assembled.reserve(on_caches.size());  // keep pointers stable
    std::vector<const QCache*> caches;
    for (std::size_t t = 0; t < on_caches.size(); ++t) {
      if (mixed_hash == on_caches[t]->dataset_hash) {
        caches.push_back(on_caches[t]);
      } else if (mixed_hash == off_caches[t]->dataset_hash) {
        caches.push_back(off_caches[t]);
      } else {
        assembled.push_back(
            assemble_mixed_cache(mixed, *on_caches[t], *off_caches[t]));
        caches.push_back(&assembled.back());
      }
    }

    const auto n_on = static_cast<Index>(std::llround(
        lambda * static_cast<Scalar>(unit.n)));
    const Scalar frac = static_cast<Scalar>(n_on) / static_cast<Scalar>(unit.n);
    UnitContext mixed_ctx = ctx;
    mixed_ctx.data_dist = frac * on_dist + (1.0 - frac) * off_dist;

    ExperimentUnit u = unit;
    u.unit_id = unit.unit_id + "_lam" + std::to_string(k);
    reports.push_back(run_unit(u, mixed, caches, mixed_ctx));
  }
  return reports;
}

void write_report_csv(const std::vector<UnitReport>& reports,
                      const std::filesystem::path& path) {
  std::string out =
      "unit_id,selector,variant,target,rep,chosen,predicted_return,"
      "true_return,ope_error,sigma_min,c_one,c_inf,realizable_flag\n";
  for (const UnitReport& rep : reports) {
    for (const ReportRow& row : rep.rows) {
      out += row.unit_id;
      out += ',';
      out += row.selector;
      out += ',';
      out += row.variant;
      out += ',';
      out += row.target;
      out += ',';
      out += std::to_string(row.rep);
      out += ',';
      out += std::to_string(row.chosen);
      out += ',';
      append_num(out, row.predicted_return);
      out += ',';
      append_num(out, row.true_return);
      out += ',';
      append_num(out, row.ope_error);
      out += ',';
      append_num(out, row.sigma_min);
      out += ',';
      append_num(out, row.c_one);
      out += ',';
      append_num(out, row.c_inf);
      out += ',';
      out += row.realizable ? '1' : '0';
      out += '\n';
    }
  }
  write_text(path, out);
}

void write_aggregate_csv(const std::vector<UnitReport>& reports,
                         const std::filesystem::path& path) {
  std::string out = "unit_id,selector,mean_error,ci_low,ci_high\n";
  for (const UnitReport& rep : reports) {
    for (const AggregateRow& agg : rep.aggregates) {
      out += agg.unit_id;
      out += ',';
      out += agg.selector;
      out += ',';
      append_num(out, agg.mean_error);
      out += ',';
      append_num(out, agg.ci_low);
      out += ',';
      append_num(out, agg.ci_high);
      out += '\n';
    }
  }
  write_text(path, out);
}

}  // namespace opesel
