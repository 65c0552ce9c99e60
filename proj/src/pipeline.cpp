#include "opesel/pipeline.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "opesel/data.hpp"
#include "opesel/dp.hpp"
#include "opesel/errors.hpp"
#include "opesel/qcache.hpp"
#include "opesel/rng.hpp"
#include "opesel/runner.hpp"
#include "opesel/serialize.hpp"
#include "opesel/sim.hpp"

// Stage wiring.  Every stage re-derives the deterministic inputs (grid,
// targets, behavior) from the config and trusts on-disk artifacts only when
// their manifest carries the same config hash; anything missing or produced
// by a different config is reported as a HashMismatchError so the caller
// knows which stage to re-run.  Layout under out_dir:
//   gen/        manifest.json, model_<k>.json, target_<k>.json
//   data/       data.json + data.bin + stage.json
//   select/     rows.csv + aggregates.csv + stage.json
//   sweep_*/    rows.csv + aggregates.csv + stage.json
//   report/     concatenated CSVs + stage.json
// Rollout caches live under cache_root(), one directory per target policy.

namespace opesel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Deterministic reconstruction of everything the config pins down.
struct Resolved {
  ModelGrid grid;
  std::vector<Policy> targets;
  Policy behavior;
  std::vector<std::string> model_ids;
};

Policy build_behavior(const BehaviorSpec& spec, const TabularMDP& truth,
                      const std::vector<Policy>& targets) {
  if (spec.kind == "uniform")
    return uniform_policy(truth.num_states, truth.num_actions);
  return noisy_behavior(targets[static_cast<std::size_t>(spec.target_index)],
                        spec.act_prob);
}

Resolved resolve(const RunConfig& config) {
  Resolved r;
  r.grid = make_grid(config.world, config.vary, config.grid);
  const TabularMDP& truth =
      r.grid.models[static_cast<std::size_t>(config.truth_index)];
  r.targets = make_target_policies(truth, config.target_count);
  r.behavior = build_behavior(config.behavior, truth, r.targets);
  r.model_ids.reserve(r.grid.models.size());
  for (const auto& m : r.grid.models) r.model_ids.push_back(m.id);
  return r;
}

int resolved_horizon(const RunConfig& config) {
  return config.rollouts.horizon > 0 ? config.rollouts.horizon
                                     : default_horizon(config.world.gamma);
}

// The backup block is only needed by the one-step-regression selectors.
bool selectors_need_backups(const std::vector<std::string>& specs) {
  for (const auto& s : specs)
    if (s == "regression_zitovsky" || s == "regression_antos" ||
        s == "sign_flip")
      return true;
  return false;
}

json read_stage(const fs::path& path, const std::string& schema,
                const std::string& config_hash, const std::string& producer) {
  if (!fs::exists(path))
    throw HashMismatchError("missing " + path.string() + "; run `opesel " +
                            producer + "` first");
  json doc;
  try {
    doc = read_json_file(path);
  } catch (const std::exception& e) {
    throw HashMismatchError(path.string() + " is unreadable (" + e.what() +
                            "); re-run `opesel " + producer + "`");
  }
  if (doc.value("schema", "") != schema)
    throw HashMismatchError(path.string() + " has unexpected schema \"" +
                            doc.value("schema", "") + "\"");
  if (doc.value("config_hash", "") != config_hash)
    throw HashMismatchError(path.string() +
                            " was produced by a different config; re-run "
                            "`opesel " +
                            producer + "`");
  return doc;
}

// Gen-manifest gate shared by every downstream stage: the hash must match
// and a degenerate grid blocks unless it was forced (at gen time or now).
json check_gen(const RunConfig& config, const StageOptions& opts,
               const std::string& hash) {
  json manifest =
      read_stage(config.out_dir / "gen" / "manifest.json", "gen-v1", hash,
                 "gen");
  if (manifest.value("degenerate", false) &&
      !manifest.value("forced", false) && !opts.force)
    throw SanityError(
        "model grid is degenerate under the sanity check (see gen/"
        "manifest.json); re-run `opesel gen --force` to proceed anyway");
  return manifest;
}

Dataset load_checked_dataset(const RunConfig& config,
                             const std::string& hash) {
  const fs::path dir = config.out_dir / "data";
  const json stage = read_stage(dir / "stage.json", "sample-v1", hash,
                                "sample");
  Dataset data = load_dataset(dir, "data");
  if (dataset_hash_hex(data) != stage.value("dataset_hash", ""))
    throw HashMismatchError(
        "data/: dataset bytes do not match the sample manifest; re-run "
        "`opesel sample`");
  return data;
}

std::vector<QCache> load_matching_caches(const RunConfig& config,
                                         const Resolved& r,
                                         const std::string& data_hash,
                                         bool need_backups) {
  const fs::path root = cache_root(config);
  const int horizon = resolved_horizon(config);
  std::vector<QCache> caches;
  caches.reserve(r.targets.size());
  for (std::size_t t = 0; t < r.targets.size(); ++t) {
    const fs::path dir = root / ("target_" + std::to_string(t));
    if (!cache_matches(dir, data_hash, r.targets[t].id, r.model_ids,
                       config.rollouts, horizon, config.world.gamma,
                       need_backups))
      throw HashMismatchError(
          "cache at " + dir.string() + " is missing or stale; run `opesel "
          "cache" + std::string(need_backups ? " --with-backups" : "") + "`");
    caches.push_back(load_cache(dir));
  }
  return caches;
}

// Everything select and sweep share.  Filled in place so the UnitContext
// pointers into grid / targets / embedding stay valid.
struct SelectSetup {
  Resolved r;
  Dataset data;
  std::vector<QCache> caches;
  std::vector<const QCache*> cache_ptrs;
  Mat embedding;
  ExperimentUnit unit;
  UnitContext ctx;
};

void prepare_select(const RunConfig& config, const StageOptions& opts,
                    const std::string& hash, SelectSetup& s) {
  check_gen(config, opts, hash);
  s.r = resolve(config);
  s.data = load_checked_dataset(config, hash);
  s.caches = load_matching_caches(config, s.r, dataset_hash_hex(s.data),
                                  selectors_need_backups(config.selectors));
  s.cache_ptrs.reserve(s.caches.size());
  for (const auto& c : s.caches) s.cache_ptrs.push_back(&c);
  s.embedding = world_embedding(config.world.world);

  s.unit.unit_id = "unit_" + hash.substr(0, 8);
  s.unit.truth_index = config.truth_index;
  s.unit.candidate_indices.resize(static_cast<std::size_t>(config.grid.count));
  std::iota(s.unit.candidate_indices.begin(), s.unit.candidate_indices.end(),
            Index{0});
  s.unit.behavior_id = s.data.behavior_id;
  s.unit.n = config.n;
  s.unit.target_indices.resize(static_cast<std::size_t>(config.target_count));
  std::iota(s.unit.target_indices.begin(), s.unit.target_indices.end(),
            Index{0});
  s.unit.selector_specs = config.selectors;
  s.unit.rollout_spec = config.rollouts;
  s.unit.bootstrap_reps = config.bootstrap_reps;
  s.unit.master_seed = config.master_seed;

  s.ctx.grid = &s.r.grid.models;
  s.ctx.targets = &s.r.targets;
  s.ctx.embedding = &s.embedding;
  s.ctx.jobs = opts.jobs;
  // iid draws come from the behavior's exact discounted occupancy, so the
  // coverage diagnostics can use it directly; trajectory data falls back to
  // empirical frequencies inside run_unit.
  if (config.mode == SampleMode::iid)
    s.ctx.data_dist = discounted_occupancy(
        s.r.grid.models[static_cast<std::size_t>(config.truth_index)],
        s.r.behavior);
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw std::runtime_error("short write to " + path.string());
}

struct CsvDoc {
  std::string header;
  std::vector<std::string> lines;
};

CsvDoc read_csv(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw HashMismatchError("missing " + path.string() +
                            "; re-run the producing stage");
  CsvDoc doc;
  std::string line;
  if (!std::getline(f, line))
    throw HashMismatchError(path.string() + " is empty");
  doc.header = line;
  while (std::getline(f, line))
    if (!line.empty()) doc.lines.push_back(line);
  return doc;
}

}  // namespace

fs::path cache_root(const RunConfig& config) {
  if (const char* env = std::getenv("OPESEL_CACHE_DIR"))
    return fs::path(env) / config_hash_hex(config);
  return config.out_dir / "cache";
}

void stage_gen(const RunConfig& config, const StageOptions& opts) {
  const std::string hash = config_hash_hex(config);
  const Resolved r = resolve(config);
  const SanityReport sanity = sanity_check_grid(r.grid.models, r.targets);
  const bool degenerate =
      sanity.degenerate_in_models || sanity.degenerate_in_policies;

  const fs::path dir = config.out_dir / "gen";
  fs::create_directories(dir);
  for (std::size_t k = 0; k < r.grid.models.size(); ++k)
    write_json_file(dir / ("model_" + std::to_string(k) + ".json"),
                    mdp_to_json(r.grid.models[k]));
  for (std::size_t k = 0; k < r.targets.size(); ++k)
    write_json_file(dir / ("target_" + std::to_string(k) + ".json"),
                    policy_to_json(r.targets[k]));

  json manifest;
  manifest["schema"] = "gen-v1";
  manifest["config_hash"] = hash;
  manifest["model_ids"] = r.model_ids;
  {
    json ids = json::array();
    for (const auto& p : r.targets) ids.push_back(p.id);
    manifest["target_ids"] = ids;
  }
  manifest["grid_values"] = r.grid.values;
  manifest["warnings"] = r.grid.warnings;
  {
    json jm = json::array();
    for (Index i = 0; i < sanity.j_matrix.rows(); ++i) {
      json row = json::array();
      for (Index p = 0; p < sanity.j_matrix.cols(); ++p)
        row.push_back(sanity.j_matrix(i, p));
      jm.push_back(std::move(row));
    }
    manifest["j_matrix"] = std::move(jm);
  }
  manifest["flat_model_indices"] = sanity.flat_model_indices;
  manifest["flat_policy_indices"] = sanity.flat_policy_indices;
  manifest["sanity_threshold"] = sanity.threshold;
  manifest["degenerate"] = degenerate;
  manifest["forced"] = degenerate && opts.force;
  write_json_file(dir / "manifest.json", manifest);

  // The manifest is written first so a blocked run can still be inspected.
  if (degenerate && !opts.force)
    throw SanityError("gen: model grid is degenerate under the sanity check "
                      "(see " + (dir / "manifest.json").string() +
                      "); re-run with --force to proceed anyway");
}

void stage_sample(const RunConfig& config, const StageOptions& opts) {
  const std::string hash = config_hash_hex(config);
  check_gen(config, opts, hash);
  const Resolved r = resolve(config);
  const TabularMDP& truth =
      r.grid.models[static_cast<std::size_t>(config.truth_index)];
  const std::uint64_t seed =
      Rng::derive(config.master_seed, "dataset").next_u64();
  const Dataset data =
      sample_dataset(truth, r.behavior, config.n, config.mode, seed);

  const fs::path dir = config.out_dir / "data";
  fs::create_directories(dir);
  save_dataset(data, dir, "data");

  json stage;
  stage["schema"] = "sample-v1";
  stage["config_hash"] = hash;
  stage["dataset_hash"] = dataset_hash_hex(data);
  stage["behavior_id"] = data.behavior_id;
  stage["n"] = data.n();
  write_json_file(dir / "stage.json", stage);
}

void stage_cache(const RunConfig& config, const StageOptions& opts) {
  const std::string hash = config_hash_hex(config);
  check_gen(config, opts, hash);
  const Dataset data = load_checked_dataset(config, hash);
  const Resolved r = resolve(config);
  const std::string data_hash = dataset_hash_hex(data);
  const int horizon = resolved_horizon(config);
  const fs::path root = cache_root(config);
  for (std::size_t t = 0; t < r.targets.size(); ++t) {
    const fs::path dir = root / ("target_" + std::to_string(t));
    if (cache_matches(dir, data_hash, r.targets[t].id, r.model_ids,
                      config.rollouts, horizon, config.world.gamma,
                      opts.with_backups))
      continue;  // already built for this exact request
    fs::create_directories(dir);
    const QCache cache =
        build_cache(data, r.grid.models, r.targets[t], config.rollouts,
                    opts.with_backups, opts.jobs, dir);
    save_cache(cache, dir);
  }
}

void stage_select(const RunConfig& config, const StageOptions& opts) {
  const std::string hash = config_hash_hex(config);
  SelectSetup s;
  prepare_select(config, opts, hash, s);

  const std::uint64_t before = rollouts_performed();
  UnitReport report = run_unit(s.unit, s.data, s.cache_ptrs, s.ctx);
  if (rollouts_performed() != before)
    throw std::logic_error("select: selection must not trigger rollouts");

  const fs::path dir = config.out_dir / "select";
  fs::create_directories(dir);
  std::vector<UnitReport> reports;
  reports.push_back(std::move(report));
  write_report_csv(reports, dir / "rows.csv");
  write_aggregate_csv(reports, dir / "aggregates.csv");

  json stage;
  stage["schema"] = "select-v1";
  stage["config_hash"] = hash;
  stage["dataset_hash"] = dataset_hash_hex(s.data);
  stage["unit_id"] = reports.front().unit.unit_id;
  stage["rows"] = reports.front().rows.size();
  stage["realizable"] = reports.front().realizable;
  write_json_file(dir / "stage.json", stage);
}

void stage_sweep(const RunConfig& config, const StageOptions& opts) {
  if (!config.has_gap && !config.has_misspec && !config.has_coverage)
    throw ConfigError("sweep: the config declares no sweeps");
  const std::string hash = config_hash_hex(config);
  SelectSetup s;
  prepare_select(config, opts, hash, s);

  const auto emit = [&](const std::string& kind,
                        const std::vector<UnitReport>& reports) {
    const fs::path dir = config.out_dir / ("sweep_" + kind);
    fs::create_directories(dir);
    write_report_csv(reports, dir / "rows.csv");
    write_aggregate_csv(reports, dir / "aggregates.csv");
    json stage;
    stage["schema"] = "sweep-v1";
    stage["kind"] = kind;
    stage["config_hash"] = hash;
    json units = json::array();
    for (const auto& rep : reports) units.push_back(rep.unit.unit_id);
    stage["unit_ids"] = std::move(units);
    write_json_file(dir / "stage.json", stage);
  };

  if (config.has_gap) {
    const std::uint64_t before = rollouts_performed();
    const auto reports = gap_sweep(s.unit, s.data, s.cache_ptrs, s.ctx,
                                   config.gap.center, config.gap.radii);
    if (rollouts_performed() != before)
      throw std::logic_error("sweep: gap sweep must not trigger rollouts");
    emit("gap", reports);
  }

  if (config.has_misspec) {
    const std::uint64_t before = rollouts_performed();
    const auto reports =
        misspec_sweep(s.unit, s.data, s.cache_ptrs, s.ctx,
                      config.misspec.window, config.misspec.offsets);
    if (rollouts_performed() != before)
      throw std::logic_error("sweep: misspec sweep must not trigger rollouts");
    emit("misspec", reports);
  }

  if (config.has_coverage) {
    const TabularMDP& truth =
        s.r.grid.models[static_cast<std::size_t>(config.truth_index)];
    const Policy off_behavior =
        build_behavior(config.coverage.off_behavior, truth, s.r.targets);
    const std::uint64_t off_seed =
        Rng::derive(config.master_seed, "off_data").next_u64();
    const Dataset off_data =
        sample_dataset(truth, off_behavior, config.n, config.mode, off_seed);

    // The off-policy source needs its own caches; building them here is the
    // one place sweep may roll out.  Mixtures below must not.
    const fs::path root = cache_root(config);
    const int horizon = resolved_horizon(config);
    const std::string off_hash = dataset_hash_hex(off_data);
    const bool need_backups = selectors_need_backups(config.selectors);
    std::vector<QCache> off_caches;
    off_caches.reserve(s.r.targets.size());
    for (std::size_t t = 0; t < s.r.targets.size(); ++t) {
      const fs::path dir = root / ("off_target_" + std::to_string(t));
      if (cache_matches(dir, off_hash, s.r.targets[t].id, s.r.model_ids,
                        config.rollouts, horizon, config.world.gamma,
                        need_backups)) {
        off_caches.push_back(load_cache(dir));
      } else {
        fs::create_directories(dir);
        QCache c = build_cache(off_data, s.r.grid.models, s.r.targets[t],
                               config.rollouts,
                               opts.with_backups || need_backups, opts.jobs,
                               dir);
        save_cache(c, dir);
        off_caches.push_back(std::move(c));
      }
    }
    std::vector<const QCache*> off_ptrs;
    off_ptrs.reserve(off_caches.size());
    for (const auto& c : off_caches) off_ptrs.push_back(&c);

    Vec on_dist, off_dist;
    if (config.mode == SampleMode::iid) {
      on_dist = discounted_occupancy(truth, s.r.behavior);
      off_dist = discounted_occupancy(truth, off_behavior);
    } else {
      on_dist =
          empirical_sa_dist(s.data, truth.num_states, truth.num_actions);
      off_dist =
          empirical_sa_dist(off_data, truth.num_states, truth.num_actions);
    }

    const std::uint64_t before = rollouts_performed();
    const auto reports =
        coverage_sweep(s.unit, s.data, off_data, s.cache_ptrs, off_ptrs,
                       on_dist, off_dist, config.coverage.lambdas, s.ctx);
    if (rollouts_performed() != before)
      throw std::logic_error("sweep: cache mixing must not trigger rollouts");
    emit("coverage", reports);
  }
}

void stage_report(const RunConfig& config, const StageOptions& /*opts*/) {
  const std::string hash = config_hash_hex(config);
  std::vector<fs::path> sources;
  read_stage(config.out_dir / "select" / "stage.json", "select-v1", hash,
             "select");
  sources.push_back(config.out_dir / "select");
  const std::pair<const char*, bool> kinds[] = {
      {"gap", config.has_gap},
      {"misspec", config.has_misspec},
      {"coverage", config.has_coverage}};
  for (const auto& [kind, wanted] : kinds) {
    if (!wanted) continue;
    const fs::path dir = config.out_dir / (std::string("sweep_") + kind);
    read_stage(dir / "stage.json", "sweep-v1", hash, "sweep");
    sources.push_back(dir);
  }

  struct SelStats {
    Scalar sum = 0.0;
    Scalar lo = std::numeric_limits<Scalar>::infinity();
    Scalar hi = -std::numeric_limits<Scalar>::infinity();
    int units = 0;
  };
  std::map<std::string, SelStats> summary;

  std::string rows_out, agg_out;
  std::string rows_header, agg_header;
  std::size_t row_count = 0;
  for (const auto& src : sources) {
    const CsvDoc rows = read_csv(src / "rows.csv");
    if (rows_header.empty()) {
      rows_header = rows.header;
      rows_out = rows_header + "\n";
    } else if (rows.header != rows_header) {
      throw HashMismatchError(src.string() +
                              "/rows.csv: header differs across stages");
    }
    for (const auto& line : rows.lines) {
      rows_out += line;
      rows_out += '\n';
      ++row_count;
    }

    const CsvDoc aggs = read_csv(src / "aggregates.csv");
    if (agg_header.empty()) {
      agg_header = aggs.header;
      agg_out = agg_header + "\n";
    } else if (aggs.header != agg_header) {
      throw HashMismatchError(src.string() +
                              "/aggregates.csv: header differs across stages");
    }
    for (const auto& line : aggs.lines) {
      agg_out += line;
      agg_out += '\n';
      std::istringstream ss(line);
      std::string unit_id, selector, mean_s;
      std::getline(ss, unit_id, ',');
      std::getline(ss, selector, ',');
      std::getline(ss, mean_s, ',');
      const Scalar mean = std::strtod(mean_s.c_str(), nullptr);
      SelStats& st = summary[selector];
      st.sum += mean;
      st.lo = std::min(st.lo, mean);
      st.hi = std::max(st.hi, mean);
      ++st.units;
    }
  }

  const fs::path dir = config.out_dir / "report";
  fs::create_directories(dir);
  write_text_file(dir / "rows.csv", rows_out);
  write_text_file(dir / "aggregates.csv", agg_out);

  json stage;
  stage["schema"] = "report-v1";
  stage["config_hash"] = hash;
  {
    json names = json::array();
    for (const auto& src : sources) names.push_back(src.filename().string());
    stage["sources"] = std::move(names);
  }
  stage["rows"] = row_count;
  write_json_file(dir / "stage.json", stage);

  std::cout << "report: " << row_count << " rows from " << sources.size()
            << " stage(s) -> " << (dir / "rows.csv").string() << "\n";
  for (const auto& [sel, st] : summary)
    std::cout << "  " << sel << ": mean ope_error "
              << st.sum / static_cast<Scalar>(st.units) << " over "
              << st.units << " unit(s), range [" << st.lo << ", " << st.hi
              << "]\n";
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"model / value-function selection pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  StageOptions opts;

  using StageFn = void (*)(const RunConfig&, const StageOptions&);
  const struct {
    const char* name;
    const char* help;
    StageFn fn;
  } defs[] = {
      {"gen", "build the model grid and target policies", &stage_gen},
      {"sample", "draw the behavior dataset", &stage_sample},
      {"cache", "build the Monte-Carlo Q caches (resumable)", &stage_cache},
      {"select", "race the selectors on the cached estimates", &stage_select},
      {"sweep", "run the configured gap / misspec / coverage sweeps",
       &stage_sweep},
      {"report", "concatenate stage CSVs and summarize", &stage_report},
  };
  for (const auto& def : defs) {
    CLI::App* sub = app.add_subcommand(def.name, def.help);
    sub->add_option("--config", config_path, "experiment config (JSON)")
        ->required();
    sub->add_option("--jobs", opts.jobs, "worker threads")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--with-backups", opts.with_backups,
                  "also cache the one-step mixed backups");
    sub->add_flag("--force", opts.force,
                  "proceed past a degenerate-grid sanity failure");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad usage is a config error; --help is not
  }

  try {
    const RunConfig config = load_config(config_path);
    for (const auto& def : defs) {
      if (!app.got_subcommand(def.name)) continue;
      def.fn(config, opts);
      return 0;
    }
    return 2;  // unreachable: a subcommand is required
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const SanityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const HashMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace opesel
