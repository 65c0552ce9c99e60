#include "opesel/qcache.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>

#include "opesel/errors.hpp"
#include "opesel/hashutil.hpp"
#include "opesel/parallel.hpp"
#include "opesel/serialize.hpp"
#include "opesel/sim.hpp"

namespace opesel {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "cache blocks are raw little-endian float64");

namespace {

inline std::uint64_t u(Index v) { return static_cast<std::uint64_t>(v); }

struct BuildCtx {
  const Dataset* data = nullptr;
  std::vector<SimModel> sims;
  SimPolicy sim_pi;
  RolloutSpec spec;  // horizon already resolved
  QCache* out = nullptr;
};

// Full q_sa and q_next rows for one model.  Rollout k of row entry t draws
// stream (master_seed, field, i, t, k); the first l/2 rollouts feed the A
// half, the rest the B half.
void fill_q_rows(BuildCtx& c, Index i) {
  const Dataset& d = *c.data;
  const SimModel& sim = c.sims[static_cast<std::size_t>(i)];
  QCache& out = *c.out;
  const int l = c.spec.l;
  const int h = c.spec.horizon;
  const int half = l / 2;
  for (Index t = 0; t < d.n(); ++t) {
    Scalar sa_a = 0.0, sa_b = 0.0, nx_a = 0.0, nx_b = 0.0;
    for (int k = 0; k < l; ++k) {
      Rng g = Rng::derive(c.spec.master_seed, "q_sa", {u(i), u(t), u(k)});
      const Scalar v = rollout_return(sim, c.sim_pi, d.s[t], d.a[t], h, g);
      (k < half ? sa_a : sa_b) += v;
    }
    for (int k = 0; k < l; ++k) {
      Rng g = Rng::derive(c.spec.master_seed, "q_next", {u(i), u(t), u(k)});
      const Index sn = d.s_next[t];
      const Index an = sample_row(c.sim_pi.action[static_cast<std::size_t>(sn)], g);
      const Scalar v = rollout_return(sim, c.sim_pi, sn, an, h, g);
      (k < half ? nx_a : nx_b) += v;
    }
    if (c.spec.split) {
      const Scalar qa = sa_a / half, qb = sa_b / half;
      const Scalar na = nx_a / half, nb = nx_b / half;
      out.q_sa_a(i, t) = qa;
      out.q_sa_b(i, t) = qb;
      out.q_next_a(i, t) = na;
      out.q_next_b(i, t) = nb;
      out.q_sa(i, t) = 0.5 * (qa + qb);
      out.q_next(i, t) = 0.5 * (na + nb);
    } else {
      out.q_sa(i, t) = (sa_a + sa_b) / l;
      out.q_next(i, t) = (nx_a + nx_b) / l;
    }
  }
}

// One backup row: first transition in model j, continuation in model i.
void fill_backup_row(BuildCtx& c, Index j, Index i) {
  const Dataset& d = *c.data;
  QCache& out = *c.out;
  const Index row = out.backup_row(j, i);
  const int l = c.spec.l;
  const int h = c.spec.horizon;
  const SimModel& first = c.sims[static_cast<std::size_t>(j)];
  const SimModel& rest = c.sims[static_cast<std::size_t>(i)];
  for (Index t = 0; t < d.n(); ++t) {
    Scalar sum = 0.0;
    for (int k = 0; k < l; ++k) {
      Rng g = Rng::derive(c.spec.master_seed, "backup", {u(j), u(i), u(t), u(k)});
      sum += rollout_return_mixed(first, rest, c.sim_pi, d.s[t], d.a[t], h, g);
    }
    out.backup(row, t) = sum / l;
  }
}

// --- resume part files ------------------------------------------------------

// Part files are raw float64 rows in a fixed order; validity is just "right
// name, right size" because build.json pins the request they belong to.

std::vector<Scalar*> q_part_rows(QCache& out, Index i) {
  std::vector<Scalar*> rows = {out.q_sa.row(i).data(), out.q_next.row(i).data()};
  if (out.spec.split) {
    rows.push_back(out.q_sa_a.row(i).data());
    rows.push_back(out.q_sa_b.row(i).data());
    rows.push_back(out.q_next_a.row(i).data());
    rows.push_back(out.q_next_b.row(i).data());
  }
  return rows;
}

bool load_part(const fs::path& p, const std::vector<Scalar*>& rows, Index n) {
  std::error_code ec;
  const auto want = static_cast<std::uintmax_t>(rows.size()) *
                    static_cast<std::uintmax_t>(n) * sizeof(Scalar);
  if (fs::file_size(p, ec) != want || ec) return false;
  std::ifstream f(p, std::ios::binary);
  if (!f) return false;
  for (Scalar* row : rows) {
    f.read(reinterpret_cast<char*>(row),
           static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(n)));
  }
  return bool(f);
}

void store_part(const fs::path& p, const std::vector<const Scalar*>& rows, Index n) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    for (const Scalar* row : rows) {
      f.write(reinterpret_cast<const char*>(row),
              static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(n)));
    }
    if (!f) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, p);
}

std::string build_key(const std::string& dataset_hash, const std::string& policy_id,
                      const std::vector<std::string>& model_ids,
                      const RolloutSpec& spec, Scalar gamma) {
  ContentHash h;
  auto tagged = [&h](const std::string& s) { h.u64(s.size()).str(s); };
  tagged(dataset_hash);
  tagged(policy_id);
  h.u64(model_ids.size());
  for (const auto& id : model_ids) tagged(id);
  h.u64(static_cast<std::uint64_t>(spec.l));
  h.u64(static_cast<std::uint64_t>(spec.horizon));
  h.u64(spec.master_seed);
  h.u64(spec.split ? 1 : 0);
  h.f64(gamma);
  return h.hex();
}

void clear_parts(const fs::path& dir) {
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("part_", 0) == 0 || name == "build.json")
      fs::remove(entry.path());
  }
}

// --- final block io ---------------------------------------------------------

std::string write_block(const fs::path& p, const RMat& mat) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  const std::size_t bytes = sizeof(Scalar) * static_cast<std::size_t>(mat.size());
  if (bytes > 0)
    f.write(reinterpret_cast<const char*>(mat.data()),
            static_cast<std::streamsize>(bytes));
  f.flush();
  if (!f) throw std::runtime_error("short write to " + p.string());
  return ContentHash().bytes(mat.data(), bytes).hex();
}

void read_block(const fs::path& p, RMat& mat, const std::string& want) {
  std::error_code ec;
  const std::size_t bytes = sizeof(Scalar) * static_cast<std::size_t>(mat.size());
  if (fs::file_size(p, ec) != bytes || ec)
    throw HashMismatchError("cache block missing or wrong size: " + p.string());
  std::ifstream f(p, std::ios::binary);
  if (!f) throw HashMismatchError("cannot read cache block: " + p.string());
  f.read(reinterpret_cast<char*>(mat.data()), static_cast<std::streamsize>(bytes));
  if (f.gcount() != static_cast<std::streamsize>(bytes))
    throw HashMismatchError("truncated cache block: " + p.string());
  const std::string got = ContentHash().bytes(mat.data(), bytes).hex();
  if (got != want)
    throw HashMismatchError("cache block hash mismatch: " + p.string());
}

}  // namespace

QCache build_cache(const Dataset& data, const std::vector<TabularMDP>& models,
                   const Policy& policy, const RolloutSpec& spec,
                   bool with_backups, int jobs,
                   const fs::path& resume_dir) {
  if (models.empty()) throw std::invalid_argument("build_cache: no models");
  if (spec.l < 1) throw std::invalid_argument("build_cache: l must be >= 1");
  if (spec.split && spec.l % 2 != 0)
    throw std::invalid_argument("build_cache: split requires even l");
  const Index s_dim = models[0].num_states;
  const Index a_dim = models[0].num_actions;
  const Scalar gamma = models[0].discount;
  for (const TabularMDP& m : models) {
    if (m.num_states != s_dim || m.num_actions != a_dim)
      throw std::invalid_argument("build_cache: model shapes differ");
    if (m.discount != gamma)
      throw std::invalid_argument("build_cache: model discounts differ");
  }
  if (policy.probs.rows() != s_dim || policy.probs.cols() != a_dim)
    throw std::invalid_argument("build_cache: policy shape mismatch");
  for (Index t = 0; t < data.n(); ++t) {
    if (data.s[t] < 0 || data.s[t] >= s_dim || data.a[t] < 0 ||
        data.a[t] >= a_dim || data.s_next[t] < 0 || data.s_next[t] >= s_dim)
      throw std::invalid_argument("build_cache: dataset indices out of range");
  }

  const Index m = static_cast<Index>(models.size());
  const Index n = data.n();

  QCache cache;
  cache.spec = spec;
  cache.spec.horizon = spec.horizon > 0 ? spec.horizon : default_horizon(gamma);
  cache.gamma = gamma;
  cache.v_max = 0.0;
  for (const TabularMDP& md : models) cache.v_max = std::max(cache.v_max, md.v_max());
  cache.policy_id = policy.id;
  cache.dataset_hash = dataset_hash_hex(data);
  cache.model_ids.reserve(models.size());
  for (const TabularMDP& md : models) cache.model_ids.push_back(md.id);
  cache.q_sa.setZero(m, n);
  cache.q_next.setZero(m, n);
  if (spec.split) {
    cache.q_sa_a.setZero(m, n);
    cache.q_sa_b.setZero(m, n);
    cache.q_next_a.setZero(m, n);
    cache.q_next_b.setZero(m, n);
  }
  if (with_backups) cache.backup.setZero(m * m, n);

  BuildCtx ctx;
  ctx.data = &data;
  ctx.spec = cache.spec;
  ctx.out = &cache;
  ctx.sims.reserve(models.size());
  for (const TabularMDP& md : models) ctx.sims.push_back(make_sim(md));
  ctx.sim_pi = make_sim_policy(policy);

  const bool resume = !resume_dir.empty();
  if (resume) {
    fs::create_directories(resume_dir);
    const std::string key = build_key(cache.dataset_hash, policy.id,
                                      cache.model_ids, cache.spec, gamma);
    const fs::path marker = resume_dir / "build.json";
    bool fresh = true;
    if (fs::exists(marker)) {
      try {
        const json j = read_json_file(marker);
        fresh = !(j.value("schema", "") == "qcache-build-v1" &&
                  j.value("key", "") == key);
      } catch (...) {
        fresh = true;
      }
    }
    if (fresh) {
      clear_parts(resume_dir);
      write_json_file(marker, json{{"schema", "qcache-build-v1"}, {"key", key}});
    }
  }

  const Index total = m + (with_backups ? m * m : 0);
  run_tasks(total, jobs, [&](Index task) {
    if (task < m) {
      const Index i = task;
      fs::path pf;
      if (resume) {
        pf = resume_dir / ("part_q_" + std::to_string(i) + ".bin");
        if (load_part(pf, q_part_rows(cache, i), n)) return;
      }
      fill_q_rows(ctx, i);
      if (resume) {
        const auto rows = q_part_rows(cache, i);
        store_part(pf, {rows.begin(), rows.end()}, n);
      }
    } else {
      const Index pair = task - m;
      const Index j = pair / m;
      const Index i = pair % m;
      Scalar* row = cache.backup.row(cache.backup_row(j, i)).data();
      fs::path pf;
      if (resume) {
        pf = resume_dir / ("part_b_" + std::to_string(j) + "_" +
                           std::to_string(i) + ".bin");
        if (load_part(pf, {row}, n)) return;
      }
      fill_backup_row(ctx, j, i);
      if (resume) store_part(pf, {row}, n);
    }
  });

  return cache;
}

void save_cache(const QCache& cache, const fs::path& dir) {
  fs::create_directories(dir);
  json files = json::object();
  auto put = [&](const char* name, const RMat& mat) {
    files[name] = write_block(dir / name, mat);
  };
  put("q_sa.bin", cache.q_sa);
  put("q_next.bin", cache.q_next);
  if (cache.spec.split) {
    put("q_sa_a.bin", cache.q_sa_a);
    put("q_sa_b.bin", cache.q_sa_b);
    put("q_next_a.bin", cache.q_next_a);
    put("q_next_b.bin", cache.q_next_b);
  }
  if (cache.has_backups()) put("backup.bin", cache.backup);
  const json man = {{"schema", "qcache-v1"},
                    {"dataset_hash", cache.dataset_hash},
                    {"policy_id", cache.policy_id},
                    {"model_ids", cache.model_ids},
                    {"l", cache.spec.l},
                    {"horizon", cache.spec.horizon},
                    {"master_seed", cache.spec.master_seed},
                    {"split", cache.spec.split},
                    {"gamma", cache.gamma},
                    {"v_max", cache.v_max},
                    {"with_backups", cache.has_backups()},
                    {"n", cache.n()},
                    {"q_next_action_sampling", "per_rollout"},
                    {"files", files}};
  write_json_file(dir / "manifest.json", man);
  clear_parts(dir);
}

QCache load_cache(const fs::path& dir) {
  json man;
  try {
    man = read_json_file(dir / "manifest.json");
  } catch (const std::exception& e) {
    throw ConfigError("cannot read cache manifest in " + dir.string() + ": " +
                      e.what());
  }
  QCache cache;
  try {
    if (man.at("schema").get<std::string>() != "qcache-v1")
      throw std::runtime_error("unknown schema");
    cache.dataset_hash = man.at("dataset_hash").get<std::string>();
    cache.policy_id = man.at("policy_id").get<std::string>();
    cache.model_ids = man.at("model_ids").get<std::vector<std::string>>();
    cache.spec.l = man.at("l").get<int>();
    cache.spec.horizon = man.at("horizon").get<int>();
    cache.spec.master_seed = man.at("master_seed").get<std::uint64_t>();
    cache.spec.split = man.at("split").get<bool>();
    cache.gamma = man.at("gamma").get<Scalar>();
    cache.v_max = man.at("v_max").get<Scalar>();
  } catch (const std::exception& e) {
    throw ConfigError("malformed cache manifest in " + dir.string() + ": " +
                      e.what());
  }
  const Index m = static_cast<Index>(cache.model_ids.size());
  const Index n = man.at("n").get<Index>();
  const json& files = man.at("files");
  auto get = [&](const char* name, RMat& mat, Index rows) {
    mat.resize(rows, n);
    read_block(dir / name, mat, files.at(name).get<std::string>());
  };
  get("q_sa.bin", cache.q_sa, m);
  get("q_next.bin", cache.q_next, m);
  if (cache.spec.split) {
    get("q_sa_a.bin", cache.q_sa_a, m);
    get("q_sa_b.bin", cache.q_sa_b, m);
    get("q_next_a.bin", cache.q_next_a, m);
    get("q_next_b.bin", cache.q_next_b, m);
  }
  if (man.at("with_backups").get<bool>()) get("backup.bin", cache.backup, m * m);
  return cache;
}

bool cache_matches(const fs::path& dir, const std::string& dataset_hash_hex,
                   const std::string& policy_id,
                   const std::vector<std::string>& model_ids,
                   const RolloutSpec& spec, int resolved_horizon, Scalar gamma,
                   bool need_backups) {
  json man;
  try {
    man = read_json_file(dir / "manifest.json");
  } catch (...) {
    return false;
  }
  try {
    return man.at("schema").get<std::string>() == "qcache-v1" &&
           man.at("dataset_hash").get<std::string>() == dataset_hash_hex &&
           man.at("policy_id").get<std::string>() == policy_id &&
           man.at("model_ids").get<std::vector<std::string>>() == model_ids &&
           man.at("l").get<int>() == spec.l &&
           man.at("horizon").get<int>() == resolved_horizon &&
           man.at("master_seed").get<std::uint64_t>() == spec.master_seed &&
           man.at("split").get<bool>() == spec.split &&
           man.at("gamma").get<Scalar>() == gamma &&
           (!need_backups || man.at("with_backups").get<bool>());
  } catch (...) {
    return false;
  }
}

}  // namespace opesel
