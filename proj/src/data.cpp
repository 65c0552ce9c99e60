#include "opesel/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "opesel/dp.hpp"
#include "opesel/errors.hpp"
#include "opesel/hashutil.hpp"
#include "opesel/rng.hpp"
#include "opesel/serialize.hpp"
#include "opesel/sim.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary dataset layout assumes a little-endian host");

namespace opesel {

namespace {

constexpr std::size_t kRecordBytes = 3 * 4 + 8;

std::vector<unsigned char> pack_records(const Dataset& d) {
  std::vector<unsigned char> block(static_cast<std::size_t>(d.n()) * kRecordBytes);
  unsigned char* p = block.data();
  for (Index t = 0; t < d.n(); ++t) {
    const auto s = static_cast<std::uint32_t>(d.s[t]);
    const auto a = static_cast<std::uint32_t>(d.a[t]);
    const auto sn = static_cast<std::uint32_t>(d.s_next[t]);
    const double r = d.r[t];
    std::memcpy(p, &s, 4);
    std::memcpy(p + 4, &a, 4);
    std::memcpy(p + 8, &sn, 4);
    std::memcpy(p + 12, &r, 8);
    p += kRecordBytes;
  }
  return block;
}

std::string format_lambda(Scalar v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

const char* mode_name(SampleMode m) {
  return m == SampleMode::iid ? "iid" : "trajectory";
}

SampleMode mode_from_name(const std::string& name) {
  if (name == "iid") return SampleMode::iid;
  if (name == "trajectory") return SampleMode::trajectory;
  throw ConfigError("unknown sample mode: " + name);
}

}  // namespace

Policy noisy_behavior(const Policy& base, Scalar act_prob) {
  if (act_prob < 0.0 || act_prob > 1.0)
    throw std::invalid_argument("noisy_behavior: act_prob must lie in [0,1]");
  Policy out;
  out.id = base.id + "_eps" + format_lambda(act_prob);
  const Scalar uniform = (1.0 - act_prob) / static_cast<Scalar>(base.probs.cols());
  out.probs = (act_prob * base.probs).array() + uniform;
  return out;
}

Dataset sample_dataset_from_dist(const TabularMDP& model, const Vec& sa_dist,
                                 Index n, std::uint64_t seed,
                                 const std::string& behavior_id) {
  validate_mdp(model);
  if (n < 1) throw std::invalid_argument("sample_dataset: n must be >= 1");
  if (sa_dist.size() != model.num_states * model.num_actions)
    throw std::invalid_argument("sample_dataset: sa_dist has wrong length");

  Dataset d;
  d.behavior_id = behavior_id;
  d.source_model_id = model.id;
  d.seed = seed;
  d.mode = SampleMode::iid;
  d.s = IVec(n);
  d.a = IVec(n);
  d.s_next = IVec(n);
  d.r = Vec(n);

  const RowSampler pair_sampler = make_row_sampler(sa_dist);
  const SimModel sim = make_sim(model);
  for (Index t = 0; t < n; ++t) {
    Rng g = Rng::derive(seed, "iid_tuple", {static_cast<std::uint64_t>(t)});
    const Index sa = sample_row(pair_sampler, g);
    const Index s = sa / model.num_actions;
    const Index a = sa % model.num_actions;
    d.s[t] = s;
    d.a[t] = a;
    d.r[t] = model.reward[sa];
    d.s_next[t] = sample_row(sim.next_state[static_cast<std::size_t>(sa)], g);
  }
  return d;
}

Dataset sample_dataset(const TabularMDP& model, const Policy& behavior,
                       Index n, SampleMode mode, std::uint64_t seed) {
  validate_policy(model, behavior);
  if (mode == SampleMode::iid) {
    const Vec mu = discounted_occupancy(model, behavior);
    Dataset d = sample_dataset_from_dist(model, mu, n, seed, behavior.id);
    return d;
  }

  if (n < 1) throw std::invalid_argument("sample_dataset: n must be >= 1");
  Dataset d;
  d.behavior_id = behavior.id;
  d.source_model_id = model.id;
  d.seed = seed;
  d.mode = SampleMode::trajectory;
  d.s = IVec(n);
  d.a = IVec(n);
  d.s_next = IVec(n);
  d.r = Vec(n);

  const SimModel sim = make_sim(model);
  const SimPolicy sim_pi = make_sim_policy(behavior);
  const RowSampler d0 = make_row_sampler(model.initial_dist);
  const int episode_len = default_horizon(model.discount);
  Index t = 0;
  for (std::uint64_t episode = 0; t < n; ++episode) {
    Rng g = Rng::derive(seed, "trajectory", {episode});
    Index s = sample_row(d0, g);
    for (int step = 0; step < episode_len && t < n; ++step) {
      const Index a = sample_row(sim_pi.action[static_cast<std::size_t>(s)], g);
      const Index sa = model.sa(s, a);
      const Index sn = sample_row(sim.next_state[static_cast<std::size_t>(sa)], g);
      d.s[t] = s;
      d.a[t] = a;
      d.r[t] = model.reward[sa];
      d.s_next[t] = sn;
      ++t;
      s = sn;
    }
  }
  return d;
}

std::vector<Dataset> bootstrap_resample(const Dataset& data, Index reps,
                                        std::uint64_t seed) {
  if (reps < 1)
    throw std::invalid_argument("bootstrap_resample: reps must be >= 1");
  const Index n = data.n();
  std::vector<Dataset> out;
  out.reserve(static_cast<std::size_t>(reps));
  for (Index b = 0; b < reps; ++b) {
    Rng g = Rng::derive(seed, "bootstrap_rep", {static_cast<std::uint64_t>(b)});
    Dataset rep;
    rep.behavior_id = data.behavior_id;
    rep.source_model_id = data.source_model_id;
    rep.seed = seed;
    rep.mode = data.mode;
    rep.s = IVec(n);
    rep.a = IVec(n);
    rep.s_next = IVec(n);
    rep.r = Vec(n);
    rep.source_indices = IVec(n);
    for (Index t = 0; t < n; ++t) {
      const auto src = static_cast<Index>(
          g.next_below(static_cast<std::uint64_t>(n)));
      rep.source_indices[t] = src;
      rep.s[t] = data.s[src];
      rep.a[t] = data.a[src];
      rep.s_next[t] = data.s_next[src];
      rep.r[t] = data.r[src];
    }
    out.push_back(std::move(rep));
  }
  return out;
}

Dataset mix_datasets(const Dataset& on, const Dataset& off, Scalar lambda,
                     Index n, std::uint64_t seed) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("mix_datasets: lambda must lie in [0,1]");
  if (n < 1) throw std::invalid_argument("mix_datasets: n must be >= 1");
  const auto k_on = static_cast<Index>(
      std::llround(lambda * static_cast<Scalar>(n)));
  const Index k_off = n - k_on;
  if (k_on > on.n() || k_off > off.n())
    throw std::invalid_argument("mix_datasets: insufficient source size");

  // At the pure endpoints with matching size the mixture IS the source;
  // return it unshuffled so downstream results coincide exactly.
  if (k_off == 0 && n == on.n()) {
    Dataset d = on;
    d.mix_src = IVec::Zero(n);
    d.mix_src_index = IVec::LinSpaced(n, 0, n - 1);
    return d;
  }
  if (k_on == 0 && n == off.n()) {
    Dataset d = off;
    d.behavior_id = off.behavior_id;
    d.mix_src = IVec::Ones(n);
    d.mix_src_index = IVec::LinSpaced(n, 0, n - 1);
    return d;
  }

  Dataset d;
  d.behavior_id = "mix(" + on.behavior_id + "," + off.behavior_id + "," +
                  format_lambda(lambda) + ")";
  d.source_model_id = on.source_model_id;
  d.seed = seed;
  d.mode = on.mode;
  d.s = IVec(n);
  d.a = IVec(n);
  d.s_next = IVec(n);
  d.r = Vec(n);
  d.mix_src = IVec(n);
  d.mix_src_index = IVec(n);

  // Leading shares of each source, then a deterministic Fisher-Yates shuffle.
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index t = 0; t < n; ++t) order[static_cast<std::size_t>(t)] = t;
  Rng g = Rng::derive(seed, "mix_shuffle");
  for (Index t = n - 1; t > 0; --t) {
    const auto j = static_cast<Index>(
        g.next_below(static_cast<std::uint64_t>(t + 1)));
    std::swap(order[static_cast<std::size_t>(t)], order[static_cast<std::size_t>(j)]);
  }
  for (Index t = 0; t < n; ++t) {
    const Index slot = order[static_cast<std::size_t>(t)];
    const bool from_on = slot < k_on;
    const Dataset& src = from_on ? on : off;
    const Index row = from_on ? slot : slot - k_on;
    d.s[t] = src.s[row];
    d.a[t] = src.a[row];
    d.s_next[t] = src.s_next[row];
    d.r[t] = src.r[row];
    d.mix_src[t] = from_on ? 0 : 1;
    d.mix_src_index[t] = row;
  }
  return d;
}

std::uint64_t dataset_hash(const Dataset& data) {
  const auto block = pack_records(data);
  return ContentHash().bytes(block.data(), block.size()).value();
}

std::string dataset_hash_hex(const Dataset& data) {
  const auto block = pack_records(data);
  return ContentHash().bytes(block.data(), block.size()).hex();
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir,
                  const std::string& name) {
  std::filesystem::create_directories(dir);
  const auto block = pack_records(data);
  {
    std::ofstream bin(dir / (name + ".bin"), std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write dataset block");
    bin.write(reinterpret_cast<const char*>(block.data()),
              static_cast<std::streamsize>(block.size()));
    if (!bin) throw std::runtime_error("dataset block write failed");
  }
  nlohmann::json manifest;
  manifest["schema"] = "dataset-v1";
  manifest["n"] = data.n();
  manifest["seed"] = data.seed;
  manifest["mode"] = mode_name(data.mode);
  manifest["behavior_id"] = data.behavior_id;
  manifest["source_model_id"] = data.source_model_id;
  manifest["block_hash"] = ContentHash().bytes(block.data(), block.size()).hex();
  write_json_file(dir / (name + ".json"), manifest);
}

Dataset load_dataset(const std::filesystem::path& dir, const std::string& name) {
  const nlohmann::json manifest = read_json_file(dir / (name + ".json"));
  if (manifest.value("schema", "") != "dataset-v1")
    throw ConfigError("dataset manifest has unknown schema");
  Dataset d;
  d.seed = manifest.at("seed").get<std::uint64_t>();
  d.mode = mode_from_name(manifest.at("mode").get<std::string>());
  d.behavior_id = manifest.at("behavior_id").get<std::string>();
  d.source_model_id = manifest.at("source_model_id").get<std::string>();
  const Index n = manifest.at("n").get<Index>();

  std::ifstream bin(dir / (name + ".bin"), std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read dataset block");
  std::vector<unsigned char> block(static_cast<std::size_t>(n) * kRecordBytes);
  bin.read(reinterpret_cast<char*>(block.data()),
           static_cast<std::streamsize>(block.size()));
  if (bin.gcount() != static_cast<std::streamsize>(block.size()))
    throw HashMismatchError("dataset block truncated: " + name);

  const std::string actual =
      ContentHash().bytes(block.data(), block.size()).hex();
  if (actual != manifest.at("block_hash").get<std::string>())
    throw HashMismatchError("dataset block hash mismatch: " + name);

  d.s = IVec(n);
  d.a = IVec(n);
  d.s_next = IVec(n);
  d.r = Vec(n);
  const unsigned char* p = block.data();
  for (Index t = 0; t < n; ++t) {
    std::uint32_t s, a, sn;
    double r;
    std::memcpy(&s, p, 4);
    std::memcpy(&a, p + 4, 4);
    std::memcpy(&sn, p + 8, 4);
    std::memcpy(&r, p + 12, 8);
    d.s[t] = s;
    d.a[t] = a;
    d.s_next[t] = sn;
    d.r[t] = r;
    p += kRecordBytes;
  }
  return d;
}

}  // namespace opesel
