#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "opesel/mdp.hpp"

namespace opesel {

enum class SampleMode { iid, trajectory };

struct Transition {
  Index s = 0;
  Index a = 0;
  Scalar r = 0.0;
  Index s_next = 0;
  Index index = 0;  // ordinal position in the dataset
};

// Column-oriented transition log with provenance.  `source_indices` is filled
// for bootstrap replicates (parent row per row) so cached per-row values can
// be reused without resampling; `mix_src`/`mix_src_index` are filled for
// mixtures (0 = first source, 1 = second) for the same reason.
struct Dataset {
  std::string behavior_id;
  std::string source_model_id;
  std::uint64_t seed = 0;
  SampleMode mode = SampleMode::iid;
  IVec s, a, s_next;
  Vec r;
  IVec source_indices;
  IVec mix_src;
  IVec mix_src_index;

  Index n() const { return s.size(); }
  Transition transition(Index t) const {
    return {s[t], a[t], r[t], s_next[t], t};
  }
};

// Epsilon-noisy behavior: take the base action with probability act_prob,
// otherwise a uniformly random action.
Policy noisy_behavior(const Policy& base, Scalar act_prob);

// iid mode draws (s,a) from the behavior's exact discounted occupancy and
// then r, s' from the model; trajectory mode rolls episodes of the default
// tail-rule horizon from d0 and truncates at n tuples.
Dataset sample_dataset(const TabularMDP& model, const Policy& behavior,
                       Index n, SampleMode mode, std::uint64_t seed);

// iid sampling from an explicit (s,a) distribution (length S*A, sums to 1).
Dataset sample_dataset_from_dist(const TabularMDP& model, const Vec& sa_dist,
                                 Index n, std::uint64_t seed,
                                 const std::string& behavior_id);

// n-out-of-n resampling with replacement; replicates record their index
// multiset and are deterministic in (data, seed).
std::vector<Dataset> bootstrap_resample(const Dataset& data, Index reps,
                                        std::uint64_t seed);

// round(lambda*n) tuples from `on` plus the rest from `off`, deterministically
// shuffled.  When lambda is exactly 0 or 1 and n matches the corresponding
// source, that source is returned unchanged (order preserved) so downstream
// results coincide with running on it directly.
Dataset mix_datasets(const Dataset& on, const Dataset& off, Scalar lambda,
                     Index n, std::uint64_t seed);

// FNV-1a over the packed little-endian record block (u32 s, a, s_next; f64 r)
// — identical to the hash of the on-disk binary file.
std::uint64_t dataset_hash(const Dataset& data);
std::string dataset_hash_hex(const Dataset& data);

// <name>.json manifest plus <name>.bin record block.
void save_dataset(const Dataset& data, const std::filesystem::path& dir,
                  const std::string& name);
Dataset load_dataset(const std::filesystem::path& dir, const std::string& name);

}  // namespace opesel
