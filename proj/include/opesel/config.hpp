#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "opesel/data.hpp"
#include "opesel/qcache.hpp"
#include "opesel/worlds.hpp"

namespace opesel {

// How the behavior policy is built: "noisy_target" takes a target-ladder
// policy and mixes in uniform actions, "uniform" acts uniformly at random.
struct BehaviorSpec {
  std::string kind = "noisy_target";
  Index target_index = 0;
  Scalar act_prob = 1.0;
};

struct GapSweepSpec {
  Index center = 0;
  std::vector<Index> radii;
};

struct MisspecSweepSpec {
  Index window = 1;
  std::vector<Index> offsets;
};

struct CoverageSweepSpec {
  BehaviorSpec off_behavior;
  std::vector<Scalar> lambdas;
};

// Parsed and fully validated experiment description.  Every field maps
// one-to-one onto a key of the JSON document; unknown keys anywhere are
// rejected so typos cannot silently fall back to defaults.
struct RunConfig {
  std::uint64_t master_seed = 0;
  std::filesystem::path out_dir;
  EnvParams world;         // base layout, gamma, noise, drift
  VaryAxis vary = VaryAxis::noise;
  GridSpec grid;
  Index truth_index = 0;
  Index target_count = 1;
  BehaviorSpec behavior;
  Index n = 0;
  SampleMode mode = SampleMode::iid;
  RolloutSpec rollouts;    // master_seed mirrors the config seed
  std::vector<std::string> selectors;
  Index bootstrap_reps = 1;
  bool has_gap = false;
  GapSweepSpec gap;
  bool has_misspec = false;
  MisspecSweepSpec misspec;
  bool has_coverage = false;
  CoverageSweepSpec coverage;
};

// Throws ConfigError with a key path on any schema or range violation.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);

// Canonical re-serialization of a parsed config; independent of formatting
// and key order in the source file.
nlohmann::json config_to_json(const RunConfig& config);
// Content hash of the canonical form, used to mark stage outputs.
std::string config_hash_hex(const RunConfig& config);

}  // namespace opesel
