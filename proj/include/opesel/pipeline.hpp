#pragma once

#include <filesystem>

#include "opesel/config.hpp"

namespace opesel {

// Flags shared by every stage (CLI: --jobs, --with-backups, --force).
struct StageOptions {
  int jobs = 1;
  bool with_backups = false;
  bool force = false;
};

// Resolved root of the rollout cache: $OPESEL_CACHE_DIR/<config_hash> when
// the variable is set, else <out_dir>/cache.  Keyed by the config hash so
// several configs can share one external cache directory without collisions.
std::filesystem::path cache_root(const RunConfig& config);

// Pipeline stages.  Each writes its outputs under config.out_dir (cache goes
// to cache_root) together with a manifest carrying the config hash, and
// refuses to run when an upstream output is missing or was produced by a
// different config (HashMismatchError).  A degenerate model grid blocks
// everything downstream of gen unless it was generated --force'd
// (SanityError).
//
//   gen     models, target policies, sanity manifest      -> out/gen
//   sample  behavior dataset                              -> out/data
//   cache   Monte-Carlo Q caches, one per target          -> cache_root()
//   select  selector races on the cached estimates        -> out/select
//   sweep   gap / misspec / coverage variants             -> out/sweep_*
//   report  concatenated CSVs plus a per-selector summary -> out/report
void stage_gen(const RunConfig& config, const StageOptions& opts);
void stage_sample(const RunConfig& config, const StageOptions& opts);
void stage_cache(const RunConfig& config, const StageOptions& opts);
void stage_select(const RunConfig& config, const StageOptions& opts);
void stage_sweep(const RunConfig& config, const StageOptions& opts);
void stage_report(const RunConfig& config, const StageOptions& opts);

// Command-line entry used by the opesel binary (kept in the library so tests
// can drive it in-process).  Exit codes: 0 success, 2 config or usage error,
// 3 sanity failure, 4 missing or mismatched upstream artifact, 1 anything
// else.
int run_cli(int argc, const char* const* argv);

}  // namespace opesel
