#include "opesel/config.hpp"

#include <algorithm>
#include <fstream>

#include "opesel/errors.hpp"
#include "opesel/hashutil.hpp"
#include "opesel/selectors.hpp"

namespace opesel {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config: " + path + ": " + what);
}

const json& member(const json& obj, const std::string& path,
                   const std::string& key) {
  const auto it = obj.find(key);
  if (it == obj.end()) fail(path + "." + key, "missing");
  return *it;
}

void expect_keys(const json& obj, const std::string& path,
                 std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) fail(path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
          return key == a;
        }) == allowed.end())
      fail(path + "." + key, "unknown key");
  }
}

std::uint64_t get_u64(const json& obj, const std::string& path,
                      const std::string& key) {
  const json& v = member(obj, path, key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    const auto x = v.get<std::int64_t>();
    if (x >= 0) return static_cast<std::uint64_t>(x);
  }
  fail(path + "." + key, "expected a non-negative integer");
}

Index get_index(const json& obj, const std::string& path,
                const std::string& key, Index lo, Index hi) {
  const json& v = member(obj, path, key);
  if (!v.is_number_integer())
    fail(path + "." + key, "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < lo || x > hi)
    fail(path + "." + key,
         "out of range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return static_cast<Index>(x);
}

Scalar get_scalar(const json& obj, const std::string& path,
                  const std::string& key, Scalar lo, Scalar hi) {
  const json& v = member(obj, path, key);
  if (!v.is_number()) fail(path + "." + key, "expected a number");
  const Scalar x = v.get<Scalar>();
  if (!(x >= lo && x <= hi))
    fail(path + "." + key,
         "out of range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return x;
}

std::string get_string(const json& obj, const std::string& path,
                       const std::string& key) {
  const json& v = member(obj, path, key);
  if (!v.is_string()) fail(path + "." + key, "expected a string");
  return v.get<std::string>();
}

bool get_bool(const json& obj, const std::string& path, const std::string& key,
              bool fallback) {
  const auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_boolean()) fail(path + "." + key, "expected a boolean");
  return it->get<bool>();
}

BehaviorSpec parse_behavior(const json& obj, const std::string& path,
                            Index target_count) {
  expect_keys(obj, path, {"kind", "target_index", "act_prob"});
  BehaviorSpec b;
  b.kind = get_string(obj, path, "kind");
  if (b.kind == "noisy_target") {
    b.target_index = get_index(obj, path, "target_index", 0, target_count - 1);
    b.act_prob = get_scalar(obj, path, "act_prob", 0.0, 1.0);
  } else if (b.kind == "uniform") {
    if (obj.contains("target_index") || obj.contains("act_prob"))
      fail(path, "uniform behavior takes no target_index / act_prob");
  } else {
    fail(path + ".kind", "expected \"noisy_target\" or \"uniform\"");
  }
  return b;
}

}  // namespace

RunConfig parse_config(const json& doc) {
  expect_keys(doc, "$",
              {"master_seed", "out_dir", "world", "grid", "truth_index",
               "targets", "behavior", "data", "rollouts", "selectors",
               "bootstrap", "sweeps"});
  RunConfig c;
  c.master_seed = get_u64(doc, "$", "master_seed");
  c.out_dir = get_string(doc, "$", "out_dir");
  if (c.out_dir.empty()) fail("$.out_dir", "must not be empty");

  const json& world = member(doc, "$", "world");
  expect_keys(world, "$.world", {"layout", "gamma", "noise", "drift"});
  c.world.world = get_string(world, "$.world", "layout");
  {
    const auto known = known_worlds();
    if (std::find(known.begin(), known.end(), c.world.world) == known.end())
      fail("$.world.layout", "unknown layout \"" + c.world.world + "\"");
  }
  c.world.gamma = get_scalar(world, "$.world", "gamma", 0.0, 1.0);
  if (!(c.world.gamma > 0.0 && c.world.gamma < 1.0))
    fail("$.world.gamma", "must lie strictly inside (0, 1)");
  c.world.noise = get_scalar(world, "$.world", "noise", 0.0, 1.0);
  c.world.drift = get_scalar(world, "$.world", "drift", 0.0, 1.0);

  const json& grid = member(doc, "$", "grid");
  expect_keys(grid, "$.grid", {"vary", "start", "stop", "count"});
  const std::string vary = get_string(grid, "$.grid", "vary");
  if (vary == "noise") c.vary = VaryAxis::noise;
  else if (vary == "drift") c.vary = VaryAxis::drift;
  else fail("$.grid.vary", "expected \"noise\" or \"drift\"");
  c.grid.start = get_scalar(grid, "$.grid", "start", 0.0, 1.0);
  c.grid.stop = get_scalar(grid, "$.grid", "stop", 0.0, 1.0);
  if (c.grid.stop < c.grid.start) fail("$.grid.stop", "must be >= start");
  c.grid.count = get_index(grid, "$.grid", "count", 1, 10000);

  c.truth_index = get_index(doc, "$", "truth_index", 0, c.grid.count - 1);

  const json& targets = member(doc, "$", "targets");
  expect_keys(targets, "$.targets", {"count"});
  c.target_count = get_index(targets, "$.targets", "count", 1, 10000);

  c.behavior = parse_behavior(member(doc, "$", "behavior"), "$.behavior",
                              c.target_count);

  const json& data = member(doc, "$", "data");
  expect_keys(data, "$.data", {"n", "mode"});
  c.n = get_index(data, "$.data", "n", 1, 1000000000);
  const std::string mode = get_string(data, "$.data", "mode");
  if (mode == "iid") c.mode = SampleMode::iid;
  else if (mode == "trajectory") c.mode = SampleMode::trajectory;
  else fail("$.data.mode", "expected \"iid\" or \"trajectory\"");

  const json& roll = member(doc, "$", "rollouts");
  expect_keys(roll, "$.rollouts", {"l", "horizon", "split"});
  c.rollouts.l = static_cast<int>(get_index(roll, "$.rollouts", "l", 1, 1000000));
  c.rollouts.horizon =
      static_cast<int>(get_index(roll, "$.rollouts", "horizon", 0, 1000000));
  c.rollouts.split = get_bool(roll, "$.rollouts", "split", true);
  if (c.rollouts.split && c.rollouts.l % 2 != 0)
    fail("$.rollouts.l", "split rollouts need an even l");
  c.rollouts.master_seed = c.master_seed;

  const json& sel = member(doc, "$", "selectors");
  if (!sel.is_array() || sel.empty())
    fail("$.selectors", "expected a non-empty array");
  for (std::size_t k = 0; k < sel.size(); ++k) {
    if (!sel[k].is_string())
      fail("$.selectors[" + std::to_string(k) + "]", "expected a string");
    const auto name = sel[k].get<std::string>();
    if (!selector_name_valid(name))
      fail("$.selectors[" + std::to_string(k) + "]",
           "unknown selector \"" + name + "\"");
    c.selectors.push_back(name);
  }

  const json& boot = member(doc, "$", "bootstrap");
  expect_keys(boot, "$.bootstrap", {"reps"});
  c.bootstrap_reps = get_index(boot, "$.bootstrap", "reps", 1, 1000000);

  if (doc.contains("sweeps")) {
    const json& sweeps = doc.at("sweeps");
    expect_keys(sweeps, "$.sweeps", {"gap", "misspec", "coverage"});
    if (sweeps.contains("gap")) {
      const json& g = sweeps.at("gap");
      expect_keys(g, "$.sweeps.gap", {"center", "radii"});
      c.has_gap = true;
      c.gap.center = get_index(g, "$.sweeps.gap", "center", 0, c.grid.count - 1);
      const json& radii = member(g, "$.sweeps.gap", "radii");
      if (!radii.is_array() || radii.empty())
        fail("$.sweeps.gap.radii", "expected a non-empty array");
      for (std::size_t k = 0; k < radii.size(); ++k) {
        if (!radii[k].is_number_integer())
          fail("$.sweeps.gap.radii[" + std::to_string(k) + "]",
               "expected an integer");
        const auto r = radii[k].get<std::int64_t>();
        if (r < 1 || c.gap.center - r < 0 || c.gap.center + r >= c.grid.count)
          fail("$.sweeps.gap.radii[" + std::to_string(k) + "]",
               "radius escapes the grid");
        c.gap.radii.push_back(static_cast<Index>(r));
      }
    }
    if (sweeps.contains("misspec")) {
      const json& m = sweeps.at("misspec");
      expect_keys(m, "$.sweeps.misspec", {"window", "offsets"});
      c.has_misspec = true;
      c.misspec.window =
          get_index(m, "$.sweeps.misspec", "window", 1, c.grid.count);
      const json& offs = member(m, "$.sweeps.misspec", "offsets");
      if (!offs.is_array() || offs.empty())
        fail("$.sweeps.misspec.offsets", "expected a non-empty array");
      for (std::size_t k = 0; k < offs.size(); ++k) {
        if (!offs[k].is_number_integer())
          fail("$.sweeps.misspec.offsets[" + std::to_string(k) + "]",
               "expected an integer");
        const auto off = offs[k].get<std::int64_t>();
        if (off < 0 || off + c.misspec.window > c.grid.count)
          fail("$.sweeps.misspec.offsets[" + std::to_string(k) + "]",
               "window escapes the grid");
        c.misspec.offsets.push_back(static_cast<Index>(off));
      }
    }
    if (sweeps.contains("coverage")) {
      const json& cov = sweeps.at("coverage");
      expect_keys(cov, "$.sweeps.coverage", {"off_behavior", "lambdas"});
      c.has_coverage = true;
      c.coverage.off_behavior =
          parse_behavior(member(cov, "$.sweeps.coverage", "off_behavior"),
                         "$.sweeps.coverage.off_behavior", c.target_count);
      const json& lambdas = member(cov, "$.sweeps.coverage", "lambdas");
      if (!lambdas.is_array() || lambdas.empty())
        fail("$.sweeps.coverage.lambdas", "expected a non-empty array");
      for (std::size_t k = 0; k < lambdas.size(); ++k) {
        if (!lambdas[k].is_number())
          fail("$.sweeps.coverage.lambdas[" + std::to_string(k) + "]",
               "expected a number");
        const Scalar lam = lambdas[k].get<Scalar>();
        if (!(lam >= 0.0 && lam <= 1.0))
          fail("$.sweeps.coverage.lambdas[" + std::to_string(k) + "]",
               "expected a value in [0, 1]");
        c.coverage.lambdas.push_back(lam);
      }
    }
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

nlohmann::json config_to_json(const RunConfig& c) {
  auto behavior_json = [](const BehaviorSpec& b) {
    json out;
    out["kind"] = b.kind;
    if (b.kind == "noisy_target") {
      out["target_index"] = b.target_index;
      out["act_prob"] = b.act_prob;
    }
    return out;
  };
  json doc;
  doc["master_seed"] = c.master_seed;
  doc["out_dir"] = c.out_dir.string();
  doc["world"] = {{"layout", c.world.world},
                  {"gamma", c.world.gamma},
                  {"noise", c.world.noise},
                  {"drift", c.world.drift}};
  doc["grid"] = {{"vary", c.vary == VaryAxis::noise ? "noise" : "drift"},
                 {"start", c.grid.start},
                 {"stop", c.grid.stop},
                 {"count", c.grid.count}};
  doc["truth_index"] = c.truth_index;
  doc["targets"] = {{"count", c.target_count}};
  doc["behavior"] = behavior_json(c.behavior);
  doc["data"] = {{"n", c.n},
                 {"mode", c.mode == SampleMode::iid ? "iid" : "trajectory"}};
  doc["rollouts"] = {{"l", c.rollouts.l},
                     {"horizon", c.rollouts.horizon},
                     {"split", c.rollouts.split}};
  doc["selectors"] = c.selectors;
  doc["bootstrap"] = {{"reps", c.bootstrap_reps}};
  if (c.has_gap || c.has_misspec || c.has_coverage) {
    json sweeps;
    if (c.has_gap)
      sweeps["gap"] = {{"center", c.gap.center}, {"radii", c.gap.radii}};
    if (c.has_misspec)
      sweeps["misspec"] = {{"window", c.misspec.window},
                           {"offsets", c.misspec.offsets}};
    if (c.has_coverage)
      sweeps["coverage"] = {
          {"off_behavior", behavior_json(c.coverage.off_behavior)},
          {"lambdas", c.coverage.lambdas}};
    doc["sweeps"] = sweeps;
  }
  return doc;
}

std::string config_hash_hex(const RunConfig& config) {
  ContentHash h;
  h.str(config_to_json(config).dump());
  return h.hex();
}

}  // namespace opesel
