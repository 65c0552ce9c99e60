#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>

#include "opesel/mdp.hpp"

namespace opesel {

nlohmann::json mdp_to_json(const TabularMDP& m);
TabularMDP mdp_from_json(const nlohmann::json& j);

nlohmann::json policy_to_json(const Policy& pi);
Policy policy_from_json(const nlohmann::json& j);

// Pretty-printed with a trailing newline; byte-deterministic for equal inputs.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace opesel
