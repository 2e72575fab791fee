#pragma once

// JSON experiment configs. Unknown keys are rejected.

#include <filesystem>

#include <json.hpp>

#include "splitrl/envs.hpp"
#include "splitrl/harness.hpp"

namespace splitrl {

TaskSpec task_from_json(const nlohmann::json& j, std::uint64_t default_seed);
nlohmann::json task_to_json(const TaskSpec& spec);

/// Builds and validates a config. Tasks come from "tasks" when present,
/// otherwise from the named "suite".
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);

ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace splitrl
