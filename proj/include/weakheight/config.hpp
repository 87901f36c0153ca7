#pragma once

// One JSON document describing a whole run: synthetic cities, model,
// training and paths. Unknown keys are rejected at every level.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "weakheight/ensemble.hpp"
#include "weakheight/synthcity.hpp"
#include "weakheight/trainer.hpp"

namespace weakheight {

inline constexpr int kRunConfigSchemaVersion = 1;

struct RunConfig {
  int schema_version = kRunConfigSchemaVersion;
  std::uint64_t synth_seed = 0;  // mixed into every city's own seed
  SynthPlan synth;
  ModelConfig model;
  TrainConfig train;
  std::string data_dir = "data";
  std::string out_dir = "runs";
};

/// Three cities: "alpha" (high-quality labels, in-domain), "bravo"
/// (instance-wise labels) and "charlie" (floor-count labels).
RunConfig default_run_config();

/// Missing keys keep their defaults; a "cities" list replaces the default one.
RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

/// Checks every section; throws ConfigError.
void validate_run_config(const RunConfig& config);

/// Plan with each city's seed mixed with synth_seed.
SynthPlan resolved_synth_plan(const RunConfig& config);

nlohmann::json city_style_to_json(const CityStyle& style);
CityStyle city_style_from_json(const nlohmann::json& doc, CityStyle base = {});

struct ConfigKeyDoc {
  std::string key;  // dotted path
  std::string default_value;
  std::string description;
};

/// Every scalar key of the run config with its default, in document order.
std::vector<ConfigKeyDoc> config_key_docs();
std::string config_help_text();

}  // namespace weakheight
