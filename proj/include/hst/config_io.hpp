#pragma once

// JSON (de)serialization for config structs, shared by checkpoints, the
// experiment CLI, and the bindings. Unknown keys raise SchemaError so a typo
// in a config file cannot silently fall back to a default.

#include <string>

#include "json.hpp"

#include "hst/data.hpp"
#include "hst/error.hpp"
#include "hst/harness.hpp"
#include "hst/model.hpp"
#include "hst/sar.hpp"

namespace hst {

std::string to_string(Pooling p);
std::string to_string(HierInit h);
std::string to_string(Schedule s);
Pooling pooling_from_string(const std::string& s);
HierInit hier_init_from_string(const std::string& s);
Schedule schedule_from_string(const std::string& s);

nlohmann::json model_config_to_json(const HstModelConfig& cfg);
HstModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json sar_config_to_json(const SarConfig& cfg);
SarConfig sar_config_from_json(const nlohmann::json& j);

// Flat layout: optimizer and schedule fields live beside the loop controls.
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json task_spec_to_json(const SyntheticTaskSpec& spec);
SyntheticTaskSpec task_spec_from_json(const nlohmann::json& j);

}  // namespace hst
