#pragma once

#include <map>
#include <string>
#include <vector>

#include "frontal/training.hpp"

namespace frontal {

// Flat dotted-key configuration, one `key=value` per line, '#' comments.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_file(const std::string& path);
void apply_override(ConfigMap& m, const std::string& key_value);

// Builds a TrainConfig; unknown keys are rejected.
TrainConfig make_train_config(const ConfigMap& m);
ConfigMap config_to_map(const TrainConfig& c);

void write_config_snapshot(const std::string& path, const ConfigMap& m);

}  // namespace frontal
