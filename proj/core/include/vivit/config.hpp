// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "vivit/train.hpp"

namespace vivit {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// JSON config with sections model/train/reg/dataset. Every field of
// ModelConfig, TrainConfig and RegConfig is representable; unknown keys are
// rejected with their full path.
TrainConfig load_train_config(const std::string& path);
TrainConfig parse_train_config(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& cfg);

}  // namespace vivit
