// SPDX-License-Identifier: Apache-2.0
//
// Strict JSON configuration parsing: unknown keys are rejected so silent
// hyperparameter typos cannot slip through. All parsers throw ConfigError
// with the offending key in the message.
#pragma once

#include <string>

#include "tgm/data.hpp"
#include "tgm/model.hpp"
#include "tgm/train.hpp"

namespace tgm {

ModelConfig parseModelConfig(const std::string& json_text);
std::string modelConfigJson(const ModelConfig& cfg);

TrainPlan parseTrainPlan(const std::string& json_text);
std::string trainPlanJson(const TrainPlan& plan);

SynthSpec parseSynthSpec(const std::string& json_text);
std::string synthSpecJson(const SynthSpec& spec);

// Run config file: {"model": {...}, "train": {...}} ("train" optional).
struct RunConfig {
  ModelConfig model;
  TrainPlan train;
};

RunConfig parseRunConfig(const std::string& json_text);

std::string readTextFile(const std::string& path);   // IoError on failure
void writeTextFile(const std::string& path, const std::string& text);

}  // namespace tgm
