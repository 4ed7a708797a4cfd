/*
 * Copyright 2026 The microdense authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MICRODENSE_CONFIG_HPP_
#define MICRODENSE_CONFIG_HPP_

#include <string>

#include <json.hpp>

#include "microdense/data.hpp"
#include "microdense/planner.hpp"
#include "microdense/trainer.hpp"

namespace microdense {

/// One self-describing run configuration: architecture + optimizer/schedule
/// (+ synthetic-data parameters when the synthetic task is used).
struct RunConfig {
  ArchConfig arch;
  TrainConfig train;
  SyntheticSpec synthetic;
};

nlohmann::json train_config_to_json(const TrainConfig&);
TrainConfig train_config_from_json(const nlohmann::json&);

nlohmann::json synthetic_spec_to_json(const SyntheticSpec&);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json&);

nlohmann::json run_config_to_json(const RunConfig&);
RunConfig run_config_from_json(const nlohmann::json&);

/// Loads a config file; parse errors report the line and field.
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig&);

}  // namespace microdense

#endif  // MICRODENSE_CONFIG_HPP_
