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

#include "microdense/config.hpp"

#include <fstream>

#include <json.hpp>

namespace microdense {

using nlohmann::json;

json train_config_to_json(const TrainConfig& c) {
  return json{{"lr_max", c.lr_max},
              {"total_iters", c.total_iters},
              {"warmup_iters", c.warmup_iters},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"eval_interval", c.eval_interval},
              {"checkpoint_interval", c.checkpoint_interval},
              {"augment", c.augment}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  if (j.contains("lr_max")) c.lr_max = j.at("lr_max").get<double>();
  if (j.contains("total_iters"))
    c.total_iters = j.at("total_iters").get<std::int64_t>();
  // Default warmup: 5% of the total unless stated.
  c.warmup_iters = c.total_iters / 20;
  if (j.contains("warmup_iters"))
    c.warmup_iters = j.at("warmup_iters").get<std::int64_t>();
  if (j.contains("momentum")) c.momentum = j.at("momentum").get<double>();
  if (j.contains("weight_decay"))
    c.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("batch_size"))
    c.batch_size = j.at("batch_size").get<std::int64_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("eval_interval"))
    c.eval_interval = j.at("eval_interval").get<std::int64_t>();
  if (j.contains("checkpoint_interval"))
    c.checkpoint_interval = j.at("checkpoint_interval").get<std::int64_t>();
  if (j.contains("augment")) c.augment = j.at("augment").get<bool>();
  c.validate();
  return c;
}

json synthetic_spec_to_json(const SyntheticSpec& s) {
  return json{{"num_classes", s.num_classes},
              {"samples_per_class", s.samples_per_class},
              {"image_size", s.image_size},
              {"pattern_seed", s.pattern_seed},
              {"sigma", s.sigma}};
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  SyntheticSpec s;
  if (j.contains("num_classes")) s.num_classes = j.at("num_classes").get<int>();
  if (j.contains("samples_per_class"))
    s.samples_per_class = j.at("samples_per_class").get<int>();
  if (j.contains("image_size")) s.image_size = j.at("image_size").get<int>();
  if (j.contains("pattern_seed"))
    s.pattern_seed = j.at("pattern_seed").get<std::uint64_t>();
  if (j.contains("sigma")) s.sigma = j.at("sigma").get<double>();
  s.validate();
  return s;
}

json run_config_to_json(const RunConfig& c) {
  return json{{"arch", arch_config_to_json(c.arch)},
              {"train", train_config_to_json(c.train)},
              {"synthetic", synthetic_spec_to_json(c.synthetic)}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  if (j.contains("arch")) c.arch = arch_config_from_json(j.at("arch"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("synthetic"))
    c.synthetic = synthetic_spec_from_json(j.at("synthetic"));
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("config: cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw Error("config '" + path + "': " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const json::exception& e) {
    throw Error("config '" + path + "': " + e.what());
  }
}

void save_run_config(const std::string& path, const RunConfig& c) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("config: cannot write '" + path + "'");
  f << run_config_to_json(c).dump(2) << "\n";
}

}  // namespace microdense
