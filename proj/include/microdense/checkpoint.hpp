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

#ifndef MICRODENSE_CHECKPOINT_HPP_
#define MICRODENSE_CHECKPOINT_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "microdense/network.hpp"

namespace microdense {

// Checkpoint file layout (all integers little-endian):
//   bytes 0-3   magic "MDNW"
//   u32         format version (1)
//   u64         metadata length; that many bytes of JSON (originating
//               ArchConfig under "arch", plus trainer extras)
//   u32         entry count
//   per entry:  u32 name length, name bytes, u32 ndim, u64 extents[ndim],
//               u64 byte offset into the data section
//   u64         data section byte length
//   data        float32 arrays back-to-back
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint32_t version = 1;
  nlohmann::json meta;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
  const CheckpointEntry& at(const std::string& name) const {
    const auto* e = find(name);
    if (!e) throw Error("checkpoint: no entry named '" + name + "'");
    return *e;
  }
};

void write_checkpoint_file(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint_file(const std::string& path);

namespace detail {

template <typename Scalar>
std::vector<float> to_f32(const Tensor<Scalar>& t) {
  std::vector<float> out(static_cast<std::size_t>(t.size()));
  for (std::int64_t i = 0; i < t.size(); ++i)
    out[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
  return out;
}

template <typename Scalar>
Tensor<Scalar> from_f32(const CheckpointEntry& e) {
  Tensor<Scalar> t(e.shape);
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<Scalar>(e.data[static_cast<std::size_t>(i)]);
  return t;
}

}  // namespace detail

/// Captures parameters, batch-norm running statistics, momentum buffers and
/// the originating architecture config.
template <typename Scalar>
Checkpoint snapshot_network(const NetworkInstance<Scalar>& net,
                            bool include_momentum = true,
                            nlohmann::json extra = nlohmann::json::object()) {
  Checkpoint ck;
  ck.meta = nlohmann::json{{"arch", arch_config_to_json(net.config)},
                           {"family", net.family}};
  for (auto& [k, v] : extra.items()) ck.meta[k] = v;
  for (const auto& p : net.params.all())
    ck.entries.push_back({p.name, p.value.shape(), detail::to_f32(p.value)});
  for (const auto& b : net.bn_states()) {
    ck.entries.push_back({"running_mean/" + b.name, b.state.running_mean.shape(),
                          detail::to_f32(b.state.running_mean)});
    ck.entries.push_back({"running_var/" + b.name, b.state.running_var.shape(),
                          detail::to_f32(b.state.running_var)});
  }
  if (include_momentum)
    for (const auto& p : net.params.all())
      ck.entries.push_back(
          {"momentum/" + p.name, p.momentum.shape(), detail::to_f32(p.momentum)});
  return ck;
}

/// Restores what snapshot_network captured. Momentum buffers are restored
/// when present and requested.
template <typename Scalar>
void restore_network(NetworkInstance<Scalar>& net, const Checkpoint& ck,
                     bool restore_momentum = true) {
  for (auto& p : net.params.all()) {
    const auto& e = ck.at(p.name);
    if (e.shape != p.value.shape())
      throw Error("checkpoint: entry '" + p.name + "' has shape " +
                  shape_str(e.shape) + ", parameter wants " +
                  shape_str(p.value.shape()));
    p.value = detail::from_f32<Scalar>(e);
    if (restore_momentum) {
      if (const auto* m = ck.find("momentum/" + p.name))
        p.momentum = detail::from_f32<Scalar>(*m);
    }
  }
  for (auto& b : net.bn_states()) {
    b.state.running_mean = detail::from_f32<Scalar>(ck.at("running_mean/" + b.name));
    b.state.running_var = detail::from_f32<Scalar>(ck.at("running_var/" + b.name));
  }
}

}  // namespace microdense

#endif  // MICRODENSE_CHECKPOINT_HPP_
