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

#ifndef MICRODENSE_NETWORK_HPP_
#define MICRODENSE_NETWORK_HPP_

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "microdense/layers.hpp"
#include "microdense/planner.hpp"
#include "microdense/rng.hpp"

namespace microdense {

/// Owns all Parameters of one network, keyed by plan path. Storage is a
/// deque so parameter addresses stay stable as the store grows.
template <typename Scalar>
class ParameterStore {
public:
  Parameter<Scalar>& create(const std::string& name, Tensor<Scalar> init,
                            bool decay_exempt) {
    if (index_.count(name))
      throw Error("parameter store: duplicate name '" + name + "'");
    params_.emplace_back(name, std::move(init), decay_exempt);
    index_[name] = params_.size() - 1;
    return params_.back();
  }

  Parameter<Scalar>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw Error("parameter store: no parameter named '" + name + "'");
    return params_[it->second];
  }
  const Parameter<Scalar>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw Error("parameter store: no parameter named '" + name + "'");
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::deque<Parameter<Scalar>>& all() { return params_; }
  const std::deque<Parameter<Scalar>>& all() const { return params_; }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

private:
  std::deque<Parameter<Scalar>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename Scalar>
struct NamedBatchNorm {
  std::string name;
  BatchNormState<Scalar> state;
  NamedBatchNorm(std::string n, std::int64_t channels)
      : name(std::move(n)), state(channels) {}
};

/// An executable network: parameter store, batch-norm states, the plan it
/// was materialized from, and a builder that wires a fresh Graph per batch.
/// Instances are heap-allocated and pinned (builder closures hold pointers
/// into the stores).
template <typename Scalar>
class NetworkInstance {
public:
  using BuildFn =
      std::function<Value(NetworkInstance&, Graph<Scalar>&, Value, Mode)>;

  ArchConfig config;
  NetworkPlan plan;           // empty blocks for non-micro-dense variants
  std::string family = "micro-dense";
  ParameterStore<Scalar> params;
  Mode mode = Mode::Train;
  BuildFn builder;

  NetworkInstance() = default;
  NetworkInstance(const NetworkInstance&) = delete;
  NetworkInstance& operator=(const NetworkInstance&) = delete;

  BatchNormState<Scalar>& make_bn(const std::string& name, std::int64_t channels) {
    if (bn_index_.count(name))
      throw Error("network: duplicate batch-norm state '" + name + "'");
    bn_states_.emplace_back(name, channels);
    bn_index_[name] = bn_states_.size() - 1;
    return bn_states_.back().state;
  }
  BatchNormState<Scalar>& bn(const std::string& name) {
    auto it = bn_index_.find(name);
    if (it == bn_index_.end())
      throw Error("network: no batch-norm state '" + name + "'");
    return bn_states_[it->second].state;
  }
  std::deque<NamedBatchNorm<Scalar>>& bn_states() { return bn_states_; }
  const std::deque<NamedBatchNorm<Scalar>>& bn_states() const {
    return bn_states_;
  }

  /// Builds the graph for one batch of images and returns the logits node.
  Value build_logits(Graph<Scalar>& g, Value images) {
    return builder(*this, g, images, mode);
  }

  /// Convenience single forward pass.
  Tensor<Scalar> forward(const Tensor<Scalar>& images) {
    Graph<Scalar> g;
    Value x = g.input("images", images);
    Value logits = build_logits(g, x);
    return g.out(logits);
  }

private:
  std::deque<NamedBatchNorm<Scalar>> bn_states_;
  std::unordered_map<std::string, std::size_t> bn_index_;
};

namespace detail {

/// Fan-in-scaled normal initializer for convolution / linear weights.
template <typename Scalar>
Tensor<Scalar> he_normal(Rng& rng, const Shape& shape, std::int64_t fan_in) {
  Tensor<Scalar> t(shape);
  const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<Scalar>(rng.normal() * scale);
  return t;
}

/// Allocates the conv weight + batch-norm scale/shift for one conv-BN row.
template <typename Scalar>
void allocate_conv_bn(NetworkInstance<Scalar>& net, Rng& rng,
                      const LayerPlan& row) {
  const ConvSpec spec = row.conv_spec();
  const std::int64_t fan_in =
      (spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w;
  net.params.create(row.name + "/w",
                    he_normal<Scalar>(rng, spec.weight_shape(), fan_in), false);
  net.params.create(row.name + "/bn_g",
                    Tensor<Scalar>::full({row.out_channels}, Scalar(1)), true);
  net.params.create(row.name + "/bn_b", Tensor<Scalar>({row.out_channels}),
                    true);
  net.make_bn(row.name + "/bn", row.out_channels);
}

/// Emits conv -> BN (-> ReLU unless suppressed) for an allocated row.
template <typename Scalar>
Value emit_conv_bn(NetworkInstance<Scalar>& net, Graph<Scalar>& g, Value x,
                   const LayerPlan& row, Mode mode, bool with_relu) {
  const ConvSpec spec = row.conv_spec();
  Value w = g.param(net.params.get(row.name + "/w"));
  Value c = conv2d(g, x, w, std::nullopt, spec, row.name + "/conv");
  Value gm = g.param(net.params.get(row.name + "/bn_g"));
  Value bt = g.param(net.params.get(row.name + "/bn_b"));
  Value n = batch_norm(g, c, gm, bt, &net.bn(row.name + "/bn"), mode,
                       row.name + "/bn");
  return with_relu ? relu(g, n, row.name + "/relu") : n;
}

}  // namespace detail

/// Allocates every parameter and batch-norm state a block plan calls for.
template <typename Scalar>
void allocate_block(NetworkInstance<Scalar>& net, Rng& rng,
                    const BlockPlan& bp) {
  for (const auto& row : bp.layers) {
    switch (row.kind) {
      case LayerKind::EntryBN:
        net.params.create(row.name + "/bn_g",
                          Tensor<Scalar>::full({row.out_channels}, Scalar(1)),
                          true);
        net.params.create(row.name + "/bn_b",
                          Tensor<Scalar>({row.out_channels}), true);
        net.make_bn(row.name + "/bn", row.out_channels);
        break;
      case LayerKind::C1BR:
      case LayerKind::C3BR:
      case LayerKind::DownsampleConv:
        detail::allocate_conv_bn(net, rng, row);
        break;
      case LayerKind::ShortcutPool:
        break;  // parameter-free
      default:
        throw Error("allocate_block: unexpected row kind in '" + row.name + "'");
    }
  }
}

/// Materializes one micro-dense block: entry BN, compression, dense layers
/// over running concatenations, output layer, and the (possibly pooled)
/// zero-pad identity shortcut.
template <typename Scalar>
Value build_block(NetworkInstance<Scalar>& net, Graph<Scalar>& g, Value x,
                  const BlockPlan& bp, Mode mode) {
  if (g.out(x).dim(1) != bp.in_channels)
    throw Error("build_block '" + bp.name + "': input has " +
                std::to_string(g.out(x).dim(1)) + " channels, plan row '" +
                bp.layers.front().name + "' expects " +
                std::to_string(bp.in_channels));
  std::size_t row = 0;
  const LayerPlan& bn0 = bp.layers[row++];
  Value gm = g.param(net.params.get(bn0.name + "/bn_g"));
  Value bt = g.param(net.params.get(bn0.name + "/bn_b"));
  Value h = batch_norm(g, x, gm, bt, &net.bn(bn0.name + "/bn"), mode, bn0.name);

  const LayerPlan& compress = bp.layers[row++];
  Value x0 = detail::emit_conv_bn(net, g, h, compress, mode, true);

  std::vector<Value> features{x0};
  for (std::size_t j = 0; j < bp.dense_widths.size(); ++j) {
    const LayerPlan& c1 = bp.layers[row++];
    const LayerPlan& c3 = bp.layers[row++];
    Value cat = features.size() == 1
                    ? features[0]
                    : concat_channels(g, features, bp.name + "/concat");
    Value a = detail::emit_conv_bn(net, g, cat, c1, mode, true);
    Value xj = detail::emit_conv_bn(net, g, a, c3, mode, true);
    features.push_back(xj);
  }

  const LayerPlan& out_row = bp.layers[row++];
  Value all = concat_channels(g, features, bp.name + "/concat_out");
  Value main = detail::emit_conv_bn(net, g, all, out_row, mode, true);

  Value shortcut = x;
  if (bp.downsample)
    shortcut = avg_pool_stride2(g, x, bp.name + "/shortcut_pool");
  return residual_add_zero_pad(g, shortcut, main, bp.name + "/residual");
}

/// Materializes a full Micro-Dense Net from its compiled plan: C3-B stem,
/// N blocks with stage downsampling, final BN+ReLU, global average pooling,
/// and the classifier.
template <typename Scalar>
std::unique_ptr<NetworkInstance<Scalar>> build_network(const ArchConfig& config,
                                                       std::uint64_t seed) {
  auto net = std::make_unique<NetworkInstance<Scalar>>();
  net->config = config;
  net->plan = plan_network(config);
  net->family = "micro-dense";
  Rng rng(derive_seed(seed, 0xb111d));

  detail::allocate_conv_bn(*net, rng, net->plan.stem[0]);
  for (const auto& bp : net->plan.blocks) allocate_block(*net, rng, bp);

  const LayerPlan& head_bn = net->plan.head[0];
  net->params.create(head_bn.name + "/bn_g",
                     Tensor<Scalar>::full({head_bn.out_channels}, Scalar(1)),
                     true);
  net->params.create(head_bn.name + "/bn_b",
                     Tensor<Scalar>({head_bn.out_channels}), true);
  net->make_bn(head_bn.name + "/bn", head_bn.out_channels);

  const LayerPlan& fc = net->plan.head.back();
  net->params.create(
      "head/linear/w",
      detail::he_normal<Scalar>(rng, {fc.out_channels, fc.in_channels},
                                fc.in_channels),
      false);
  net->params.create("head/linear/b", Tensor<Scalar>({fc.out_channels}), true);

  net->builder = [](NetworkInstance<Scalar>& n, Graph<Scalar>& g, Value images,
                    Mode mode) {
    const LayerPlan& stem = n.plan.stem[0];
    // "C3-B": conv + BN without ReLU.
    Value h = detail::emit_conv_bn(n, g, images, stem, mode, false);
    for (const auto& bp : n.plan.blocks) h = build_block(n, g, h, bp, mode);

    const LayerPlan& head_bn = n.plan.head[0];
    Value gm = g.param(n.params.get(head_bn.name + "/bn_g"));
    Value bt = g.param(n.params.get(head_bn.name + "/bn_b"));
    h = batch_norm(g, h, gm, bt, &n.bn(head_bn.name + "/bn"), mode,
                   head_bn.name);
    h = relu(g, h, head_bn.name + "/relu");
    h = global_avg_pool(g, h);
    Value w = g.param(n.params.get("head/linear/w"));
    Value b = g.param(n.params.get("head/linear/b"));
    return linear(g, h, w, b, "head/linear");
  };
  return net;
}

}  // namespace microdense

#endif  // MICRODENSE_NETWORK_HPP_
