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

#ifndef MICRODENSE_PLANNER_HPP_
#define MICRODENSE_PLANNER_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "microdense/layers.hpp"

namespace microdense {

/// Exact ratio, kept rational so channel flooring never sees float drift.
struct Rational {
  std::int64_t num = 1;
  std::int64_t den = 4;

  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
};

/// floor(x * r) in exact integer arithmetic (x >= 0, r >= 0).
std::int64_t floor_mul(std::int64_t x, const Rational& r);

/// Best rational approximation with bounded denominator (Stern-Brocot walk);
/// recovers short decimals like 0.225 -> 9/40 exactly.
Rational rational_from_double(double x, std::int64_t max_den = 1000000);
Rational rational_from_string(const std::string& s);

/// Dense-layer width schedule inside a block: pyramidal widening per the
/// cardinality schedule, or the conventional fixed growth (all layers as
/// wide as the first, cardinality pinned at k_1).
enum class GrowthMode { Pyramidal, Fixed };

std::string growth_mode_str(GrowthMode m);
GrowthMode growth_mode_from_str(const std::string& s);

/// Declarative description of a whole network.
struct ArchConfig {
  std::int64_t stem_width = 16;                    // W_0
  std::int64_t alpha = 64;                         // total added width
  std::int64_t num_blocks = 30;                    // N
  int dense_layers = 3;                            // n of MDConv-n
  std::int64_t group_base = 4;                     // g_c
  Rational compression_ratio{1, 4};                // r_a
  std::vector<std::int64_t> stage_blocks = {10, 10, 10};
  std::int64_t num_classes = 10;
  std::int64_t input_size = 32;
  std::int64_t input_channels = 3;
  GrowthMode growth = GrowthMode::Pyramidal;

  void validate() const;
};

enum class LayerKind {
  StemConvBN,      // "C3-B": 3x3 conv + BN, no ReLU
  EntryBN,         // bare block-entry BatchNorm
  C1BR,
  C3BR,
  DownsampleConv,  // 4x4 stride-2 conv + BN + ReLU at stage entries
  ShortcutPool,    // 2x2 stride-2 average pool on the shortcut path
  HeadBN,          // final BN + ReLU before pooling
  GlobalPool,
  Linear,
};

std::string layer_kind_str(LayerKind k);
LayerKind layer_kind_from_str(const std::string& s);

/// One executable row of the compiled plan, with spatial trace and exact
/// parameter / FLOP accounting.
struct LayerPlan {
  std::string name;
  LayerKind kind = LayerKind::C1BR;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  std::int64_t groups = 1;
  std::int64_t in_h = 0, in_w = 0;
  std::int64_t out_h = 0, out_w = 0;
  std::int64_t conv_params = 0;  // == count_params(conv_spec(), Exact)
  std::int64_t param_count = 0;  // everything the builder allocates for the row
  std::int64_t flop_count = 0;   // per input image, see flops()
  std::string source;            // which architecture-table row it instantiates

  bool has_conv() const {
    return kind == LayerKind::StemConvBN || kind == LayerKind::C1BR ||
           kind == LayerKind::C3BR || kind == LayerKind::DownsampleConv;
  }
  bool has_bn() const {
    return has_conv() || kind == LayerKind::EntryBN || kind == LayerKind::HeadBN;
  }
  ConvSpec conv_spec() const;
};

enum class ShortcutKind { Identity, ZeroPad, DownsampleZeroPad };

std::string shortcut_kind_str(ShortcutKind k);
ShortcutKind shortcut_kind_from_str(const std::string& s);

/// Compiled micro-dense block: compression, dense-1..dense-n, output layer,
/// plus the shortcut descriptor and totals.
struct BlockPlan {
  std::string name;
  std::int64_t index = 0;  // 1-based position in the network
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t compression_width = 0;          // c_0
  std::vector<std::int64_t> dense_widths;      // c_1..c_n, strictly increasing
  std::vector<std::int64_t> cardinalities;     // k_1..k_n
  bool downsample = false;
  ShortcutKind shortcut = ShortcutKind::ZeroPad;
  std::vector<LayerPlan> layers;
  std::int64_t param_total = 0;
  std::int64_t flop_total = 0;
};

struct NetworkPlan {
  ArchConfig config;
  std::vector<LayerPlan> stem;
  std::vector<BlockPlan> blocks;
  std::vector<LayerPlan> head;
  std::int64_t param_total = 0;
  std::int64_t flop_total = 0;

  /// All rows in execution order (stem, blocks, head).
  std::vector<const LayerPlan*> all_layers() const;
};

// --- Channel growth calculus -----------------------------------------------

/// C_n = c_0 + n * r_0 (fixed growth rate).
std::int64_t fixed_growth_channels(std::int64_t c0, std::int64_t r0,
                                   std::int64_t n);

/// C^_n = c_0 + n*r_0 + r^*(n-1)*n/2 (per-layer rate r_0 + r^*(i-1)).
std::int64_t increasing_growth_channels(std::int64_t c0, std::int64_t r0,
                                        std::int64_t rhat, std::int64_t n);

/// W_k = floor(W_0 + k*alpha/N) for k = 0..N, exact integer arithmetic.
std::vector<std::int64_t> pyramid_widths(std::int64_t w0, std::int64_t alpha,
                                         std::int64_t n_blocks);

/// k_j = j + 1 for j = 1..n.
std::vector<std::int64_t> cardinality_schedule(int n);

// --- Plan construction ------------------------------------------------------

BlockPlan plan_block(const std::string& name, std::int64_t index,
                     std::int64_t c_in, std::int64_t c_out, int n,
                     std::int64_t g_c, const Rational& r_a, bool downsample,
                     std::int64_t in_h, std::int64_t in_w,
                     GrowthMode growth = GrowthMode::Pyramidal);

NetworkPlan plan_network(const ArchConfig& config);

// --- FLOP accounting --------------------------------------------------------
// Convention (per single input image): a convolution costs
// 2*H_out*W_out*c_u*(c_i/G)*k_h*k_w multiply-accumulates (+H_out*W_out*c_u
// with bias); batch norm costs 4 per element, ReLU 1 per element, average
// pooling its window size per output element, global pooling H*W per
// channel, linear 2*D*O + O. Elementwise residual additions and
// concatenations are free. Composite rows (C-BR) sum their components.

std::int64_t conv_flops(const ConvSpec& spec, std::int64_t h_out,
                        std::int64_t w_out);
std::int64_t flops(const LayerPlan& layer);

// --- Structured text export (consumed by the network builder, printed by
// the `plan` CLI subcommand) -------------------------------------------------

nlohmann::json arch_config_to_json(const ArchConfig&);
ArchConfig arch_config_from_json(const nlohmann::json&);
nlohmann::json plan_to_json(const NetworkPlan&);
NetworkPlan plan_from_json(const nlohmann::json&);

std::string render_plan(const NetworkPlan&, bool block_trace);

}  // namespace microdense

#endif  // MICRODENSE_PLANNER_HPP_
