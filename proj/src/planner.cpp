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

#include "microdense/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace microdense {

using nlohmann::json;

std::int64_t floor_mul(std::int64_t x, const Rational& r) {
  if (x < 0 || r.num < 0 || r.den <= 0)
    throw Error("floor_mul: needs x >= 0 and a non-negative ratio");
  return (x * r.num) / r.den;
}

Rational rational_from_double(double x, std::int64_t max_den) {
  if (!(x >= 0.0) || !std::isfinite(x))
    throw Error("rational_from_double: value must be finite and >= 0");
  // Stern-Brocot search for the best approximation with den <= max_den.
  std::int64_t lo_n = 0, lo_d = 1, hi_n = 1, hi_d = 0;
  const std::int64_t whole = static_cast<std::int64_t>(std::floor(x));
  double frac = x - static_cast<double>(whole);
  std::int64_t best_n = 0, best_d = 1;
  double best_err = frac;
  while (lo_d + hi_d <= max_den) {
    const std::int64_t mn = lo_n + hi_n, md = lo_d + hi_d;
    const double mid = static_cast<double>(mn) / static_cast<double>(md);
    const double err = std::abs(mid - frac);
    if (err < best_err) {
      best_n = mn;
      best_d = md;
      best_err = err;
    }
    if (err < 1e-15) break;
    if (mid < frac) {
      lo_n = mn;
      lo_d = md;
    } else {
      hi_n = mn;
      hi_d = md;
    }
  }
  return Rational{whole * best_d + best_n, best_d};
}

Rational rational_from_string(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos)
    return rational_from_double(std::stod(s));
  Rational r;
  r.num = std::stoll(s.substr(0, slash));
  r.den = std::stoll(s.substr(slash + 1));
  if (r.den <= 0 || r.num < 0) throw Error("rational: bad ratio '" + s + "'");
  return r;
}

void ArchConfig::validate() const {
  if (num_blocks < 1) throw Error("config: num_blocks must be >= 1");
  if (dense_layers < 1) throw Error("config: dense_layers must be >= 1");
  if (group_base < 1) throw Error("config: group_base must be >= 1");
  if (compression_ratio.num <= 0 || compression_ratio.den <= 0 ||
      compression_ratio.num > compression_ratio.den)
    throw Error("config: compression_ratio must be in (0, 1]");
  if (stem_width < group_base)
    throw Error("config: stem_width must be >= group_base");
  if (alpha < 0) throw Error("config: alpha must be >= 0");
  if (num_classes < 2) throw Error("config: num_classes must be >= 2");
  if (input_size < 4) throw Error("config: input_size must be >= 4");
  if (stage_blocks.empty())
    throw Error("config: stage_blocks must not be empty");
  const std::int64_t total =
      std::accumulate(stage_blocks.begin(), stage_blocks.end(), std::int64_t(0));
  if (total != num_blocks)
    throw Error("config: stage_blocks sums to " + std::to_string(total) +
                " but num_blocks is " + std::to_string(num_blocks));
  for (auto s : stage_blocks)
    if (s < 1) throw Error("config: every stage needs at least one block");
}

std::string layer_kind_str(LayerKind k) {
  switch (k) {
    case LayerKind::StemConvBN: return "C3-B";
    case LayerKind::EntryBN: return "BN";
    case LayerKind::C1BR: return "C1-BR";
    case LayerKind::C3BR: return "C3-BR";
    case LayerKind::DownsampleConv: return "downsample-conv";
    case LayerKind::ShortcutPool: return "pool";
    case LayerKind::HeadBN: return "head-BN";
    case LayerKind::GlobalPool: return "global-pool";
    case LayerKind::Linear: return "linear";
  }
  throw Error("layer_kind_str: bad kind");
}

LayerKind layer_kind_from_str(const std::string& s) {
  if (s == "C3-B") return LayerKind::StemConvBN;
  if (s == "BN") return LayerKind::EntryBN;
  if (s == "C1-BR") return LayerKind::C1BR;
  if (s == "C3-BR") return LayerKind::C3BR;
  if (s == "downsample-conv") return LayerKind::DownsampleConv;
  if (s == "pool") return LayerKind::ShortcutPool;
  if (s == "head-BN") return LayerKind::HeadBN;
  if (s == "global-pool") return LayerKind::GlobalPool;
  if (s == "linear") return LayerKind::Linear;
  throw Error("layer_kind_from_str: unknown kind '" + s + "'");
}

std::string growth_mode_str(GrowthMode m) {
  return m == GrowthMode::Pyramidal ? "pyramidal" : "fixed";
}

GrowthMode growth_mode_from_str(const std::string& s) {
  if (s == "pyramidal") return GrowthMode::Pyramidal;
  if (s == "fixed") return GrowthMode::Fixed;
  throw Error("growth_mode_from_str: unknown mode '" + s + "'");
}

std::string shortcut_kind_str(ShortcutKind k) {
  switch (k) {
    case ShortcutKind::Identity: return "identity";
    case ShortcutKind::ZeroPad: return "zero-pad";
    case ShortcutKind::DownsampleZeroPad: return "downsample+zero-pad";
  }
  throw Error("shortcut_kind_str: bad kind");
}

ShortcutKind shortcut_kind_from_str(const std::string& s) {
  if (s == "identity") return ShortcutKind::Identity;
  if (s == "zero-pad") return ShortcutKind::ZeroPad;
  if (s == "downsample+zero-pad") return ShortcutKind::DownsampleZeroPad;
  throw Error("shortcut_kind_from_str: unknown kind '" + s + "'");
}

ConvSpec LayerPlan::conv_spec() const {
  if (!has_conv()) throw Error("conv_spec: layer '" + name + "' has no conv");
  ConvSpec s;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  s.padding = padding;
  s.groups = groups;
  s.bias = false;
  return s;
}

std::vector<const LayerPlan*> NetworkPlan::all_layers() const {
  std::vector<const LayerPlan*> out;
  for (const auto& l : stem) out.push_back(&l);
  for (const auto& b : blocks)
    for (const auto& l : b.layers) out.push_back(&l);
  for (const auto& l : head) out.push_back(&l);
  return out;
}

std::int64_t fixed_growth_channels(std::int64_t c0, std::int64_t r0,
                                   std::int64_t n) {
  if (c0 < 0 || r0 < 0 || n < 0)
    throw Error("fixed_growth_channels: negative input");
  return c0 + n * r0;
}

std::int64_t increasing_growth_channels(std::int64_t c0, std::int64_t r0,
                                        std::int64_t rhat, std::int64_t n) {
  if (c0 < 0 || r0 < 0 || rhat < 0 || n < 0)
    throw Error("increasing_growth_channels: negative input");
  return c0 + n * r0 + rhat * (n - 1) * n / 2;
}

std::vector<std::int64_t> pyramid_widths(std::int64_t w0, std::int64_t alpha,
                                         std::int64_t n_blocks) {
  if (n_blocks < 1) throw Error("pyramid_widths: N must be >= 1");
  if (w0 < 1 || alpha < 0) throw Error("pyramid_widths: bad W_0 or alpha");
  std::vector<std::int64_t> w(static_cast<std::size_t>(n_blocks) + 1);
  for (std::int64_t k = 0; k <= n_blocks; ++k)
    w[static_cast<std::size_t>(k)] = w0 + (k * alpha) / n_blocks;
  return w;
}

std::vector<std::int64_t> cardinality_schedule(int n) {
  if (n < 1) throw Error("cardinality_schedule: n must be >= 1");
  std::vector<std::int64_t> k(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) k[static_cast<std::size_t>(j - 1)] = j + 1;
  return k;
}

std::int64_t conv_flops(const ConvSpec& spec, std::int64_t h_out,
                        std::int64_t w_out) {
  std::int64_t f = 2 * h_out * w_out * spec.out_channels *
                   (spec.in_channels / spec.groups) * spec.kernel_h *
                   spec.kernel_w;
  if (spec.bias) f += h_out * w_out * spec.out_channels;
  return f;
}

namespace {

std::int64_t bn_flops(std::int64_t c, std::int64_t h, std::int64_t w) {
  return 4 * c * h * w;
}
std::int64_t relu_flops(std::int64_t c, std::int64_t h, std::int64_t w) {
  return c * h * w;
}

}  // namespace

std::int64_t flops(const LayerPlan& l) {
  switch (l.kind) {
    case LayerKind::StemConvBN:
      return conv_flops(l.conv_spec(), l.out_h, l.out_w) +
             bn_flops(l.out_channels, l.out_h, l.out_w);
    case LayerKind::EntryBN:
      return bn_flops(l.out_channels, l.out_h, l.out_w);
    case LayerKind::C1BR:
    case LayerKind::C3BR:
    case LayerKind::DownsampleConv:
      return conv_flops(l.conv_spec(), l.out_h, l.out_w) +
             bn_flops(l.out_channels, l.out_h, l.out_w) +
             relu_flops(l.out_channels, l.out_h, l.out_w);
    case LayerKind::ShortcutPool:
      return 4 * l.out_channels * l.out_h * l.out_w;
    case LayerKind::HeadBN:
      return bn_flops(l.out_channels, l.out_h, l.out_w) +
             relu_flops(l.out_channels, l.out_h, l.out_w);
    case LayerKind::GlobalPool:
      return l.in_channels * l.in_h * l.in_w;
    case LayerKind::Linear:
      return 2 * l.in_channels * l.out_channels + l.out_channels;
  }
  throw Error("flops: bad layer kind");
}

namespace {

LayerPlan make_conv_row(const std::string& name, LayerKind kind,
                        std::int64_t c_in, std::int64_t c_out, int kernel,
                        int stride, int padding, std::int64_t groups,
                        std::int64_t in_h, std::int64_t in_w,
                        const std::string& source) {
  LayerPlan l;
  l.name = name;
  l.kind = kind;
  l.in_channels = c_in;
  l.out_channels = c_out;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.groups = groups;
  l.in_h = in_h;
  l.in_w = in_w;
  const ConvSpec spec = l.conv_spec();
  spec.validate();
  l.out_h = spec.out_extent(in_h);
  l.out_w = spec.out_extent(in_w);
  if (l.out_h < 1 || l.out_w < 1)
    throw Error("plan: layer '" + name + "' collapses spatially");
  l.conv_params = count_params(spec, CountMode::Exact);
  l.param_count = l.conv_params + 2 * c_out;  // + BN scale/shift
  l.source = source;
  l.flop_count = flops(l);
  return l;
}

LayerPlan make_bn_row(const std::string& name, LayerKind kind, std::int64_t c,
                      std::int64_t h, std::int64_t w,
                      const std::string& source) {
  LayerPlan l;
  l.name = name;
  l.kind = kind;
  l.in_channels = l.out_channels = c;
  l.in_h = l.out_h = h;
  l.in_w = l.out_w = w;
  l.param_count = 2 * c;
  l.source = source;
  l.flop_count = flops(l);
  return l;
}

}  // namespace

BlockPlan plan_block(const std::string& name, std::int64_t index,
                     std::int64_t c_in, std::int64_t c_out, int n,
                     std::int64_t g_c, const Rational& r_a, bool downsample,
                     std::int64_t in_h, std::int64_t in_w, GrowthMode growth) {
  if (c_in < 1) throw Error("plan_block: c_in must be >= 1");
  if (c_out < c_in)
    throw Error("plan_block '" + name + "': output width " +
                std::to_string(c_out) + " below input width " +
                std::to_string(c_in) + " breaks the zero-pad shortcut");
  const std::int64_t c0_units = floor_mul(c_in, r_a);
  if (c0_units < 1)
    throw Error("plan_block '" + name + "': compression floor(" +
                std::to_string(c_in) + " * " + r_a.str() +
                ") is zero; raise the compression ratio r_a");
  const std::int64_t c0 = c0_units * g_c;

  BlockPlan b;
  b.name = name;
  b.index = index;
  b.in_channels = c_in;
  b.out_channels = c_out;
  b.compression_width = c0;
  b.downsample = downsample;
  b.shortcut = downsample ? ShortcutKind::DownsampleZeroPad
               : c_out == c_in ? ShortcutKind::Identity
                               : ShortcutKind::ZeroPad;
  b.cardinalities = cardinality_schedule(n);
  if (growth == GrowthMode::Fixed)
    std::fill(b.cardinalities.begin(), b.cardinalities.end(),
              b.cardinalities.front());

  const std::int64_t out_h = downsample ? (in_h + 2 - 4) / 2 + 1 : in_h;
  const std::int64_t out_w = downsample ? (in_w + 2 - 4) / 2 + 1 : in_w;

  b.layers.push_back(make_bn_row(name + "/bn0", LayerKind::EntryBN, c_in, in_h,
                                 in_w, "block/entry-bn"));
  if (downsample) {
    b.layers.push_back(make_conv_row(name + "/compress", LayerKind::DownsampleConv,
                                     c_in, c0, 4, 2, 1, 1, in_h, in_w,
                                     "block/stage-entry-downsample"));
  } else {
    b.layers.push_back(make_conv_row(name + "/compress", LayerKind::C1BR, c_in,
                                     c0, 1, 1, 0, 1, in_h, in_w,
                                     "block/compression"));
  }

  std::int64_t running = c0;  // c^_j = sum of c_0..c_{j-1}
  for (int j = 1; j <= n; ++j) {
    const std::int64_t k_j = b.cardinalities[static_cast<std::size_t>(j - 1)];
    const std::int64_t c_j = (c0 / g_c) * k_j;
    b.dense_widths.push_back(c_j);
    const std::string dprefix = name + "/dense" + std::to_string(j);
    b.layers.push_back(make_conv_row(dprefix + "/c1", LayerKind::C1BR, running,
                                     c_j, 1, 1, 0, 1, out_h, out_w,
                                     "block/dense-" + std::to_string(j)));
    b.layers.push_back(make_conv_row(dprefix + "/c3", LayerKind::C3BR, c_j, c_j,
                                     3, 1, 1, k_j, out_h, out_w,
                                     "block/dense-" + std::to_string(j)));
    running += c_j;
  }

  b.layers.push_back(make_conv_row(name + "/out", LayerKind::C1BR, running,
                                   c_out, 1, 1, 0, 1, out_h, out_w,
                                   "block/output-layer"));
  if (downsample) {
    LayerPlan pool;
    pool.name = name + "/shortcut_pool";
    pool.kind = LayerKind::ShortcutPool;
    pool.in_channels = pool.out_channels = c_in;
    pool.kernel = 2;
    pool.stride = 2;
    pool.in_h = in_h;
    pool.in_w = in_w;
    pool.out_h = out_h;
    pool.out_w = out_w;
    pool.source = "shortcut";
    pool.flop_count = flops(pool);
    b.layers.push_back(pool);
  }

  for (const auto& l : b.layers) {
    b.param_total += l.param_count;
    b.flop_total += l.flop_count;
  }
  return b;
}

NetworkPlan plan_network(const ArchConfig& config) {
  config.validate();
  NetworkPlan plan;
  plan.config = config;

  const auto widths =
      pyramid_widths(config.stem_width, config.alpha, config.num_blocks);

  plan.stem.push_back(make_conv_row("stem", LayerKind::StemConvBN,
                                    config.input_channels, config.stem_width, 3,
                                    1, 1, 1, config.input_size,
                                    config.input_size, "stem"));

  std::int64_t h = config.input_size, w = config.input_size;
  std::int64_t block_index = 0;
  for (std::size_t stage = 0; stage < config.stage_blocks.size(); ++stage) {
    for (std::int64_t i = 0; i < config.stage_blocks[stage]; ++i) {
      ++block_index;
      const bool downsample = stage > 0 && i == 0;
      std::ostringstream name;
      name << "block" << (block_index < 10 ? "0" : "") << block_index;
      auto b = plan_block(name.str(), block_index,
                          widths[static_cast<std::size_t>(block_index - 1)],
                          widths[static_cast<std::size_t>(block_index)],
                          config.dense_layers, config.group_base,
                          config.compression_ratio, downsample, h, w,
                          config.growth);
      h = b.layers.back().out_h;
      w = b.layers.back().out_w;
      plan.blocks.push_back(std::move(b));
    }
  }

  const std::int64_t c_final = widths.back();
  plan.head.push_back(
      make_bn_row("head/bn", LayerKind::HeadBN, c_final, h, w, "head"));
  {
    LayerPlan gap;
    gap.name = "head/global_pool";
    gap.kind = LayerKind::GlobalPool;
    gap.in_channels = gap.out_channels = c_final;
    gap.in_h = h;
    gap.in_w = w;
    gap.out_h = gap.out_w = 1;
    gap.source = "head";
    gap.flop_count = flops(gap);
    plan.head.push_back(gap);
  }
  {
    LayerPlan fc;
    fc.name = "head/linear";
    fc.kind = LayerKind::Linear;
    fc.in_channels = c_final;
    fc.out_channels = config.num_classes;
    fc.in_h = fc.in_w = fc.out_h = fc.out_w = 1;
    fc.param_count = c_final * config.num_classes + config.num_classes;
    fc.source = "head";
    fc.flop_count = flops(fc);
    plan.head.push_back(fc);
  }

  for (const auto* l : plan.all_layers()) {
    plan.param_total += l->param_count;
    plan.flop_total += l->flop_count;
  }
  return plan;
}

// --- JSON -------------------------------------------------------------------

json arch_config_to_json(const ArchConfig& c) {
  return json{{"stem_width", c.stem_width},
              {"alpha", c.alpha},
              {"num_blocks", c.num_blocks},
              {"dense_layers", c.dense_layers},
              {"group_base", c.group_base},
              {"compression_ratio", c.compression_ratio.str()},
              {"stage_blocks", c.stage_blocks},
              {"num_classes", c.num_classes},
              {"input_size", c.input_size},
              {"input_channels", c.input_channels},
              {"growth", growth_mode_str(c.growth)}};
}

ArchConfig arch_config_from_json(const json& j) {
  ArchConfig c;
  if (j.contains("stem_width")) c.stem_width = j.at("stem_width").get<std::int64_t>();
  if (j.contains("alpha")) c.alpha = j.at("alpha").get<std::int64_t>();
  if (j.contains("num_blocks")) c.num_blocks = j.at("num_blocks").get<std::int64_t>();
  if (j.contains("dense_layers")) c.dense_layers = j.at("dense_layers").get<int>();
  if (j.contains("group_base")) c.group_base = j.at("group_base").get<std::int64_t>();
  if (j.contains("compression_ratio")) {
    const auto& v = j.at("compression_ratio");
    c.compression_ratio = v.is_string()
                              ? rational_from_string(v.get<std::string>())
                              : rational_from_double(v.get<double>());
  }
  if (j.contains("stage_blocks"))
    c.stage_blocks = j.at("stage_blocks").get<std::vector<std::int64_t>>();
  if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<std::int64_t>();
  if (j.contains("input_size")) c.input_size = j.at("input_size").get<std::int64_t>();
  if (j.contains("input_channels"))
    c.input_channels = j.at("input_channels").get<std::int64_t>();
  if (j.contains("growth"))
    c.growth = growth_mode_from_str(j.at("growth").get<std::string>());
  c.validate();
  return c;
}

namespace {

json layer_to_json(const LayerPlan& l) {
  return json{{"name", l.name},
              {"kind", layer_kind_str(l.kind)},
              {"in_channels", l.in_channels},
              {"out_channels", l.out_channels},
              {"kernel", l.kernel},
              {"stride", l.stride},
              {"padding", l.padding},
              {"groups", l.groups},
              {"in_h", l.in_h},
              {"in_w", l.in_w},
              {"out_h", l.out_h},
              {"out_w", l.out_w},
              {"conv_params", l.conv_params},
              {"param_count", l.param_count},
              {"flop_count", l.flop_count},
              {"source", l.source}};
}

LayerPlan layer_from_json(const json& j) {
  LayerPlan l;
  l.name = j.at("name").get<std::string>();
  l.kind = layer_kind_from_str(j.at("kind").get<std::string>());
  l.in_channels = j.at("in_channels").get<std::int64_t>();
  l.out_channels = j.at("out_channels").get<std::int64_t>();
  l.kernel = j.at("kernel").get<int>();
  l.stride = j.at("stride").get<int>();
  l.padding = j.at("padding").get<int>();
  l.groups = j.at("groups").get<std::int64_t>();
  l.in_h = j.at("in_h").get<std::int64_t>();
  l.in_w = j.at("in_w").get<std::int64_t>();
  l.out_h = j.at("out_h").get<std::int64_t>();
  l.out_w = j.at("out_w").get<std::int64_t>();
  l.conv_params = j.at("conv_params").get<std::int64_t>();
  l.param_count = j.at("param_count").get<std::int64_t>();
  l.flop_count = j.at("flop_count").get<std::int64_t>();
  l.source = j.at("source").get<std::string>();
  return l;
}

json block_to_json(const BlockPlan& b) {
  json layers = json::array();
  for (const auto& l : b.layers) layers.push_back(layer_to_json(l));
  return json{{"name", b.name},
              {"index", b.index},
              {"in_channels", b.in_channels},
              {"out_channels", b.out_channels},
              {"compression_width", b.compression_width},
              {"dense_widths", b.dense_widths},
              {"cardinalities", b.cardinalities},
              {"downsample", b.downsample},
              {"shortcut", shortcut_kind_str(b.shortcut)},
              {"layers", layers},
              {"param_total", b.param_total},
              {"flop_total", b.flop_total}};
}

BlockPlan block_from_json(const json& j) {
  BlockPlan b;
  b.name = j.at("name").get<std::string>();
  b.index = j.at("index").get<std::int64_t>();
  b.in_channels = j.at("in_channels").get<std::int64_t>();
  b.out_channels = j.at("out_channels").get<std::int64_t>();
  b.compression_width = j.at("compression_width").get<std::int64_t>();
  b.dense_widths = j.at("dense_widths").get<std::vector<std::int64_t>>();
  b.cardinalities = j.at("cardinalities").get<std::vector<std::int64_t>>();
  b.downsample = j.at("downsample").get<bool>();
  b.shortcut = shortcut_kind_from_str(j.at("shortcut").get<std::string>());
  for (const auto& l : j.at("layers")) b.layers.push_back(layer_from_json(l));
  b.param_total = j.at("param_total").get<std::int64_t>();
  b.flop_total = j.at("flop_total").get<std::int64_t>();
  return b;
}

}  // namespace

json plan_to_json(const NetworkPlan& p) {
  json stem = json::array(), blocks = json::array(), head = json::array();
  for (const auto& l : p.stem) stem.push_back(layer_to_json(l));
  for (const auto& b : p.blocks) blocks.push_back(block_to_json(b));
  for (const auto& l : p.head) head.push_back(layer_to_json(l));
  return json{{"config", arch_config_to_json(p.config)},
              {"stem", stem},
              {"blocks", blocks},
              {"head", head},
              {"param_total", p.param_total},
              {"flop_total", p.flop_total}};
}

NetworkPlan plan_from_json(const json& j) {
  NetworkPlan p;
  p.config = arch_config_from_json(j.at("config"));
  for (const auto& l : j.at("stem")) p.stem.push_back(layer_from_json(l));
  for (const auto& b : j.at("blocks")) p.blocks.push_back(block_from_json(b));
  for (const auto& l : j.at("head")) p.head.push_back(layer_from_json(l));
  p.param_total = j.at("param_total").get<std::int64_t>();
  p.flop_total = j.at("flop_total").get<std::int64_t>();
  return p;
}

std::string render_plan(const NetworkPlan& p, bool block_trace) {
  std::ostringstream os;
  auto row = [&os](const LayerPlan& l) {
    os << "  " << l.name;
    for (std::size_t i = l.name.size(); i < 26; ++i) os << ' ';
    os << layer_kind_str(l.kind);
    for (std::size_t i = layer_kind_str(l.kind).size(); i < 16; ++i) os << ' ';
    os << l.in_channels << " -> " << l.out_channels << " @" << l.out_h << "x"
       << l.out_w;
    if (l.groups > 1) os << "  groups=" << l.groups;
    os << "  params=" << l.param_count << "  flops=" << l.flop_count << "\n";
  };
  os << "micro-dense plan: W0=" << p.config.stem_width
     << " alpha=" << p.config.alpha << " N=" << p.config.num_blocks
     << " n=" << p.config.dense_layers << " g_c=" << p.config.group_base
     << " r_a=" << p.config.compression_ratio.str() << "\n";
  os << "stem:\n";
  for (const auto& l : p.stem) row(l);
  for (const auto& b : p.blocks) {
    os << b.name << ": " << b.in_channels << " -> " << b.out_channels
       << (b.downsample ? "  (downsample)" : "") << "  shortcut="
       << shortcut_kind_str(b.shortcut) << "  params=" << b.param_total
       << "  flops=" << b.flop_total << "\n";
    if (block_trace)
      for (const auto& l : b.layers) row(l);
  }
  os << "head:\n";
  for (const auto& l : p.head) row(l);
  os << "total: params=" << p.param_total << " (" << std::fixed
     << p.param_total / 1.0e6 << "M)  flops/image=" << p.flop_total << "\n";
  return os.str();
}

}  // namespace microdense
