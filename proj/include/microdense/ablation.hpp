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

#ifndef MICRODENSE_ABLATION_HPP_
#define MICRODENSE_ABLATION_HPP_

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "microdense/network.hpp"

namespace microdense {

/// The aggregation families compared by the ablation harness.
enum class AggregationKind { Plain, Highway, Residual, Dense, Inception, MicroDense };

inline std::string aggregation_kind_str(AggregationKind k) {
  switch (k) {
    case AggregationKind::Plain: return "plain";
    case AggregationKind::Highway: return "highway";
    case AggregationKind::Residual: return "residual";
    case AggregationKind::Dense: return "dense";
    case AggregationKind::Inception: return "inception";
    case AggregationKind::MicroDense: return "micro-dense";
  }
  throw Error("aggregation_kind_str: bad kind");
}

inline AggregationKind aggregation_kind_from_str(const std::string& s) {
  if (s == "plain") return AggregationKind::Plain;
  if (s == "highway") return AggregationKind::Highway;
  if (s == "residual") return AggregationKind::Residual;
  if (s == "dense") return AggregationKind::Dense;
  if (s == "inception") return AggregationKind::Inception;
  if (s == "micro-dense") return AggregationKind::MicroDense;
  throw Error("aggregation_kind_from_str: unknown kind '" + s + "'");
}

struct AblationOptions {
  int cells_per_stage = 3;
  int stages = 3;
  std::int64_t num_classes = 10;
  std::int64_t input_size = 32;
  std::int64_t input_channels = 3;
  int dense_layers = 3;                  // micro-dense n
  GrowthMode growth = GrowthMode::Pyramidal;
  Rational compression_ratio{1, 4};
  double budget_tolerance = 0.02;
};

namespace detail {

/// Channel-tracking wrapper so a variant's structure can run either as
/// parameter allocation (no graph) or as graph emission, from one
/// definition.
struct VT {
  Value v{};
  std::int64_t channels = 0;
};

template <typename Scalar>
class VariantCtx {
public:
  // Allocation pass. When `init` is false, weights are left zero (used by
  // the budget solver, which only counts elements).
  VariantCtx(NetworkInstance<Scalar>& net, Rng* rng, bool init)
      : net_(net), rng_(rng), init_(init), allocate_(true) {}
  // Emission pass over an existing graph.
  VariantCtx(NetworkInstance<Scalar>& net, Graph<Scalar>& g, Mode mode)
      : net_(net), g_(&g), mode_(mode), allocate_(false) {}

  bool allocating() const { return allocate_; }

  VT input(Value v, std::int64_t channels) { return VT{v, channels}; }

  VT conv_bn(const std::string& name, VT x, std::int64_t c_out, int k,
             int stride, int pad, std::int64_t groups, bool with_relu) {
    ConvSpec spec{x.channels, c_out, k, k, stride, pad, groups, false};
    if (allocate_) {
      const std::int64_t fan_in = (x.channels / groups) * k * k;
      net_.params.create(
          name + "/w",
          init_ ? he_normal<Scalar>(*rng_, spec.weight_shape(), fan_in)
                : Tensor<Scalar>(spec.weight_shape()),
          false);
      net_.params.create(name + "/bn_g",
                         Tensor<Scalar>::full({c_out}, Scalar(1)), true);
      net_.params.create(name + "/bn_b", Tensor<Scalar>({c_out}), true);
      net_.make_bn(name + "/bn", c_out);
      return VT{{}, c_out};
    }
    Value w = g_->param(net_.params.get(name + "/w"));
    Value c = conv2d(*g_, x.v, w, std::nullopt, spec, name + "/conv");
    Value gm = g_->param(net_.params.get(name + "/bn_g"));
    Value bt = g_->param(net_.params.get(name + "/bn_b"));
    Value n = batch_norm(*g_, c, gm, bt, &net_.bn(name + "/bn"), mode_, name);
    return VT{with_relu ? relu(*g_, n, name + "/relu") : n, c_out};
  }

  /// 1x1 conv with bias followed by a logistic gate.
  VT gate(const std::string& name, VT x, Scalar bias_init) {
    ConvSpec spec{x.channels, x.channels, 1, 1, 1, 0, 1, true};
    if (allocate_) {
      net_.params.create(
          name + "/w",
          init_ ? he_normal<Scalar>(*rng_, spec.weight_shape(), x.channels)
                : Tensor<Scalar>(spec.weight_shape()),
          false);
      net_.params.create(name + "/b",
                         Tensor<Scalar>::full({x.channels}, bias_init), true);
      return VT{{}, x.channels};
    }
    Value w = g_->param(net_.params.get(name + "/w"));
    Value b = g_->param(net_.params.get(name + "/b"));
    Value c = conv2d(*g_, x.v, w, b, spec, name + "/conv");
    return VT{sigmoid(*g_, c, name + "/gate"), x.channels};
  }

  VT add(VT a, VT b) {
    if (allocate_) return VT{{}, a.channels};
    return VT{microdense::add(*g_, a.v, b.v), a.channels};
  }
  VT mul(VT a, VT b) {
    if (allocate_) return VT{{}, a.channels};
    return VT{microdense::mul(*g_, a.v, b.v), a.channels};
  }
  VT pool2(VT x) {
    if (allocate_) return x;
    return VT{avg_pool_stride2(*g_, x.v), x.channels};
  }
  VT concat(const std::vector<VT>& xs) {
    std::int64_t c = 0;
    for (const auto& x : xs) c += x.channels;
    if (allocate_) return VT{{}, c};
    std::vector<Value> vs;
    vs.reserve(xs.size());
    for (const auto& x : xs) vs.push_back(x.v);
    return VT{concat_channels(*g_, vs), c};
  }
  VT residual_pad(VT shortcut, VT main) {
    if (allocate_) return VT{{}, main.channels};
    return VT{residual_add_zero_pad(*g_, shortcut.v, main.v), main.channels};
  }

  VT head(const std::string& name, VT x, std::int64_t classes) {
    if (allocate_) {
      net_.params.create(name + "/bn_g",
                         Tensor<Scalar>::full({x.channels}, Scalar(1)), true);
      net_.params.create(name + "/bn_b", Tensor<Scalar>({x.channels}), true);
      net_.make_bn(name + "/bn", x.channels);
      net_.params.create(
          name + "/linear/w",
          init_ ? he_normal<Scalar>(*rng_, {classes, x.channels}, x.channels)
                : Tensor<Scalar>({classes, x.channels}),
          false);
      net_.params.create(name + "/linear/b", Tensor<Scalar>({classes}), true);
      return VT{{}, classes};
    }
    Value gm = g_->param(net_.params.get(name + "/bn_g"));
    Value bt = g_->param(net_.params.get(name + "/bn_b"));
    Value h = batch_norm(*g_, x.v, gm, bt, &net_.bn(name + "/bn"), mode_, name);
    h = relu(*g_, h, name + "/relu");
    h = global_avg_pool(*g_, h);
    Value w = g_->param(net_.params.get(name + "/linear/w"));
    Value b = g_->param(net_.params.get(name + "/linear/b"));
    return VT{linear(*g_, h, w, b, name + "/linear"), classes};
  }

private:
  NetworkInstance<Scalar>& net_;
  Graph<Scalar>* g_ = nullptr;
  Mode mode_ = Mode::Train;
  Rng* rng_ = nullptr;
  bool init_ = true;
  bool allocate_ = false;
};

/// Shared scaffold for the non-micro-dense families: C3-B stem, `stages`
/// stages of `cells_per_stage` cells at per-stage widths, average-pool
/// downsampling plus a 1x1 width adapter between stages, BN/ReLU/GAP/linear
/// head.
template <typename Scalar>
VT variant_body(VariantCtx<Scalar>& ctx, AggregationKind kind,
                const AblationOptions& opt,
                const std::vector<std::int64_t>& stage_widths, VT images) {
  const std::string tag = aggregation_kind_str(kind);
  VT h = ctx.conv_bn(tag + "/stem", images, stage_widths[0], 3, 1, 1, 1, false);
  for (int s = 0; s < opt.stages; ++s) {
    const std::string sp = tag + "/stage" + std::to_string(s);
    const std::int64_t w = stage_widths[static_cast<std::size_t>(s)];
    if (s > 0) {
      h = ctx.pool2(h);
      h = ctx.conv_bn(sp + "/adapt", h, w, 1, 1, 0, 1, true);
    }
    if (kind == AggregationKind::Dense) {
      const std::int64_t growth = std::max<std::int64_t>(4, w / 2);
      std::vector<VT> feats{h};
      for (int c = 0; c < opt.cells_per_stage; ++c) {
        VT cat = feats.size() == 1 ? feats[0] : ctx.concat(feats);
        feats.push_back(ctx.conv_bn(sp + "/cell" + std::to_string(c), cat,
                                    growth, 3, 1, 1, 1, true));
      }
      h = ctx.conv_bn(sp + "/transition", ctx.concat(feats), w, 1, 1, 0, 1,
                      true);
      continue;
    }
    for (int c = 0; c < opt.cells_per_stage; ++c) {
      const std::string cp = sp + "/cell" + std::to_string(c);
      switch (kind) {
        case AggregationKind::Plain:
          h = ctx.conv_bn(cp + "/conv", h, w, 3, 1, 1, 1, true);
          break;
        case AggregationKind::Residual: {
          VT main = ctx.conv_bn(cp + "/conv", h, w, 3, 1, 1, 1, true);
          h = ctx.residual_pad(h, main);
          break;
        }
        case AggregationKind::Highway: {
          VT main = ctx.conv_bn(cp + "/conv", h, w, 3, 1, 1, 1, true);
          VT carry = ctx.gate(cp + "/carry", h, Scalar(-1));
          VT transform = ctx.gate(cp + "/transform", h, Scalar(0));
          h = ctx.add(ctx.mul(h, carry), ctx.mul(main, transform));
          break;
        }
        case AggregationKind::Inception: {
          const std::int64_t b23 = std::max<std::int64_t>(1, w / 3);
          const std::int64_t b1 = w - 2 * b23;
          VT x1 = ctx.conv_bn(cp + "/b1", h, b1, 1, 1, 0, 1, true);
          VT x2 = ctx.conv_bn(cp + "/b3", h, b23, 3, 1, 1, 1, true);
          VT t = ctx.conv_bn(cp + "/b5a", h, b23, 3, 1, 1, 1, true);
          VT x3 = ctx.conv_bn(cp + "/b5b", t, b23, 3, 1, 1, 1, true);
          h = ctx.concat({x1, x2, x3});
          break;
        }
        default:
          throw Error("variant_body: unhandled kind");
      }
    }
  }
  return ctx.head(tag + "/head", h, opt.num_classes);
}

}  // namespace detail

/// Stage widths for the shared scaffold at a real-valued width multiplier:
/// (8, 16, 32, ...) scaled and clamped to >= 4.
inline std::vector<std::int64_t> variant_stage_widths(double multiplier,
                                                      int stages) {
  std::vector<std::int64_t> w;
  std::int64_t base = 8;
  for (int s = 0; s < stages; ++s) {
    w.push_back(std::max<std::int64_t>(
        4, static_cast<std::int64_t>(std::llround(multiplier * static_cast<double>(base)))));
    base *= 2;
  }
  return w;
}

/// Builds one aggregation-family network at explicit stage widths.
template <typename Scalar>
std::unique_ptr<NetworkInstance<Scalar>> build_aggregation_network(
    AggregationKind kind, const std::vector<std::int64_t>& stage_widths,
    const AblationOptions& opt, std::uint64_t seed, bool init_weights = true) {
  if (kind == AggregationKind::MicroDense)
    throw Error("build_aggregation_network: micro-dense goes through build_network");
  auto net = std::make_unique<NetworkInstance<Scalar>>();
  net->family = aggregation_kind_str(kind);
  net->config.num_classes = opt.num_classes;
  net->config.input_size = opt.input_size;
  net->config.input_channels = opt.input_channels;
  Rng rng(derive_seed(seed, 0xab1a7e));
  {
    detail::VariantCtx<Scalar> ctx(*net, &rng, init_weights);
    detail::variant_body(ctx, kind, opt, stage_widths,
                         detail::VT{{}, opt.input_channels});
  }
  net->builder = [kind, opt, stage_widths](NetworkInstance<Scalar>& n,
                                           Graph<Scalar>& g, Value images,
                                           Mode mode) {
    detail::VariantCtx<Scalar> ctx(n, g, mode);
    return detail::variant_body(ctx, kind, opt, stage_widths,
                                ctx.input(images, opt.input_channels))
        .v;
  };
  return net;
}

/// Micro-dense configuration used by the ablation harness: fixed macro
/// shape from the options, width driven by (stem width, alpha).
inline ArchConfig ablation_microdense_config(const AblationOptions& opt,
                                             std::int64_t stem_width,
                                             std::int64_t alpha, int n) {
  ArchConfig c;
  c.stem_width = stem_width;
  c.alpha = alpha;
  c.num_blocks = static_cast<std::int64_t>(opt.stages) * opt.cells_per_stage;
  c.dense_layers = n;
  c.group_base = 4;
  c.compression_ratio = opt.compression_ratio;
  c.stage_blocks.assign(static_cast<std::size_t>(opt.stages),
                        opt.cells_per_stage);
  c.num_classes = opt.num_classes;
  c.input_size = opt.input_size;
  c.input_channels = opt.input_channels;
  c.growth = opt.growth;
  return c;
}

struct BudgetSolution {
  std::int64_t params = 0;
  double multiplier = 0;          // conv families
  std::int64_t stem_width = 0;    // micro-dense
  std::int64_t alpha = 0;         // micro-dense
};

namespace detail {

inline void check_budget(std::int64_t best, std::int64_t budget, double tol) {
  const double rel = std::abs(static_cast<double>(best - budget)) /
                     static_cast<double>(budget);
  if (rel > tol)
    throw Error("budget " + std::to_string(budget) +
                " unreachable; nearest achievable parameter count is " +
                std::to_string(best));
}

}  // namespace detail

/// Solves stage widths for a conv-family variant to a parameter budget
/// within the configured tolerance, tie-breaking toward the smaller model.
template <typename Scalar>
BudgetSolution solve_variant_budget(AggregationKind kind, std::int64_t budget,
                                    const AblationOptions& opt) {
  auto count = [&](double m) {
    NetworkInstance<Scalar> probe;
    probe.family = "probe";
    detail::VariantCtx<Scalar> ctx(probe, nullptr, false);
    detail::variant_body(ctx, kind, opt, variant_stage_widths(m, opt.stages),
                         detail::VT{{}, opt.input_channels});
    return probe.params.total_elements();
  };
  double lo = 0.05, hi = 0.05;
  while (count(hi) < budget && hi < 512) hi *= 2;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (count(mid) < budget ? lo : hi) = mid;
  }
  // The count is a step function of the multiplier; scan the neighbourhood
  // for the closest step, preferring the smaller model on ties.
  BudgetSolution best;
  double best_err = 1e300;
  for (int i = -64; i <= 64; ++i) {
    const double m = hi * (1.0 + static_cast<double>(i) / 256.0);
    if (m <= 0) continue;
    const std::int64_t c = count(m);
    const double err = std::abs(static_cast<double>(c - budget));
    if (err < best_err || (err == best_err && c < best.params)) {
      best_err = err;
      best.params = c;
      best.multiplier = m;
    }
  }
  detail::check_budget(best.params, budget, opt.budget_tolerance);
  return best;
}

/// Solves (stem width, alpha) for a micro-dense ablation instance: the
/// widest stem whose zero-alpha plan fits, then alpha by bisection.
inline BudgetSolution solve_microdense_budget(std::int64_t budget,
                                              const AblationOptions& opt,
                                              int n) {
  auto count = [&](std::int64_t w0, std::int64_t alpha) {
    return plan_network(ablation_microdense_config(opt, w0, alpha, n))
        .param_total;
  };
  BudgetSolution best;
  double best_err = 1e300;
  for (std::int64_t w0 : {128, 96, 64, 48, 32, 24, 16, 12, 8, 4}) {
    std::int64_t base;
    try {
      base = count(w0, 0);
    } catch (const Error&) {
      continue;  // degenerate compression at this stem width
    }
    std::int64_t lo = 0, hi = 1;
    if (base < budget) {
      while (count(w0, hi) < budget && hi < (1 << 20)) hi *= 2;
      while (hi - lo > 1) {
        const std::int64_t mid = lo + (hi - lo) / 2;
        (count(w0, mid) < budget ? lo : hi) = mid;
      }
    } else {
      hi = 0;  // already at or above budget with no extra width
    }
    for (std::int64_t alpha : {lo, hi}) {
      const std::int64_t c = count(w0, alpha);
      const double err = std::abs(static_cast<double>(c - budget));
      if (err < best_err || (err == best_err && c < best.params)) {
        best_err = err;
        best.params = c;
        best.stem_width = w0;
        best.alpha = alpha;
      }
    }
  }
  if (best.stem_width == 0)
    throw Error("budget " + std::to_string(budget) +
                " unreachable for the micro-dense ablation config");
  detail::check_budget(best.params, budget, opt.budget_tolerance);
  return best;
}

/// Builds a network of the requested aggregation family whose parameter
/// total lands within the budget tolerance (width auto-scaled).
template <typename Scalar>
std::unique_ptr<NetworkInstance<Scalar>> build_ablation_variant(
    AggregationKind kind, std::int64_t budget, const AblationOptions& opt,
    std::uint64_t seed) {
  if (budget < 1) throw Error("build_ablation_variant: budget must be >= 1");
  if (kind == AggregationKind::MicroDense) {
    auto sol = solve_microdense_budget(budget, opt, opt.dense_layers);
    auto net = build_network<Scalar>(
        ablation_microdense_config(opt, sol.stem_width, sol.alpha,
                                   opt.dense_layers),
        seed);
    return net;
  }
  auto sol = solve_variant_budget<Scalar>(kind, budget, opt);
  return build_aggregation_network<Scalar>(
      kind, variant_stage_widths(sol.multiplier, opt.stages), opt, seed);
}

/// One budget-matched micro-dense instance per requested dense depth.
template <typename Scalar>
std::vector<std::unique_ptr<NetworkInstance<Scalar>>> dense_depth_sweep(
    const std::vector<int>& depths, std::int64_t budget,
    const AblationOptions& opt, std::uint64_t seed) {
  std::vector<std::unique_ptr<NetworkInstance<Scalar>>> out;
  for (int n : depths) {
    if (n < 1) throw Error("dense_depth_sweep: depths must be >= 1");
    auto sol = solve_microdense_budget(budget, opt, n);
    out.push_back(build_network<Scalar>(
        ablation_microdense_config(opt, sol.stem_width, sol.alpha, n), seed));
  }
  return out;
}

/// Budget-matched micro-dense instance with the requested dense-layer
/// growth mode (pyramidal widening vs. fixed c_j = c_1).
template <typename Scalar>
std::unique_ptr<NetworkInstance<Scalar>> fixed_vs_pyramidal_variant(
    GrowthMode mode, std::int64_t budget, const AblationOptions& opt,
    std::uint64_t seed) {
  AblationOptions o = opt;
  o.growth = mode;
  auto sol = solve_microdense_budget(budget, o, o.dense_layers);
  return build_network<Scalar>(
      ablation_microdense_config(o, sol.stem_width, sol.alpha, o.dense_layers),
      seed);
}

}  // namespace microdense

#endif  // MICRODENSE_ABLATION_HPP_
