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

#ifndef MICRODENSE_LAYERS_HPP_
#define MICRODENSE_LAYERS_HPP_

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "microdense/autograd.hpp"
#include "microdense/tensor.hpp"

namespace microdense {

enum class Mode { Train, Eval };

/// Grouped 2-d convolution geometry. Input group g feeds output group g only.
struct ConvSpec {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  std::int64_t groups = 1;
  bool bias = false;

  void validate() const {
    if (in_channels < 1 || out_channels < 1)
      throw Error("conv: channels must be >= 1");
    if (groups < 1 || stride < 1 || padding < 0 || kernel_h < 1 || kernel_w < 1)
      throw Error("conv: invalid geometry (groups/stride/padding/kernel)");
    if (in_channels % groups != 0)
      throw Error("conv: in_channels " + std::to_string(in_channels) +
                  " not divisible by groups " + std::to_string(groups));
    if (out_channels % groups != 0)
      throw Error("conv: out_channels " + std::to_string(out_channels) +
                  " not divisible by groups " + std::to_string(groups));
  }

  Shape weight_shape() const {
    return {out_channels, in_channels / groups, kernel_h, kernel_w};
  }

  std::int64_t out_extent(std::int64_t in) const {
    return (in + 2 * padding - kernel_h) / stride + 1;
  }
};

enum class CountMode {
  Exact,        // element count of the allocated weight (+ bias) tensors
  PlainForm,    // c_u * (c_i * k_h * k_w + 1[bias]), groups ignored
  GroupedForm,  // G * (c_i/G) * ((c_u/G) * k_h * k_w + 1[bias])
};

/// Convolution parameter count. Exact mode counts what is actually stored:
/// c_u * (c_i/G) * k_h * k_w (+ c_u with bias). The grouped closed form is
/// an approximation of PlainForm / G: it books one bias per input channel
/// rather than per output channel, so it differs from Exact by a factor in
/// [1, 1 + G/(c_i*k_h*k_w)] whenever bias is set.
inline std::int64_t count_params(const ConvSpec& s,
                                 CountMode mode = CountMode::Exact) {
  s.validate();
  const std::int64_t k = static_cast<std::int64_t>(s.kernel_h) * s.kernel_w;
  switch (mode) {
    case CountMode::Exact:
      return s.out_channels * (s.in_channels / s.groups) * k +
             (s.bias ? s.out_channels : 0);
    case CountMode::PlainForm:
      return s.out_channels * (s.in_channels * k + (s.bias ? 1 : 0));
    case CountMode::GroupedForm:
      return s.groups * (s.in_channels / s.groups) *
             ((s.out_channels / s.groups) * k + (s.bias ? 1 : 0));
  }
  throw Error("count_params: bad mode");
}

namespace detail {

/// Gathers one (batch, group) patch matrix: rows index (channel, kh, kw),
/// columns index output positions. Padding reads as zero.
template <typename Scalar>
void im2col_group(const Tensor<Scalar>& x, std::int64_t b, std::int64_t g,
                  const ConvSpec& s, MatrixRM<Scalar>& col) {
  const std::int64_t H = x.dim(2), W = x.dim(3);
  const std::int64_t H_out = s.out_extent(H), W_out = s.out_extent(W);
  const std::int64_t cig = s.in_channels / s.groups;
  col.resize(cig * s.kernel_h * s.kernel_w, H_out * W_out);
  for (std::int64_t c = 0; c < cig; ++c) {
    const std::int64_t ch = g * cig + c;
    for (int kh = 0; kh < s.kernel_h; ++kh) {
      for (int kw = 0; kw < s.kernel_w; ++kw) {
        const std::int64_t row = (c * s.kernel_h + kh) * s.kernel_w + kw;
        for (std::int64_t oh = 0; oh < H_out; ++oh) {
          const std::int64_t ih = oh * s.stride - s.padding + kh;
          for (std::int64_t ow = 0; ow < W_out; ++ow) {
            const std::int64_t iw = ow * s.stride - s.padding + kw;
            Scalar v = Scalar(0);
            if (ih >= 0 && ih < H && iw >= 0 && iw < W) v = x.at(b, ch, ih, iw);
            col(row, oh * W_out + ow) = v;
          }
        }
      }
    }
  }
}

/// Scatter-adds a patch-matrix gradient back onto the input gradient.
template <typename Scalar>
void col2im_group(const MatrixRM<Scalar>& col, std::int64_t b, std::int64_t g,
                  const ConvSpec& s, Tensor<Scalar>& dx) {
  const std::int64_t H = dx.dim(2), W = dx.dim(3);
  const std::int64_t H_out = s.out_extent(H), W_out = s.out_extent(W);
  const std::int64_t cig = s.in_channels / s.groups;
  for (std::int64_t c = 0; c < cig; ++c) {
    const std::int64_t ch = g * cig + c;
    for (int kh = 0; kh < s.kernel_h; ++kh) {
      for (int kw = 0; kw < s.kernel_w; ++kw) {
        const std::int64_t row = (c * s.kernel_h + kh) * s.kernel_w + kw;
        for (std::int64_t oh = 0; oh < H_out; ++oh) {
          const std::int64_t ih = oh * s.stride - s.padding + kh;
          if (ih < 0 || ih >= H) continue;
          for (std::int64_t ow = 0; ow < W_out; ++ow) {
            const std::int64_t iw = ow * s.stride - s.padding + kw;
            if (iw < 0 || iw >= W) continue;
            dx.at(b, ch, ih, iw) += col(row, oh * W_out + ow);
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Grouped 2-d convolution, im2col + GEMM per (batch, group). Differentiable
/// with respect to the input, the weights, and the optional bias.
template <typename Scalar>
Value conv2d(Graph<Scalar>& g, Value x, Value w, std::optional<Value> b,
             const ConvSpec& spec, const std::string& name = "conv2d") {
  spec.validate();
  const auto& xt = g.out(x);
  if (xt.rank() != 4)
    throw Error(name + ": input must be (B,C,H,W), got " + shape_str(xt.shape()));
  if (xt.dim(1) != spec.in_channels)
    throw Error(name + ": input has " + std::to_string(xt.dim(1)) +
                " channels, spec wants " + std::to_string(spec.in_channels));
  if (g.out(w).shape() != spec.weight_shape())
    throw Error(name + ": weight shape " + shape_str(g.out(w).shape()) +
                " != expected " + shape_str(spec.weight_shape()));
  if (b && g.out(*b).shape() != Shape{spec.out_channels})
    throw Error(name + ": bias shape " + shape_str(g.out(*b).shape()) +
                " != (" + std::to_string(spec.out_channels) + ")");
  if (xt.dim(2) + 2 * spec.padding < spec.kernel_h ||
      xt.dim(3) + 2 * spec.padding < spec.kernel_w)
    throw Error(name + ": kernel " + std::to_string(spec.kernel_h) + "x" +
                std::to_string(spec.kernel_w) + " larger than padded input " +
                shape_str(xt.shape()));

  std::vector<Value> ins{x, w};
  if (b) ins.push_back(*b);

  auto fwd = [x, w, b, spec](Graph<Scalar>& g, int self) {
    const auto& in = g.out(x);
    const auto& wt = g.out(w);
    const std::int64_t B = in.dim(0);
    const std::int64_t H_out = spec.out_extent(in.dim(2));
    const std::int64_t W_out = spec.out_extent(in.dim(3));
    const std::int64_t cug = spec.out_channels / spec.groups;
    const std::int64_t row_len =
        (spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w;
    auto& out = g.out_of(self);
    out.reset({B, spec.out_channels, H_out, W_out});
    MatrixRM<Scalar> col;
    for (std::int64_t bi = 0; bi < B; ++bi) {
      for (std::int64_t gi = 0; gi < spec.groups; ++gi) {
        detail::im2col_group(in, bi, gi, spec, col);
        Eigen::Map<const MatrixRM<Scalar>> wg(wt.data() + gi * cug * row_len,
                                              cug, row_len);
        Eigen::Map<MatrixRM<Scalar>> og(
            out.data() + ((bi * spec.out_channels) + gi * cug) * H_out * W_out,
            cug, H_out * W_out);
        og.noalias() = wg * col;
      }
    }
    if (b) {
      const auto& bt = g.out(*b);
      for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t c = 0; c < spec.out_channels; ++c) {
          Eigen::Map<ArrayX<Scalar>> plane(
              out.data() + (bi * spec.out_channels + c) * H_out * W_out,
              H_out * W_out);
          plane += bt[c];
        }
    }
  };

  auto bwd = [x, w, b, spec](Graph<Scalar>& g, int self) {
    const auto& in = g.out(x);
    const auto& wt = g.out(w);
    const auto& dout = g.grad_of(self);
    auto& dx = g.grad(x);
    auto& dw = g.grad(w);
    const std::int64_t B = in.dim(0);
    const std::int64_t H_out = spec.out_extent(in.dim(2));
    const std::int64_t W_out = spec.out_extent(in.dim(3));
    const std::int64_t cug = spec.out_channels / spec.groups;
    const std::int64_t row_len =
        (spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w;
    MatrixRM<Scalar> col, dcol;
    for (std::int64_t bi = 0; bi < B; ++bi) {
      for (std::int64_t gi = 0; gi < spec.groups; ++gi) {
        detail::im2col_group(in, bi, gi, spec, col);
        Eigen::Map<const MatrixRM<Scalar>> wg(wt.data() + gi * cug * row_len,
                                              cug, row_len);
        Eigen::Map<MatrixRM<Scalar>> dwg(dw.data() + gi * cug * row_len, cug,
                                         row_len);
        Eigen::Map<const MatrixRM<Scalar>> dog(
            dout.data() + ((bi * spec.out_channels) + gi * cug) * H_out * W_out,
            cug, H_out * W_out);
        dwg.noalias() += dog * col.transpose();
        dcol.noalias() = wg.transpose() * dog;
        detail::col2im_group(dcol, bi, gi, spec, dx);
      }
    }
    if (b) {
      auto& db = g.grad(*b);
      for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t c = 0; c < spec.out_channels; ++c) {
          Eigen::Map<const ArrayX<Scalar>> plane(
              dout.data() + (bi * spec.out_channels + c) * H_out * W_out,
              H_out * W_out);
          db[c] += plane.sum();
        }
    }
  };

  return g.add_node(name, std::move(ins), std::move(fwd), std::move(bwd));
}

/// Per-channel batch normalization state that survives across graph builds:
/// running statistics plus the hyperparameters. Scale/shift enter the graph
/// as parameter leaves.
template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;
  Scalar momentum = Scalar(0.1);
  Scalar epsilon = Scalar(1e-5);

  explicit BatchNormState(std::int64_t channels)
      : running_mean({channels}), running_var({channels}) {
    running_var.fill(Scalar(1));
  }
};

/// Batch normalization over (batch, H, W) per channel. Train mode uses batch
/// statistics, updates the running estimates with momentum, and is
/// differentiable through the batch statistics; eval mode is a pure
/// per-element affine map using the running estimates.
template <typename Scalar>
Value batch_norm(Graph<Scalar>& g, Value x, Value gamma, Value beta,
                 BatchNormState<Scalar>* state, Mode mode,
                 const std::string& name = "batch_norm") {
  const auto& xt = g.out(x);
  if (xt.rank() != 4)
    throw Error(name + ": input must be (B,C,H,W), got " + shape_str(xt.shape()));
  const std::int64_t C = xt.dim(1);
  if (g.out(gamma).shape() != Shape{C} || g.out(beta).shape() != Shape{C})
    throw Error(name + ": scale/shift must have shape (" + std::to_string(C) +
                ")");
  if (state->running_mean.shape() != Shape{C})
    throw Error(name + ": state holds " +
                std::to_string(state->running_mean.dim(0)) +
                " channels, input has " + std::to_string(C));

  // Batch statistics captured at forward time for the backward pass.
  struct Cache {
    Tensor<Scalar> mean, var;
  };
  auto cache = std::make_shared<Cache>();

  auto fwd = [x, gamma, beta, state, mode, cache](Graph<Scalar>& g, int self) {
    const auto& in = g.out(x);
    const auto& gm = g.out(gamma);
    const auto& bt = g.out(beta);
    const std::int64_t B = in.dim(0), C = in.dim(1), H = in.dim(2),
                       W = in.dim(3);
    const std::int64_t M = B * H * W;
    auto& out = g.out_of(self);
    out.reset(in.shape());
    if (mode == Mode::Train) {
      cache->mean.reset({C});
      cache->var.reset({C});
      for (std::int64_t c = 0; c < C; ++c) {
        Scalar mu = 0;
        for (std::int64_t b = 0; b < B; ++b) {
          Eigen::Map<const ArrayX<Scalar>> plane(
              in.data() + (b * C + c) * H * W, H * W);
          mu += plane.sum();
        }
        mu /= Scalar(M);
        Scalar var = 0;
        for (std::int64_t b = 0; b < B; ++b) {
          Eigen::Map<const ArrayX<Scalar>> plane(
              in.data() + (b * C + c) * H * W, H * W);
          var += (plane - mu).square().sum();
        }
        var /= Scalar(M);
        cache->mean[c] = mu;
        cache->var[c] = var;
        const Scalar inv_std = Scalar(1) / std::sqrt(var + state->epsilon);
        for (std::int64_t b = 0; b < B; ++b) {
          Eigen::Map<const ArrayX<Scalar>> plane(
              in.data() + (b * C + c) * H * W, H * W);
          Eigen::Map<ArrayX<Scalar>> oplane(out.data() + (b * C + c) * H * W,
                                            H * W);
          oplane = (plane - mu) * inv_std * gm[c] + bt[c];
        }
        // Unbiased variance feeds the running estimate.
        const Scalar run_var = M > 1 ? var * Scalar(M) / Scalar(M - 1) : var;
        state->running_mean[c] =
            (Scalar(1) - state->momentum) * state->running_mean[c] +
            state->momentum * mu;
        state->running_var[c] =
            (Scalar(1) - state->momentum) * state->running_var[c] +
            state->momentum * run_var;
      }
    } else {
      for (std::int64_t c = 0; c < C; ++c) {
        const Scalar inv_std =
            Scalar(1) / std::sqrt(state->running_var[c] + state->epsilon);
        for (std::int64_t b = 0; b < B; ++b) {
          Eigen::Map<const ArrayX<Scalar>> plane(
              in.data() + (b * C + c) * H * W, H * W);
          Eigen::Map<ArrayX<Scalar>> oplane(out.data() + (b * C + c) * H * W,
                                            H * W);
          oplane =
              (plane - state->running_mean[c]) * inv_std * gm[c] + bt[c];
        }
      }
    }
  };

  auto bwd = [x, gamma, beta, state, mode, cache](Graph<Scalar>& g, int self) {
    const auto& in = g.out(x);
    const auto& gm = g.out(gamma);
    const auto& dout = g.grad_of(self);
    auto& dx = g.grad(x);
    auto& dgamma = g.grad(gamma);
    auto& dbeta = g.grad(beta);
    const std::int64_t B = in.dim(0), C = in.dim(1), H = in.dim(2),
                       W = in.dim(3);
    const std::int64_t M = B * H * W;
    for (std::int64_t c = 0; c < C; ++c) {
      const Scalar mu =
          mode == Mode::Train ? cache->mean[c] : state->running_mean[c];
      const Scalar var =
          mode == Mode::Train ? cache->var[c] : state->running_var[c];
      const Scalar inv_std = Scalar(1) / std::sqrt(var + state->epsilon);
      Scalar sum_dy = 0, sum_dy_xhat = 0;
      for (std::int64_t b = 0; b < B; ++b) {
        Eigen::Map<const ArrayX<Scalar>> xp(in.data() + (b * C + c) * H * W,
                                            H * W);
        Eigen::Map<const ArrayX<Scalar>> dyp(
            dout.data() + (b * C + c) * H * W, H * W);
        sum_dy += dyp.sum();
        sum_dy_xhat += (dyp * (xp - mu) * inv_std).sum();
      }
      dgamma[c] += sum_dy_xhat;
      dbeta[c] += sum_dy;
      for (std::int64_t b = 0; b < B; ++b) {
        Eigen::Map<const ArrayX<Scalar>> xp(in.data() + (b * C + c) * H * W,
                                            H * W);
        Eigen::Map<const ArrayX<Scalar>> dyp(
            dout.data() + (b * C + c) * H * W, H * W);
        Eigen::Map<ArrayX<Scalar>> dxp(dx.data() + (b * C + c) * H * W, H * W);
        if (mode == Mode::Train) {
          // d/dx through the batch mean and variance.
          dxp += gm[c] * inv_std *
                 (dyp - sum_dy / Scalar(M) -
                  (xp - mu) * inv_std * sum_dy_xhat / Scalar(M));
        } else {
          dxp += gm[c] * inv_std * dyp;
        }
      }
    }
  };

  return g.add_node(name, {x, gamma, beta}, std::move(fwd), std::move(bwd));
}

template <typename Scalar>
Value relu(Graph<Scalar>& g, Value x, const std::string& name = "relu") {
  return g.add_node(
      name, {x},
      [x](Graph<Scalar>& g, int self) {
        auto& o = g.out_of(self);
        o.reset(g.out(x).shape());
        o.array() = g.out(x).array().max(Scalar(0));
      },
      [x](Graph<Scalar>& g, int self) {
        g.grad(x).array() +=
            g.grad_of(self).array() *
            (g.out(x).array() > Scalar(0)).template cast<Scalar>();
      });
}

template <typename Scalar>
Value sigmoid(Graph<Scalar>& g, Value x, const std::string& name = "sigmoid") {
  return g.add_node(
      name, {x},
      [x](Graph<Scalar>& g, int self) {
        auto& o = g.out_of(self);
        o.reset(g.out(x).shape());
        o.array() = Scalar(1) / (Scalar(1) + (-g.out(x).array()).exp());
      },
      [x](Graph<Scalar>& g, int self) {
        auto s = g.out_of(self).array();
        g.grad(x).array() += g.grad_of(self).array() * s * (Scalar(1) - s);
      });
}

/// Channel concatenation; inputs must agree on batch and spatial extents.
/// Gradient slices route back to their sources.
template <typename Scalar>
Value concat_channels(Graph<Scalar>& g, const std::vector<Value>& xs,
                      const std::string& name = "concat") {
  if (xs.empty()) throw Error(name + ": needs at least one input");
  const auto& first = g.out(xs[0]);
  if (first.rank() != 4)
    throw Error(name + ": inputs must be (B,C,H,W)");
  std::int64_t total_c = 0;
  for (auto v : xs) {
    const auto& t = g.out(v);
    if (t.rank() != 4 || t.dim(0) != first.dim(0) || t.dim(2) != first.dim(2) ||
        t.dim(3) != first.dim(3))
      throw Error(name + ": input shape " + shape_str(t.shape()) +
                  " incompatible with " + shape_str(first.shape()));
    total_c += t.dim(1);
  }
  auto fwd = [xs, total_c](Graph<Scalar>& g, int self) {
    const auto& first = g.out(xs[0]);
    const std::int64_t B = first.dim(0), H = first.dim(2), W = first.dim(3);
    auto& out = g.out_of(self);
    out.reset({B, total_c, H, W});
    for (std::int64_t b = 0; b < B; ++b) {
      std::int64_t coff = 0;
      for (auto v : xs) {
        const auto& t = g.out(v);
        const std::int64_t n = t.dim(1) * H * W;
        std::copy(t.data() + b * n, t.data() + (b + 1) * n,
                  out.data() + (b * total_c + coff) * H * W);
        coff += t.dim(1);
      }
    }
  };
  auto bwd = [xs, total_c](Graph<Scalar>& g, int self) {
    const auto& dout = g.grad_of(self);
    const auto& first = g.out(xs[0]);
    const std::int64_t B = first.dim(0), H = first.dim(2), W = first.dim(3);
    for (std::int64_t b = 0; b < B; ++b) {
      std::int64_t coff = 0;
      for (auto v : xs) {
        auto& dx = g.grad(v);
        const std::int64_t n = dx.dim(1) * H * W;
        Eigen::Map<ArrayX<Scalar>> dst(dx.data() + b * n, n);
        Eigen::Map<const ArrayX<Scalar>> src(
            dout.data() + (b * total_c + coff) * H * W, n);
        dst += src;
        coff += dx.dim(1);
      }
    }
  };
  return g.add_node(name, xs, std::move(fwd), std::move(bwd));
}

/// Identity-mapping shortcut for widened outputs: x is zero-padded along
/// channels to match y, then added. Gradient to x is the leading channel
/// slice of the upstream gradient.
template <typename Scalar>
Value residual_add_zero_pad(Graph<Scalar>& g, Value x, Value y,
                            const std::string& name = "residual_add") {
  const auto& xt = g.out(x);
  const auto& yt = g.out(y);
  if (xt.rank() != 4 || yt.rank() != 4)
    throw Error(name + ": inputs must be (B,C,H,W)");
  if (xt.dim(0) != yt.dim(0) || xt.dim(2) != yt.dim(2) || xt.dim(3) != yt.dim(3))
    throw Error(name + ": batch/spatial mismatch " + shape_str(xt.shape()) +
                " vs " + shape_str(yt.shape()));
  if (yt.dim(1) < xt.dim(1))
    throw Error(name + ": shortcut has " + std::to_string(xt.dim(1)) +
                " channels but main path only " + std::to_string(yt.dim(1)));
  auto fwd = [x, y](Graph<Scalar>& g, int self) {
    const auto& xs = g.out(x);
    const auto& ys = g.out(y);
    const std::int64_t B = ys.dim(0), Cy = ys.dim(1), Cx = xs.dim(1),
                       H = ys.dim(2), W = ys.dim(3);
    auto& out = g.out_of(self);
    out = ys;
    for (std::int64_t b = 0; b < B; ++b) {
      Eigen::Map<ArrayX<Scalar>> head(out.data() + b * Cy * H * W, Cx * H * W);
      Eigen::Map<const ArrayX<Scalar>> xv(xs.data() + b * Cx * H * W,
                                          Cx * H * W);
      head += xv;
    }
  };
  auto bwd = [x, y](Graph<Scalar>& g, int self) {
    const auto& dout = g.grad_of(self);
    auto& dx = g.grad(x);
    auto& dy = g.grad(y);
    dy.array() += dout.array();
    const std::int64_t B = dout.dim(0), Cy = dout.dim(1), Cx = dx.dim(1),
                       H = dout.dim(2), W = dout.dim(3);
    for (std::int64_t b = 0; b < B; ++b) {
      Eigen::Map<ArrayX<Scalar>> dxv(dx.data() + b * Cx * H * W, Cx * H * W);
      Eigen::Map<const ArrayX<Scalar>> head(dout.data() + b * Cy * H * W,
                                            Cx * H * W);
      dxv += head;
    }
  };
  return g.add_node(name, {x, y}, std::move(fwd), std::move(bwd));
}

/// 2x2 average pooling with stride 2, no padding.
template <typename Scalar>
Value avg_pool_stride2(Graph<Scalar>& g, Value x,
                       const std::string& name = "avg_pool2") {
  const auto& xt = g.out(x);
  if (xt.rank() != 4 || xt.dim(2) < 2 || xt.dim(3) < 2)
    throw Error(name + ": input must be (B,C,H>=2,W>=2), got " +
                shape_str(xt.shape()));
  auto fwd = [x](Graph<Scalar>& g, int self) {
    const auto& in = g.out(x);
    const std::int64_t B = in.dim(0), C = in.dim(1), H = in.dim(2),
                       W = in.dim(3);
    const std::int64_t Ho = (H - 2) / 2 + 1, Wo = (W - 2) / 2 + 1;
    auto& out = g.out_of(self);
    out.reset({B, C, Ho, Wo});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t oh = 0; oh < Ho; ++oh)
          for (std::int64_t ow = 0; ow < Wo; ++ow)
            out.at(b, c, oh, ow) =
                (in.at(b, c, 2 * oh, 2 * ow) + in.at(b, c, 2 * oh, 2 * ow + 1) +
                 in.at(b, c, 2 * oh + 1, 2 * ow) +
                 in.at(b, c, 2 * oh + 1, 2 * ow + 1)) /
                Scalar(4);
  };
  auto bwd = [x](Graph<Scalar>& g, int self) {
    const auto& dout = g.grad_of(self);
    auto& dx = g.grad(x);
    const std::int64_t B = dout.dim(0), C = dout.dim(1), Ho = dout.dim(2),
                       Wo = dout.dim(3);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t oh = 0; oh < Ho; ++oh)
          for (std::int64_t ow = 0; ow < Wo; ++ow) {
            const Scalar v = dout.at(b, c, oh, ow) / Scalar(4);
            dx.at(b, c, 2 * oh, 2 * ow) += v;
            dx.at(b, c, 2 * oh, 2 * ow + 1) += v;
            dx.at(b, c, 2 * oh + 1, 2 * ow) += v;
            dx.at(b, c, 2 * oh + 1, 2 * ow + 1) += v;
          }
  };
  return g.add_node(name, {x}, std::move(fwd), std::move(bwd));
}

/// (B,C,H,W) -> (B,C) spatial mean.
template <typename Scalar>
Value global_avg_pool(Graph<Scalar>& g, Value x,
                      const std::string& name = "global_avg_pool") {
  if (g.out(x).rank() != 4)
    throw Error(name + ": input must be (B,C,H,W), got " +
                shape_str(g.out(x).shape()));
  auto fwd = [x](Graph<Scalar>& g, int self) {
    const auto& in = g.out(x);
    const std::int64_t B = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
    auto& out = g.out_of(self);
    out.reset({B, C});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) {
        Eigen::Map<const ArrayX<Scalar>> plane(in.data() + (b * C + c) * HW,
                                               HW);
        out[b * C + c] = plane.sum() / Scalar(HW);
      }
  };
  auto bwd = [x](Graph<Scalar>& g, int self) {
    const auto& dout = g.grad_of(self);
    auto& dx = g.grad(x);
    const std::int64_t B = dx.dim(0), C = dx.dim(1), HW = dx.dim(2) * dx.dim(3);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) {
        Eigen::Map<ArrayX<Scalar>> plane(dx.data() + (b * C + c) * HW, HW);
        plane += dout[b * C + c] / Scalar(HW);
      }
  };
  return g.add_node(name, {x}, std::move(fwd), std::move(bwd));
}

/// y = x W^T + b with x (B,D), W (out,D), optional b (out).
template <typename Scalar>
Value linear(Graph<Scalar>& g, Value x, Value w, std::optional<Value> b,
             const std::string& name = "linear") {
  const auto& xt = g.out(x);
  const auto& wt = g.out(w);
  if (xt.rank() != 2 || wt.rank() != 2 || xt.dim(1) != wt.dim(1))
    throw Error(name + ": x " + shape_str(xt.shape()) + " and W " +
                shape_str(wt.shape()) + " do not compose");
  if (b && g.out(*b).shape() != Shape{wt.dim(0)})
    throw Error(name + ": bias shape mismatch");
  std::vector<Value> ins{x, w};
  if (b) ins.push_back(*b);
  auto fwd = [x, w, b](Graph<Scalar>& g, int self) {
    const auto& xt = g.out(x);
    const auto& wt = g.out(w);
    const std::int64_t B = xt.dim(0), D = xt.dim(1), O = wt.dim(0);
    auto& out = g.out_of(self);
    out.reset({B, O});
    out.matrix(B, O).noalias() = xt.matrix(B, D) * wt.matrix(O, D).transpose();
    if (b) out.matrix(B, O).rowwise() += g.out(*b).matrix(1, O).row(0);
  };
  auto bwd = [x, w, b](Graph<Scalar>& g, int self) {
    const auto& xt = g.out(x);
    const auto& wt = g.out(w);
    const auto& dout = g.grad_of(self);
    const std::int64_t B = xt.dim(0), D = xt.dim(1), O = wt.dim(0);
    g.grad(x).matrix(B, D).noalias() += dout.matrix(B, O) * wt.matrix(O, D);
    g.grad(w).matrix(O, D).noalias() +=
        dout.matrix(B, O).transpose() * xt.matrix(B, D);
    if (b)
      g.grad(*b).matrix(1, O) += dout.matrix(B, O).colwise().sum();
  };
  return g.add_node(name, std::move(ins), std::move(fwd), std::move(bwd));
}

/// Mean over the batch of -log softmax(logits)[label], stabilized by
/// max-subtraction. Gradient is (softmax - onehot) / B.
template <typename Scalar>
Value softmax_cross_entropy(Graph<Scalar>& g, Value logits,
                            std::vector<int> labels,
                            const std::string& name = "softmax_ce") {
  const auto& lt = g.out(logits);
  if (lt.rank() != 2)
    throw Error(name + ": logits must be (B,C), got " + shape_str(lt.shape()));
  const std::int64_t B = lt.dim(0), C = lt.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B)
    throw Error(name + ": " + std::to_string(labels.size()) + " labels for " +
                std::to_string(B) + " rows");
  for (int l : labels)
    if (l < 0 || l >= C)
      throw Error(name + ": label " + std::to_string(l) + " out of range [0," +
                  std::to_string(C) + ")");

  auto softmax_rows = [](const Tensor<Scalar>& t) {
    const std::int64_t B = t.dim(0), C = t.dim(1);
    MatrixRM<Scalar> p(B, C);
    for (std::int64_t b = 0; b < B; ++b) {
      Eigen::Map<const ArrayX<Scalar>> row(t.data() + b * C, C);
      const Scalar mx = row.maxCoeff();
      ArrayX<Scalar> e = (row - mx).exp();
      p.row(b) = (e / e.sum()).matrix().transpose();
    }
    return p;
  };

  auto fwd = [logits, labels, softmax_rows](Graph<Scalar>& g, int self) {
    const auto& lt = g.out(logits);
    const std::int64_t B = lt.dim(0);
    MatrixRM<Scalar> p = softmax_rows(lt);
    Scalar loss = 0;
    for (std::int64_t b = 0; b < B; ++b)
      loss -= std::log(p(b, labels[static_cast<std::size_t>(b)]));
    auto& out = g.out_of(self);
    out.reset({1});
    out[0] = loss / Scalar(B);
  };
  auto bwd = [logits, labels, softmax_rows](Graph<Scalar>& g, int self) {
    const auto& lt = g.out(logits);
    const std::int64_t B = lt.dim(0), C = lt.dim(1);
    const Scalar go = g.grad_of(self)[0];
    MatrixRM<Scalar> p = softmax_rows(lt);
    auto& dl = g.grad(logits);
    for (std::int64_t b = 0; b < B; ++b) {
      p(b, labels[static_cast<std::size_t>(b)]) -= Scalar(1);
      Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> row(
          dl.data() + b * C, C);
      row += go * p.row(b) / Scalar(B);
    }
  };
  return g.add_node(name, {logits}, std::move(fwd), std::move(bwd));
}

/// Composite Conv(s x s) -> BatchNorm -> ReLU stack.
template <typename Scalar>
Value c_br(Graph<Scalar>& g, Value x, Value w, Value gamma, Value beta,
           BatchNormState<Scalar>* bn, const ConvSpec& spec, Mode mode,
           const std::string& name = "c_br") {
  Value c = conv2d(g, x, w, std::nullopt, spec, name + "/conv");
  Value n = batch_norm(g, c, gamma, beta, bn, mode, name + "/bn");
  return relu(g, n, name + "/relu");
}

}  // namespace microdense

#endif  // MICRODENSE_LAYERS_HPP_
