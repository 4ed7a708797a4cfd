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

#ifndef MICRODENSE_TRAINER_HPP_
#define MICRODENSE_TRAINER_HPP_

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "microdense/checkpoint.hpp"
#include "microdense/data.hpp"
#include "microdense/network.hpp"

namespace microdense {

struct TrainConfig {
  double lr_max = 0.1;
  std::int64_t total_iters = 2000;  // N_a
  std::int64_t warmup_iters = 100;  // N_w (0 disables warmup)
  double momentum = 0.9;            // Nesterov, no dampening
  double weight_decay = 1e-4;       // skipped for decay-exempt parameters
  std::int64_t batch_size = 128;
  std::uint64_t seed = 1;
  std::int64_t eval_interval = 200;
  std::int64_t checkpoint_interval = 0;  // 0: only the final checkpoint
  bool augment = false;

  void validate() const {
    if (!(lr_max > 0)) throw Error("train config: lr_max must be > 0");
    if (total_iters < 1) throw Error("train config: total_iters must be >= 1");
    if (warmup_iters < 0 || warmup_iters > total_iters)
      throw Error("train config: need 0 <= warmup_iters <= total_iters");
    if (momentum < 0 || momentum >= 1)
      throw Error("train config: need 0 <= momentum < 1");
    if (weight_decay < 0) throw Error("train config: weight_decay must be >= 0");
    if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
  }
};

/// Warmup-scaled cosine schedule, composed exactly:
///   lr(i)    = lr_top(i) * (1 + cos(pi * i / N_a)) / 2
///   lr_top(i)= lr_max * i / N_w  for i in [0, N_w], else lr_max.
/// The cosine factor applies during warmup as well; both branches agree at
/// i = N_w. Computed in 64-bit.
inline double lr_schedule(std::int64_t i, const TrainConfig& c) {
  if (i < 0 || i > c.total_iters)
    throw Error("lr_schedule: iteration " + std::to_string(i) +
                " outside [0, " + std::to_string(c.total_iters) + "]");
  const double lr_top =
      (c.warmup_iters > 0 && i <= c.warmup_iters)
          ? c.lr_max * static_cast<double>(i) / static_cast<double>(c.warmup_iters)
          : c.lr_max;
  const double phase = 3.14159265358979323846 * static_cast<double>(i) /
                       static_cast<double>(c.total_iters);
  return lr_top * (1.0 + std::cos(phase)) / 2.0;
}

/// One SGD step with Nesterov momentum and selective weight decay:
///   g <- grad + lambda * value   (decay-exempt parameters skip the decay)
///   buf <- mu * buf + g
///   value <- value - lr * (g + mu * buf)
template <typename Scalar>
void sgd_step(ParameterStore<Scalar>& params, double lr, double mu,
              double lambda) {
  for (auto& p : params.all()) {
    for (std::int64_t i = 0; i < p.grad.size(); ++i)
      if (!std::isfinite(static_cast<double>(p.grad[i])))
        throw Error("sgd_step: non-finite gradient in parameter '" + p.name +
                    "'");
    const Scalar lrs = static_cast<Scalar>(lr);
    const Scalar mus = static_cast<Scalar>(mu);
    const Scalar lam = p.decay_exempt ? Scalar(0) : static_cast<Scalar>(lambda);
    auto v = p.value.array();
    auto g = p.grad.array();
    auto buf = p.momentum.array();
    // g_eff = g + lam * v; buf = mu*buf + g_eff; v -= lr*(g_eff + mu*buf)
    buf = mus * buf + (g + lam * v);
    v -= lrs * ((g + lam * v) + mus * buf);
  }
}

struct MetricsRow {
  std::int64_t iter = 0;
  double lr = 0;
  double train_loss = 0;
  std::optional<double> eval_acc;
  std::optional<double> eval_loss;
  std::int64_t wall_ms = 0;
};

struct RunMetrics {
  std::vector<MetricsRow> rows;
};

struct EvalResult {
  double accuracy = 0;
  double mean_loss = 0;
};

inline std::string format_metric(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// CSV schema: iter,lr,train_loss,eval_acc,eval_loss,wall_ms with the eval
/// fields empty off-interval.
inline std::string metrics_csv(const RunMetrics& m) {
  std::string out = "iter,lr,train_loss,eval_acc,eval_loss,wall_ms\n";
  for (const auto& r : m.rows) {
    out += std::to_string(r.iter) + "," + format_metric(r.lr) + "," +
           format_metric(r.train_loss) + ",";
    if (r.eval_acc) out += format_metric(*r.eval_acc);
    out += ",";
    if (r.eval_loss) out += format_metric(*r.eval_loss);
    out += "," + std::to_string(r.wall_ms) + "\n";
  }
  return out;
}

/// Top-1 accuracy (argmax ties broken toward the lowest class index) and
/// sample-weighted mean loss, in eval mode.
template <typename Scalar>
EvalResult evaluate(NetworkInstance<Scalar>& net, const Dataset& data,
                    std::int64_t batch_size = 256) {
  if (data.count() == 0) throw Error("evaluate: empty dataset");
  const Mode saved = net.mode;
  net.mode = Mode::Eval;
  std::int64_t correct = 0;
  double loss_sum = 0;
  std::vector<std::int64_t> order(static_cast<std::size_t>(data.count()));
  for (std::int64_t i = 0; i < data.count(); ++i)
    order[static_cast<std::size_t>(i)] = i;
  for (std::int64_t first = 0; first < data.count(); first += batch_size) {
    const std::size_t count = static_cast<std::size_t>(
        std::min(batch_size, data.count() - first));
    Batch b = make_batch(data, order, static_cast<std::size_t>(first), count,
                         false, 0);
    Graph<Scalar> g;
    Value x = g.input("images", b.images.template cast<Scalar>());
    Value logits = net.build_logits(g, x);
    Value loss = softmax_cross_entropy(g, logits, b.labels);
    const auto& lt = g.out(logits);
    const std::int64_t C = lt.dim(1);
    for (std::size_t k = 0; k < count; ++k) {
      int arg = 0;
      for (std::int64_t c = 1; c < C; ++c)
        if (lt[static_cast<std::int64_t>(k) * C + c] >
            lt[static_cast<std::int64_t>(k) * C + arg])
          arg = static_cast<int>(c);
      if (arg == b.labels[k]) ++correct;
    }
    loss_sum += static_cast<double>(g.out(loss)[0]) * static_cast<double>(count);
  }
  net.mode = saved;
  return {static_cast<double>(correct) / static_cast<double>(data.count()),
          loss_sum / static_cast<double>(data.count())};
}

struct TrainOutputs {
  std::string out_dir;  // empty: write nothing
  std::string resume_checkpoint;
  // Appended to every checkpoint (e.g. data normalization constants).
  std::vector<CheckpointEntry> extra_entries;
  nlohmann::json extra_meta = nlohmann::json::object();
};

namespace detail {

inline std::uint64_t batch_aug_seed(std::uint64_t seed, std::int64_t epoch,
                                    std::int64_t batch_index) {
  return derive_seed(seed, 0xa06, static_cast<std::uint64_t>(epoch),
                     static_cast<std::uint64_t>(batch_index));
}

template <typename Scalar>
double grad_l2_norm(const ParameterStore<Scalar>& params) {
  double acc = 0;
  for (const auto& p : params.all())
    for (std::int64_t i = 0; i < p.grad.size(); ++i)
      acc += static_cast<double>(p.grad[i]) * static_cast<double>(p.grad[i]);
  return std::sqrt(acc);
}

}  // namespace detail

/// Deterministic SGD training loop: seeded shuffling per epoch, one batch
/// prepared ahead on a worker thread (order is a pure function of the seed,
/// so prefetch timing cannot change results), metrics appended every
/// iteration, checkpoints at the configured interval and at the end.
template <typename Scalar>
RunMetrics train(NetworkInstance<Scalar>& net, const Dataset& train_data,
                 const Dataset* eval_data, const TrainConfig& config,
                 const TrainOutputs& outputs = {}) {
  config.validate();
  if (train_data.count() == 0) throw Error("train: empty dataset");

  namespace fs = std::filesystem;
  const bool writing = !outputs.out_dir.empty();
  std::ofstream csv;
  if (writing) {
    fs::create_directories(outputs.out_dir);
    csv.open(fs::path(outputs.out_dir) / "metrics.csv",
             std::ios::trunc);
    if (!csv) throw Error("train: cannot write metrics.csv in " + outputs.out_dir);
    csv << "iter,lr,train_loss,eval_acc,eval_loss,wall_ms\n";
  }

  std::int64_t start_iter = 0;
  if (!outputs.resume_checkpoint.empty()) {
    Checkpoint ck = read_checkpoint_file(outputs.resume_checkpoint);
    restore_network(net, ck, true);
    if (!ck.meta.contains("iteration"))
      throw Error("train: checkpoint has no iteration record, cannot resume");
    start_iter = ck.meta.at("iteration").get<std::int64_t>() + 1;
  }

  const std::int64_t batches_per_epoch =
      (train_data.count() + config.batch_size - 1) / config.batch_size;
  auto batch_for = [&](std::int64_t iter) {
    const std::int64_t epoch = iter / batches_per_epoch;
    const std::int64_t pos = iter % batches_per_epoch;
    const auto order = shuffled_indices(config.seed, epoch, train_data.count());
    const std::int64_t first = pos * config.batch_size;
    const std::size_t count = static_cast<std::size_t>(
        std::min(config.batch_size, train_data.count() - first));
    return make_batch(train_data, order, static_cast<std::size_t>(first), count,
                      config.augment,
                      detail::batch_aug_seed(config.seed, epoch, pos));
  };

  RunMetrics metrics;
  const auto t0 = std::chrono::steady_clock::now();
  net.mode = Mode::Train;

  std::future<Batch> next =
      std::async(std::launch::async, batch_for, start_iter);
  for (std::int64_t i = start_iter; i < config.total_iters; ++i) {
    Batch batch = next.get();
    if (i + 1 < config.total_iters)
      next = std::async(std::launch::async, batch_for, i + 1);

    const double lr = lr_schedule(i, config);
    net.params.zero_grad();
    Graph<Scalar> g;
    Value x = g.input("images", batch.images.template cast<Scalar>());
    Value logits = net.build_logits(g, x);
    Value loss = softmax_cross_entropy(g, logits, batch.labels);
    const double loss_value = static_cast<double>(g.out(loss)[0]);
    if (!std::isfinite(loss_value)) {
      g.backward(loss);
      throw Error("train: non-finite loss at iteration " + std::to_string(i) +
                  " (lr=" + format_metric(lr) + ", grad L2=" +
                  format_metric(detail::grad_l2_norm(net.params)) + ")");
    }
    g.backward(loss);
    sgd_step(net.params, lr, config.momentum, config.weight_decay);

    MetricsRow row;
    row.iter = i;
    row.lr = lr;
    row.train_loss = loss_value;

    const bool last = i + 1 == config.total_iters;
    if (eval_data && config.eval_interval > 0 &&
        ((i + 1) % config.eval_interval == 0 || last)) {
      EvalResult ev = evaluate(net, *eval_data, config.batch_size);
      row.eval_acc = ev.accuracy;
      row.eval_loss = ev.mean_loss;
    }
    row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    metrics.rows.push_back(row);
    if (writing) {
      csv << row.iter << "," << format_metric(row.lr) << ","
          << format_metric(row.train_loss) << ","
          << (row.eval_acc ? format_metric(*row.eval_acc) : "") << ","
          << (row.eval_loss ? format_metric(*row.eval_loss) : "") << ","
          << row.wall_ms << "\n";
      csv.flush();
    }

    const bool checkpoint_due =
        config.checkpoint_interval > 0 &&
        (i + 1) % config.checkpoint_interval == 0;
    if (writing && (checkpoint_due || last)) {
      nlohmann::json meta = outputs.extra_meta;
      meta["iteration"] = i;
      Checkpoint ck = snapshot_network(net, true, meta);
      for (const auto& e : outputs.extra_entries) ck.entries.push_back(e);
      std::ostringstream name;
      name << "checkpoint_" << i << ".mdnw";
      write_checkpoint_file((fs::path(outputs.out_dir) / name.str()).string(),
                            ck);
      if (last)
        write_checkpoint_file(
            (fs::path(outputs.out_dir) / "final.mdnw").string(), ck);
    }
  }
  return metrics;
}

}  // namespace microdense

#endif  // MICRODENSE_TRAINER_HPP_
