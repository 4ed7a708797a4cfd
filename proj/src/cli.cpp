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

#include "microdense/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "microdense/ablation.hpp"
#include "microdense/checkpoint.hpp"
#include "microdense/config.hpp"
#include "microdense/gradcheck.hpp"
#include "microdense/trainer.hpp"

namespace microdense {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct DataSpec {
  std::string kind;  // "cifar10" | "cifar100" | "synthetic"
  std::string dir;
  SyntheticSpec synthetic;
};

DataSpec parse_data_spec(const std::string& arg, const SyntheticSpec& defaults) {
  DataSpec spec;
  spec.synthetic = defaults;
  const auto colon = arg.find(':');
  spec.kind = arg.substr(0, colon == std::string::npos ? arg.size() : colon);
  const std::string rest =
      colon == std::string::npos ? "" : arg.substr(colon + 1);
  if (spec.kind == "cifar10" || spec.kind == "cifar100") {
    if (rest.empty())
      throw Error("--data " + spec.kind + " needs a directory: " + spec.kind +
                  ":DIR");
    spec.dir = rest;
    return spec;
  }
  if (spec.kind != "synthetic")
    throw Error("--data: unknown kind '" + spec.kind +
                "' (want cifar10:DIR, cifar100:DIR or synthetic[:k=v,...])");
  // Inline overrides: synthetic:sigma=0.5,classes=10,per_class=20,size=32,seed=7
  std::size_t pos = 0;
  while (pos < rest.size()) {
    const auto comma = rest.find(',', pos);
    const std::string kv =
        rest.substr(pos, comma == std::string::npos ? rest.size() - pos
                                                    : comma - pos);
    pos = comma == std::string::npos ? rest.size() : comma + 1;
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw Error("--data synthetic: bad option '" + kv + "' (want key=value)");
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (key == "sigma")
      spec.synthetic.sigma = std::stod(value);
    else if (key == "classes")
      spec.synthetic.num_classes = std::stoi(value);
    else if (key == "per_class")
      spec.synthetic.samples_per_class = std::stoi(value);
    else if (key == "size")
      spec.synthetic.image_size = std::stoi(value);
    else if (key == "seed")
      spec.synthetic.pattern_seed = std::stoull(value);
    else
      throw Error("--data synthetic: unknown key '" + key + "'");
  }
  spec.synthetic.validate();
  return spec;
}

std::pair<Dataset, Dataset> load_datasets(const DataSpec& spec) {
  if (spec.kind == "synthetic") return make_synthetic(spec.synthetic);
  const CifarVariant v =
      spec.kind == "cifar10" ? CifarVariant::Cifar10 : CifarVariant::Cifar100;
  Dataset train = load_cifar(spec.dir, v, "train");
  NormConstants nc{train.norm_mean, train.norm_std};
  Dataset test = load_cifar(spec.dir, v, "test", &nc);
  return {std::move(train), std::move(test)};
}

void apply_env_seed(TrainConfig& cfg) {
  if (const char* env = std::getenv("MICRODENSE_SEED"))
    cfg.seed = std::stoull(env);
}

void refuse_existing_run(const std::string& out_dir, bool force) {
  if (force) return;
  for (const char* name : {"metrics.csv", "final.mdnw", "ablation.csv"}) {
    if (fs::exists(fs::path(out_dir) / name))
      throw Error("output directory '" + out_dir + "' already holds " + name +
                  "; pass --force to overwrite");
  }
}

std::vector<CheckpointEntry> norm_entries(const Dataset& train) {
  std::vector<CheckpointEntry> out;
  out.push_back({"data/mean",
                 {3},
                 {static_cast<float>(train.norm_mean[0]),
                  static_cast<float>(train.norm_mean[1]),
                  static_cast<float>(train.norm_mean[2])}});
  out.push_back({"data/std",
                 {3},
                 {static_cast<float>(train.norm_std[0]),
                  static_cast<float>(train.norm_std[1]),
                  static_cast<float>(train.norm_std[2])}});
  return out;
}

int cmd_plan(const std::string& config_path, bool block_trace, bool as_json) {
  RunConfig cfg = load_run_config(config_path);
  NetworkPlan plan = plan_network(cfg.arch);
  if (as_json)
    std::cout << plan_to_json(plan).dump(2) << "\n";
  else
    std::cout << render_plan(plan, block_trace);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_arg,
              const std::string& out_dir, bool force,
              const std::string& resume) {
  RunConfig cfg = load_run_config(config_path);
  apply_env_seed(cfg.train);
  DataSpec spec = parse_data_spec(data_arg, cfg.synthetic);

  // Load data before touching the output directory: a bad data path must
  // not leave partial outputs behind.
  auto [train_data, test_data] = load_datasets(spec);
  if (spec.kind != "synthetic" &&
      cfg.arch.num_classes != train_data.num_classes)
    throw Error("config expects " + std::to_string(cfg.arch.num_classes) +
                " classes but " + spec.kind + " has " +
                std::to_string(train_data.num_classes));
  if (spec.kind == "synthetic") {
    cfg.arch.num_classes = spec.synthetic.num_classes;
    cfg.arch.input_size = spec.synthetic.image_size;
  }

  refuse_existing_run(out_dir, force);
  fs::create_directories(out_dir);
  save_run_config((fs::path(out_dir) / "config.json").string(), cfg);
  {
    json norm{{"mean", train_data.norm_mean}, {"std", train_data.norm_std}};
    std::ofstream f(fs::path(out_dir) / "normalization.json", std::ios::trunc);
    f << norm.dump(2) << "\n";
  }

  auto net = build_network<float>(cfg.arch, cfg.train.seed);
  std::cout << "training " << net->family << " ("
            << net->params.total_elements() << " parameters) on " << spec.kind
            << ", " << cfg.train.total_iters << " iterations\n";

  TrainOutputs outputs;
  outputs.out_dir = out_dir;
  outputs.resume_checkpoint = resume;
  outputs.extra_entries = norm_entries(train_data);
  outputs.extra_meta =
      json{{"data_kind", spec.kind},
           {"synthetic", synthetic_spec_to_json(spec.synthetic)}};

  RunMetrics metrics = train(*net, train_data, &test_data, cfg.train, outputs);
  EvalResult final_eval = evaluate(*net, test_data, cfg.train.batch_size);
  std::cout << "final: iter=" << (metrics.rows.empty() ? -1 : metrics.rows.back().iter)
            << " train_loss="
            << (metrics.rows.empty() ? 0.0 : metrics.rows.back().train_loss)
            << " test_acc=" << final_eval.accuracy
            << " test_loss=" << final_eval.mean_loss << "\n";
  std::cout << "wrote " << out_dir << "/metrics.csv and " << out_dir
            << "/final.mdnw\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_arg) {
  Checkpoint ck = read_checkpoint_file(ckpt_path);
  ArchConfig arch = arch_config_from_json(ck.meta.at("arch"));
  SyntheticSpec ck_synth;
  if (ck.meta.contains("synthetic"))
    ck_synth = synthetic_spec_from_json(ck.meta.at("synthetic"));
  DataSpec spec = parse_data_spec(data_arg, ck_synth);

  Dataset test;
  if (spec.kind == "synthetic") {
    test = make_synthetic(spec.synthetic).second;
  } else {
    const CifarVariant v = spec.kind == "cifar10" ? CifarVariant::Cifar10
                                                  : CifarVariant::Cifar100;
    NormConstants nc;
    if (const auto* mean = ck.find("data/mean")) {
      const auto& stddev = ck.at("data/std");
      for (int c = 0; c < 3; ++c) {
        nc.mean[static_cast<std::size_t>(c)] = mean->data[static_cast<std::size_t>(c)];
        nc.std[static_cast<std::size_t>(c)] = stddev.data[static_cast<std::size_t>(c)];
      }
      test = load_cifar(spec.dir, v, "test", &nc);
    } else {
      test = load_cifar(spec.dir, v, "test");
    }
  }

  auto net = build_network<float>(arch, 0);
  restore_network(*net, ck, false);
  EvalResult r = evaluate(*net, test);
  std::cout << "accuracy=" << r.accuracy << " loss=" << r.mean_loss << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& config_path, double tolerance) {
  RunConfig cfg = load_run_config(config_path);
  // Down-scale to a toy instance: two blocks, 8x8 input, 64-bit scalars.
  ArchConfig arch = cfg.arch;
  arch.num_blocks = std::min<std::int64_t>(2, arch.num_blocks);
  arch.stage_blocks.assign(static_cast<std::size_t>(arch.num_blocks), 1);
  arch.stem_width = std::max<std::int64_t>(arch.group_base, 8);
  arch.alpha = 4;
  arch.input_size = 8;
  arch.num_classes = std::min<std::int64_t>(10, arch.num_classes);

  auto net = build_network<double>(arch, 12345);
  Rng rng(99);
  Tensord images({2, 3, 8, 8});
  for (std::int64_t i = 0; i < images.size(); ++i) images[i] = rng.normal();
  std::vector<int> labels{1, static_cast<int>(arch.num_classes - 1)};

  Parameter<double> input("input", images);
  Graph<double> g;
  Value x = g.param(input);
  Value logits = net->build_logits(g, x);
  Value loss = softmax_cross_entropy(g, logits, labels);
  g.backward(loss);

  std::vector<Parameter<double>*> checked{&input};
  for (auto& p : net->params.all()) checked.push_back(&p);
  GradcheckReport report = gradcheck_parameters(g, loss, checked, tolerance);
  std::cout << "gradcheck: " << checked.size() << " tensors, max rel error "
            << report.max_rel_error << " (tolerance " << tolerance
            << ", worst '" << report.worst_tensor << "'): "
            << (report.pass ? "PASS" : "FAIL") << "\n";
  return report.pass ? 0 : 1;
}

struct AblateRow {
  std::string variant;
  std::int64_t params = 0;
  std::vector<double> accs;
  std::vector<double> losses;

  double mean_acc() const {
    double s = 0;
    for (double a : accs) s += a;
    return s / static_cast<double>(accs.size());
  }
  double std_acc() const {
    const double m = mean_acc();
    double s = 0;
    for (double a : accs) s += (a - m) * (a - m);
    return std::sqrt(s / static_cast<double>(accs.size()));
  }
  double mean_loss() const {
    double s = 0;
    for (double l : losses) s += l;
    return s / static_cast<double>(losses.size());
  }
};

int cmd_ablate(const std::string& kind, std::int64_t budget,
               const std::string& data_arg, const std::string& out_dir,
               bool force, int seeds, std::int64_t iters, std::int64_t batch,
               double lr, const std::string& depths_arg) {
  DataSpec spec = parse_data_spec(data_arg, SyntheticSpec{});
  auto [train_data, test_data] = load_datasets(spec);

  refuse_existing_run(out_dir, force);
  fs::create_directories(out_dir);

  AblationOptions opt;
  opt.num_classes = train_data.num_classes;
  opt.input_size = train_data.height();

  TrainConfig tc;
  tc.lr_max = lr;
  tc.total_iters = iters;
  tc.warmup_iters = iters / 20;
  tc.batch_size = batch;
  tc.eval_interval = 0;
  tc.checkpoint_interval = 0;
  apply_env_seed(tc);
  const std::uint64_t base_seed = tc.seed;

  std::vector<int> depths;
  {
    std::stringstream ss(depths_arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) depths.push_back(std::stoi(tok));
  }

  struct Variant {
    std::string label;
    std::function<std::unique_ptr<NetworkInstance<float>>(std::uint64_t)> make;
  };
  std::vector<Variant> variants;
  if (kind == "depth-sweep") {
    for (int n : depths) {
      AblationOptions o = opt;
      o.dense_layers = n;
      variants.push_back(
          {"micro-dense-n" + std::to_string(n), [o, budget](std::uint64_t s) {
             return build_ablation_variant<float>(AggregationKind::MicroDense,
                                                  budget, o, s);
           }});
    }
  } else if (kind == "growth-mode") {
    for (GrowthMode m : {GrowthMode::Pyramidal, GrowthMode::Fixed}) {
      AblationOptions o = opt;
      variants.push_back(
          {growth_mode_str(m), [o, m, budget](std::uint64_t s) {
             return fixed_vs_pyramidal_variant<float>(m, budget, o, s);
           }});
    }
  } else if (kind == "aggregation") {
    for (AggregationKind k :
         {AggregationKind::Plain, AggregationKind::Highway,
          AggregationKind::Residual, AggregationKind::Dense,
          AggregationKind::Inception, AggregationKind::MicroDense}) {
      variants.push_back(
          {aggregation_kind_str(k), [k, opt, budget](std::uint64_t s) {
             return build_ablation_variant<float>(k, budget, opt, s);
           }});
    }
  } else {
    throw Error("--kind must be depth-sweep, growth-mode or aggregation");
  }

  std::vector<AblateRow> rows;
  for (const auto& v : variants) {
    AblateRow row;
    row.variant = v.label;
    for (int s = 0; s < seeds; ++s) {
      const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(s);
      auto net = v.make(seed);
      row.params = net->params.total_elements();
      TrainConfig run_tc = tc;
      run_tc.seed = seed;
      train(*net, train_data, nullptr, run_tc);
      EvalResult ev = evaluate(*net, test_data, run_tc.batch_size);
      row.accs.push_back(ev.accuracy);
      row.losses.push_back(ev.mean_loss);
      std::cout << v.label << " seed " << seed << ": params=" << row.params
                << " test_acc=" << ev.accuracy << " test_loss=" << ev.mean_loss
                << "\n";
    }
    rows.push_back(std::move(row));
  }

  std::ofstream csv(fs::path(out_dir) / "ablation.csv", std::ios::trunc);
  csv << "kind,variant,params,seeds,mean_test_acc,std_test_acc,mean_test_loss\n";
  for (const auto& r : rows)
    csv << kind << "," << r.variant << "," << r.params << "," << r.accs.size()
        << "," << format_metric(r.mean_acc()) << ","
        << format_metric(r.std_acc()) << "," << format_metric(r.mean_loss())
        << "\n";
  std::cout << "wrote " << (fs::path(out_dir) / "ablation.csv").string() << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Micro-Dense Nets: planner, trainer and ablation harness"};
  app.require_subcommand(1);

  std::string config_path, data_arg, out_dir, ckpt_path, resume;
  bool block_trace = false, as_json = false, force = false;
  double tolerance = 1e-4;

  auto* plan = app.add_subcommand("plan", "print the compiled layer plan");
  plan->add_option("--config", config_path, "run config JSON")->required();
  plan->add_flag("--block-trace", block_trace, "print every layer row");
  plan->add_flag("--json", as_json, "emit the plan as JSON");

  auto* train_cmd = app.add_subcommand("train", "train a network");
  train_cmd->add_option("--config", config_path, "run config JSON")->required();
  train_cmd
      ->add_option("--data", data_arg,
                   "cifar10:DIR | cifar100:DIR | synthetic[:k=v,...]")
      ->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_flag("--force", force, "overwrite an existing run");
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--data", data_arg, "dataset spec")->required();

  auto* gc = app.add_subcommand(
      "gradcheck", "finite-difference check on a down-scaled instance");
  gc->add_option("--config", config_path, "run config JSON")->required();
  gc->add_option("--tolerance", tolerance, "max relative error")
      ->capture_default_str();

  std::string ablate_kind = "depth-sweep", depths = "1,2,3,4";
  std::int64_t budget = 50000, iters = 400, batch = 32;
  int seeds = 3;
  double lr = 0.05;
  auto* ab = app.add_subcommand("ablate", "budget-matched architecture comparisons");
  ab->add_option("--kind", ablate_kind, "depth-sweep | growth-mode | aggregation")
      ->capture_default_str();
  ab->add_option("--budget", budget, "parameter budget")->capture_default_str();
  ab->add_option("--data", data_arg, "dataset spec")->required();
  ab->add_option("--out", out_dir, "output directory")->required();
  ab->add_flag("--force", force, "overwrite an existing run");
  ab->add_option("--seeds", seeds, "seeds per variant")->capture_default_str();
  ab->add_option("--iters", iters, "training iterations per run")
      ->capture_default_str();
  ab->add_option("--batch", batch, "batch size")->capture_default_str();
  ab->add_option("--lr", lr, "peak learning rate")->capture_default_str();
  ab->add_option("--depths", depths, "depth-sweep n values")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (plan->parsed()) return cmd_plan(config_path, block_trace, as_json);
    if (train_cmd->parsed())
      return cmd_train(config_path, data_arg, out_dir, force, resume);
    if (eval_cmd->parsed()) return cmd_eval(ckpt_path, data_arg);
    if (gc->parsed()) return cmd_gradcheck(config_path, tolerance);
    if (ab->parsed())
      return cmd_ablate(ablate_kind, budget, data_arg, out_dir, force, seeds,
                        iters, batch, lr, depths);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("microdense");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace microdense
