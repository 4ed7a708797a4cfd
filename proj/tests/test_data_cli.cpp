#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "microdense/cli.hpp"
#include "microdense/config.hpp"
#include "microdense/data.hpp"
#include "microdense/trainer.hpp"

using namespace microdense;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("/tmp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

/// Two CIFAR-10 records with scripted bytes; batches 2-5 empty.
void write_two_record_cifar10(const fs::path& dir) {
  std::vector<std::uint8_t> rec;
  rec.push_back(3);  // label of record 0
  for (int i = 0; i < 3072; ++i)
    rec.push_back(static_cast<std::uint8_t>(i % 256));
  rec.push_back(7);  // label of record 1
  for (int i = 0; i < 3072; ++i)
    rec.push_back(static_cast<std::uint8_t>((255 - i) % 256));
  write_bytes(dir / "data_batch_1.bin", rec);
  for (int b = 2; b <= 5; ++b)
    write_bytes(dir / ("data_batch_" + std::to_string(b) + ".bin"), {});
  // Test split: one record, all-128 pixels, label 1.
  std::vector<std::uint8_t> test;
  test.push_back(1);
  for (int i = 0; i < 3072; ++i) test.push_back(128);
  write_bytes(dir / "test_batch.bin", test);
}

std::string capture_stdout(const std::function<int()>& fn, int& status) {
  std::ostringstream captured;
  auto* old = std::cout.rdbuf(captured.rdbuf());
  status = fn();
  std::cout.rdbuf(old);
  return captured.str();
}

std::string repo_config(const std::string& name) {
  return std::string(MICRODENSE_SOURCE_DIR) + "/configs/" + name;
}

}  // namespace

TEST_CASE("load_cifar: hand-built records recover exact pixel values") {
  TempDir dir("md_cifar_fixture");
  write_two_record_cifar10(dir.path);
  Dataset train = load_cifar(dir.str(), CifarVariant::Cifar10, "train");
  REQUIRE(train.count() == 2);
  CHECK(train.labels[0] == 3);
  CHECK(train.labels[1] == 7);

  // Record 0, channel 0, pixel (0,0) has byte 0; record 1 has byte 255.
  // Normalization constants come from the two training records.
  const double m0 = train.norm_mean[0], s0 = train.norm_std[0];
  CHECK(train.images.at(0, 0, 0, 0) ==
        doctest::Approx((0.0 / 255 - m0) / s0).epsilon(1e-12));
  CHECK(train.images.at(1, 0, 0, 0) ==
        doctest::Approx((255.0 / 255 - m0) / s0).epsilon(1e-12));
  // Channel-major layout: channel 1 starts 1024 bytes in.
  const double m1 = train.norm_mean[1], s1 = train.norm_std[1];
  CHECK(train.images.at(0, 1, 0, 0) ==
        doctest::Approx(((1024 % 256) / 255.0 - m1) / s1).epsilon(1e-12));

  Dataset test = load_cifar(dir.str(), CifarVariant::Cifar10, "test");
  REQUIRE(test.count() == 1);
  CHECK(test.labels[0] == 1);
  // Test pixels normalize with the training constants.
  CHECK(test.images.at(0, 0, 5, 5) ==
        doctest::Approx((128.0 / 255 - m0) / s0).epsilon(1e-12));
}

TEST_CASE("load_cifar: truncated file reports the stray byte offset") {
  TempDir dir("md_cifar_trunc");
  write_two_record_cifar10(dir.path);
  // Append 7 stray bytes to batch 1 (2 records of 3073 bytes + 7).
  std::ofstream f(dir.path / "data_batch_1.bin",
                  std::ios::binary | std::ios::app);
  f.write("junkjun", 7);
  f.close();
  CHECK_THROWS_WITH_AS(load_cifar(dir.str(), CifarVariant::Cifar10, "train"),
                       doctest::Contains("not a multiple of the record size"),
                       Error);
}

TEST_CASE("load_cifar: missing files are listed by name") {
  TempDir dir("md_cifar_missing");
  CHECK_THROWS_WITH_AS(load_cifar(dir.str(), CifarVariant::Cifar10, "train"),
                       doctest::Contains("data_batch_1.bin"), Error);
}

TEST_CASE("load_cifar: CIFAR-100 uses the fine label of 2-byte headers") {
  TempDir dir("md_cifar100");
  std::vector<std::uint8_t> rec;
  rec.push_back(11);  // coarse
  rec.push_back(42);  // fine
  for (int i = 0; i < 3072; ++i) rec.push_back(5);
  rec.push_back(3);   // coarse
  rec.push_back(99);  // fine
  for (int i = 0; i < 3072; ++i) rec.push_back(250);
  write_bytes(dir.path / "train.bin", rec);
  Dataset train = load_cifar(dir.str(), CifarVariant::Cifar100, "train");
  REQUIRE(train.count() == 2);
  CHECK(train.labels[0] == 42);
  CHECK(train.labels[1] == 99);
  CHECK(train.num_classes == 100);
}

TEST_CASE("fixture round-trip: write -> read is byte- and bit-identical") {
  TempDir src("md_fixture_src");
  TempDir back("md_fixture_back");
  // Random byte-valued dataset via a scripted fixture.
  Rng rng(91);
  std::vector<std::uint8_t> rec;
  for (int r = 0; r < 6; ++r) {
    rec.push_back(static_cast<std::uint8_t>(r % 10));
    for (int i = 0; i < 3072; ++i)
      rec.push_back(static_cast<std::uint8_t>(rng.below(256)));
  }
  write_bytes(src.path / "data_batch_1.bin", rec);
  for (int b = 2; b <= 5; ++b)
    write_bytes(src.path / ("data_batch_" + std::to_string(b) + ".bin"), {});

  Dataset a = load_cifar(src.str(), CifarVariant::Cifar10, "train");
  write_cifar_fixture(a, back.str());
  NormConstants nc{a.norm_mean, a.norm_std};
  Dataset b = load_cifar(back.str(), CifarVariant::Cifar10, "train", &nc);

  CHECK(a.images.same_values(b.images));  // bitwise
  CHECK(a.labels == b.labels);

  // And the fixture files concatenate to the original bytes.
  std::string concat;
  for (int i = 1; i <= 5; ++i) {
    std::ifstream f(back.path / ("data_batch_" + std::to_string(i) + ".bin"),
                    std::ios::binary);
    concat.append((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  }
  REQUIRE(concat.size() == rec.size());
  CHECK(std::equal(rec.begin(), rec.end(),
                   reinterpret_cast<const std::uint8_t*>(concat.data())));
}

TEST_CASE("make_synthetic: determinism, disjoint splits, zero-noise separability") {
  SyntheticSpec spec;
  spec.num_classes = 5;
  spec.samples_per_class = 4;
  spec.image_size = 16;
  spec.sigma = 0.0;

  auto [train1, test1] = make_synthetic(spec);
  auto [train2, test2] = make_synthetic(spec);
  CHECK(train1.images.same_values(train2.images));  // bitwise determinism
  CHECK(test1.images.same_values(test2.images));
  CHECK(train1.count() == 20);
  CHECK(test1.count() == 20);

  // sigma = 0: a nearest-template classifier is perfect. Templates are the
  // class means of the noiseless training samples.
  spec.sigma = 0.6;
  auto [ntrain, ntest] = make_synthetic(spec);
  std::int64_t correct = 0;
  const std::int64_t d = 3 * 16 * 16;
  for (std::int64_t i = 0; i < ntest.count(); ++i) {
    double best = 1e300;
    int arg = -1;
    for (int cls = 0; cls < 5; ++cls) {
      // class template in normalized space = noiseless train sample
      double dist = 0;
      for (std::int64_t k = 0; k < d; ++k) {
        const double diff =
            ntest.images[i * d + k] - train1.images[(cls * 4) * d + k];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        arg = cls;
      }
    }
    if (arg == ntest.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  // Modest noise: nearest-template stays nearly perfect.
  CHECK(correct >= 18);

  // sigma = 0 exactly: test equals the templates, classification trivial.
  std::int64_t exact = 0;
  for (std::int64_t i = 0; i < test1.count(); ++i) {
    double best = 1e300;
    int arg = -1;
    for (int cls = 0; cls < 5; ++cls) {
      double dist = 0;
      for (std::int64_t k = 0; k < d; ++k) {
        const double diff =
            test1.images[i * d + k] - train1.images[(cls * 4) * d + k];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        arg = cls;
      }
    }
    if (arg == test1.labels[static_cast<std::size_t>(i)]) ++exact;
  }
  CHECK(exact == 20);
}

TEST_CASE("shuffled_indices: pure function of (seed, epoch, count)") {
  auto a = shuffled_indices(5, 0, 100);
  auto b = shuffled_indices(5, 0, 100);
  CHECK(a == b);
  CHECK(a != shuffled_indices(5, 1, 100));
  CHECK(a != shuffled_indices(6, 0, 100));
  std::vector<std::int64_t> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::int64_t i = 0; i < 100; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("make_batch: augmentation is seed-deterministic and bounded") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.samples_per_class = 4;
  spec.image_size = 16;
  auto [train, test] = make_synthetic(spec);
  auto idx = shuffled_indices(1, 0, train.count());
  Batch a = make_batch(train, idx, 0, 8, true, 42);
  Batch b = make_batch(train, idx, 0, 8, true, 42);
  Batch c = make_batch(train, idx, 0, 8, true, 43);
  CHECK(a.images.same_values(b.images));
  CHECK_FALSE(a.images.same_values(c.images));
  CHECK(a.labels == b.labels);
}

TEST_CASE("cli: plan prints blocks and totals for the shipped configs") {
  int status = 0;
  std::string out = capture_stdout(
      [&] {
        return run_cli({"plan", "--config",
                        repo_config("microdense_30a64_cifar10.json")});
      },
      status);
  CHECK(status == 0);
  CHECK(out.find("block30") != std::string::npos);
  CHECK(out.find("total: params=") != std::string::npos);

  out = capture_stdout(
      [&] {
        return run_cli({"plan", "--config",
                        repo_config("microdense_60a115_cifar100.json"),
                        "--json"});
      },
      status);
  CHECK(status == 0);
  CHECK(out.find("\"param_total\"") != std::string::npos);
}

TEST_CASE("cli: unknown subcommand and missing flags fail with nonzero status") {
  CHECK(run_cli({"frobnicate"}) != 0);
  CHECK(run_cli({"train"}) != 0);           // missing required flags
  CHECK(run_cli({"plan", "--config", "/nonexistent.json"}) != 0);
}

TEST_CASE("cli: train refuses a missing data directory without partial outputs") {
  TempDir out("md_cli_missing_data_out");
  fs::remove_all(out.path);  // train must not create it on failure
  const int status = run_cli({"train", "--config", repo_config("toy_synthetic.json"),
                              "--data", "cifar10:/nonexistent_dir",
                              "--out", out.str()});
  CHECK(status != 0);
  CHECK_FALSE(fs::exists(out.path));
}

TEST_CASE("cli: train/eval/append-safety on the synthetic task") {
  TempDir cfg_dir("md_cli_cfg");
  TempDir out("md_cli_run");
  fs::remove_all(out.path);

  // Small run derived from the toy config.
  RunConfig cfg = load_run_config(repo_config("toy_synthetic.json"));
  cfg.train.total_iters = 6;
  cfg.train.warmup_iters = 2;
  cfg.train.eval_interval = 3;
  cfg.train.batch_size = 16;
  cfg.arch.num_blocks = 2;
  cfg.arch.stage_blocks = {1, 1};
  cfg.arch.input_size = 12;
  cfg.synthetic.image_size = 12;
  cfg.synthetic.samples_per_class = 4;
  const std::string cfg_path = (cfg_dir.path / "toy.json").string();
  save_run_config(cfg_path, cfg);

  int status = run_cli({"train", "--config", cfg_path, "--data", "synthetic",
                        "--out", out.str()});
  CHECK(status == 0);
  CHECK(fs::exists(out.path / "metrics.csv"));
  CHECK(fs::exists(out.path / "final.mdnw"));
  CHECK(fs::exists(out.path / "normalization.json"));
  CHECK(fs::exists(out.path / "config.json"));

  // metrics.csv carries the documented schema.
  std::ifstream csv(out.path / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "iter,lr,train_loss,eval_acc,eval_loss,wall_ms");

  // Append safety: same out dir refuses without --force.
  CHECK(run_cli({"train", "--config", cfg_path, "--data", "synthetic",
                 "--out", out.str()}) != 0);
  CHECK(run_cli({"train", "--config", cfg_path, "--data", "synthetic",
                 "--out", out.str(), "--force"}) == 0);

  // Evaluate the checkpoint.
  int eval_status = 0;
  std::string eval_out = capture_stdout(
      [&] {
        return run_cli({"eval", "--checkpoint",
                        (out.path / "final.mdnw").string(), "--data",
                        "synthetic"});
      },
      eval_status);
  CHECK(eval_status == 0);
  CHECK(eval_out.find("accuracy=") != std::string::npos);
}

TEST_CASE("cli: gradcheck exits zero on a 2-block toy config") {
  TempDir cfg_dir("md_cli_gc");
  RunConfig cfg;
  cfg.arch.num_blocks = 2;
  cfg.arch.stage_blocks = {1, 1};
  const std::string cfg_path = (cfg_dir.path / "gc.json").string();
  save_run_config(cfg_path, cfg);
  int status = 0;
  std::string out = capture_stdout(
      [&] { return run_cli({"gradcheck", "--config", cfg_path}); }, status);
  CHECK(status == 0);
  CHECK(out.find("PASS") != std::string::npos);
}

TEST_CASE("cli: ablate writes one aggregated CSV row per variant") {
  TempDir out("md_cli_ablate");
  fs::remove_all(out.path);
  const int status = run_cli(
      {"ablate", "--kind", "depth-sweep", "--budget", "20000", "--data",
       "synthetic:per_class=4,size=16,sigma=0.3", "--out", out.str(),
       "--seeds", "1", "--iters", "4", "--batch", "16", "--depths", "1,2"});
  CHECK(status == 0);
  std::ifstream csv(out.path / "ablation.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "kind,variant,params,seeds,mean_test_acc,std_test_acc,mean_test_loss");
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("config: parse errors carry the file context") {
  TempDir dir("md_cfg_err");
  const auto path = dir.path / "bad.json";
  std::ofstream(path) << "{ \"arch\": { \"num_blocks\": }";
  CHECK_THROWS_WITH_AS(load_run_config(path.string()),
                       doctest::Contains("bad.json"), Error);
}
