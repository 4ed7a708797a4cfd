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

#include "microdense/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "microdense/rng.hpp"

namespace microdense {

namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kCifarSide = 32;
constexpr std::int64_t kCifarPixels = 3 * kCifarSide * kCifarSide;  // 3072

std::vector<std::string> cifar_files(CifarVariant v, const std::string& split) {
  if (v == CifarVariant::Cifar10) {
    if (split == "train")
      return {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
              "data_batch_4.bin", "data_batch_5.bin"};
    return {"test_batch.bin"};
  }
  return {split == "train" ? "train.bin" : "test.bin"};
}

std::int64_t record_size(CifarVariant v) {
  // 1 label byte (CIFAR-100: coarse + fine) + 3072 pixel bytes.
  return (v == CifarVariant::Cifar10 ? 1 : 2) + kCifarPixels;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  return buf;
}

struct RawCifar {
  std::vector<std::uint8_t> pixels;  // record-major, channel-major per record
  std::vector<int> labels;
};

RawCifar read_cifar_bytes(const std::string& dir, CifarVariant v,
                          const std::string& split) {
  if (split != "train" && split != "test")
    throw Error("load_cifar: split must be 'train' or 'test', got '" + split +
                "'");
  const auto files = cifar_files(v, split);
  std::string missing;
  for (const auto& name : files)
    if (!fs::exists(fs::path(dir) / name)) missing += " " + name;
  if (!missing.empty())
    throw Error("load_cifar: missing files under '" + dir + "':" + missing);

  const std::int64_t rec = record_size(v);
  RawCifar raw;
  for (const auto& name : files) {
    const auto path = fs::path(dir) / name;
    const std::string buf = read_file(path);
    if (buf.size() % static_cast<std::size_t>(rec) != 0)
      throw Error("load_cifar: '" + path.string() + "' has " +
                  std::to_string(buf.size()) +
                  " bytes, not a multiple of the record size " +
                  std::to_string(rec) + " (stray " +
                  std::to_string(buf.size() % static_cast<std::size_t>(rec)) +
                  " bytes at offset " +
                  std::to_string(buf.size() -
                                 buf.size() % static_cast<std::size_t>(rec)) +
                  ")");
    const std::int64_t n = static_cast<std::int64_t>(buf.size()) / rec;
    for (std::int64_t i = 0; i < n; ++i) {
      const auto* p =
          reinterpret_cast<const std::uint8_t*>(buf.data() + i * rec);
      // CIFAR-100 stores coarse then fine label; the fine label is used.
      raw.labels.push_back(static_cast<int>(p[rec - kCifarPixels - 1]));
      raw.pixels.insert(raw.pixels.end(), p + (rec - kCifarPixels), p + rec);
    }
  }
  if (raw.labels.empty())
    throw Error("load_cifar: no records found under '" + dir + "'");
  return raw;
}

NormConstants constants_from_bytes(const std::vector<std::uint8_t>& pixels) {
  NormConstants nc;
  const std::int64_t n =
      static_cast<std::int64_t>(pixels.size()) / kCifarPixels;
  const std::int64_t per_channel = n * kCifarSide * kCifarSide;
  for (int c = 0; c < 3; ++c) {
    double sum = 0;
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t i = 0; i < kCifarSide * kCifarSide; ++i)
        sum += pixels[static_cast<std::size_t>(
                   r * kCifarPixels + c * kCifarSide * kCifarSide + i)] /
               255.0;
    const double mean = sum / static_cast<double>(per_channel);
    double var = 0;
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t i = 0; i < kCifarSide * kCifarSide; ++i) {
        const double d =
            pixels[static_cast<std::size_t>(
                r * kCifarPixels + c * kCifarSide * kCifarSide + i)] /
                255.0 -
            mean;
        var += d * d;
      }
    var /= static_cast<double>(per_channel);
    nc.mean[static_cast<std::size_t>(c)] = mean;
    nc.std[static_cast<std::size_t>(c)] = var > 0 ? std::sqrt(var) : 1.0;
  }
  return nc;
}

}  // namespace

Dataset load_cifar(const std::string& dir, CifarVariant variant,
                   const std::string& split, const NormConstants* reuse) {
  RawCifar raw = read_cifar_bytes(dir, variant, split);
  NormConstants nc;
  if (reuse) {
    nc = *reuse;
  } else if (split == "train") {
    nc = constants_from_bytes(raw.pixels);
  } else {
    // Constants always come from the training split.
    RawCifar train = read_cifar_bytes(dir, variant, "train");
    nc = constants_from_bytes(train.pixels);
  }

  const std::int64_t n = static_cast<std::int64_t>(raw.labels.size());
  Dataset ds;
  ds.split = split;
  ds.num_classes = variant == CifarVariant::Cifar10 ? 10 : 100;
  ds.labels = std::move(raw.labels);
  ds.norm_mean = nc.mean;
  ds.norm_std = nc.std;
  ds.images = Tensor<double>({n, 3, kCifarSide, kCifarSide});
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < kCifarSide * kCifarSide; ++i) {
        const double v =
            raw.pixels[static_cast<std::size_t>(
                r * kCifarPixels + c * kCifarSide * kCifarSide + i)] /
            255.0;
        ds.images[(r * 3 + c) * kCifarSide * kCifarSide + i] =
            (v - nc.mean[static_cast<std::size_t>(c)]) /
            nc.std[static_cast<std::size_t>(c)];
      }
  for (int l : ds.labels)
    if (l < 0 || l >= ds.num_classes)
      throw Error("load_cifar: label " + std::to_string(l) + " out of range");
  return ds;
}

void write_cifar_fixture(const Dataset& ds, const std::string& dir) {
  if (ds.height() != kCifarSide || ds.width() != kCifarSide)
    throw Error("write_cifar_fixture: dataset is not 32x32");
  fs::create_directories(dir);
  const std::int64_t n = ds.count();
  const auto files = cifar_files(CifarVariant::Cifar10, ds.split);
  const std::int64_t per_file =
      (n + static_cast<std::int64_t>(files.size()) - 1) /
      static_cast<std::int64_t>(files.size());
  std::int64_t r = 0;
  for (const auto& name : files) {
    std::ofstream f(fs::path(dir) / name, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("write_cifar_fixture: cannot open " + name);
    for (std::int64_t k = 0; k < per_file && r < n; ++k, ++r) {
      f.put(static_cast<char>(ds.labels[static_cast<std::size_t>(r)]));
      for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < kCifarSide * kCifarSide; ++i) {
          const double v =
              ds.images[(r * 3 + c) * kCifarSide * kCifarSide + i] *
                  ds.norm_std[static_cast<std::size_t>(c)] +
              ds.norm_mean[static_cast<std::size_t>(c)];
          const long byte = std::lround(v * 255.0);
          f.put(static_cast<char>(
              static_cast<std::uint8_t>(std::clamp(byte, 0L, 255L))));
        }
    }
  }
}

namespace {

/// Smooth per-class template: seeded low-res lattice upsampled bilinearly.
Tensor<double> class_template(const SyntheticSpec& spec, int cls) {
  const int grid = 8;
  const std::int64_t s = spec.image_size;
  Tensor<double> t({3, s, s});
  for (int c = 0; c < 3; ++c) {
    Rng rng(derive_seed(spec.pattern_seed, 0x7e3971a7e,
                        static_cast<std::uint64_t>(cls),
                        static_cast<std::uint64_t>(c)));
    std::vector<double> lattice(static_cast<std::size_t>((grid + 1) * (grid + 1)));
    for (auto& v : lattice) v = rng.uniform();
    for (std::int64_t y = 0; y < s; ++y)
      for (std::int64_t x = 0; x < s; ++x) {
        const double gy = static_cast<double>(y) * grid / static_cast<double>(s);
        const double gx = static_cast<double>(x) * grid / static_cast<double>(s);
        const int y0 = static_cast<int>(gy), x0 = static_cast<int>(gx);
        const double fy = gy - y0, fx = gx - x0;
        auto at = [&](int yy, int xx) {
          return lattice[static_cast<std::size_t>(yy * (grid + 1) + xx)];
        };
        t[(c * s + y) * s + x] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                                 fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
      }
  }
  return t;
}

Dataset synthesize_split(const SyntheticSpec& spec, const std::string& split,
                         const std::vector<Tensor<double>>& templates,
                         const NormConstants* reuse) {
  const std::int64_t per = spec.samples_per_class;
  const std::int64_t n = per * spec.num_classes;
  const std::int64_t s = spec.image_size;
  const std::uint64_t split_tag = split == "train" ? 1 : 2;

  Tensor<double> raw({n, 3, s, s});
  std::vector<int> labels(static_cast<std::size_t>(n));
  std::int64_t r = 0;
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    for (std::int64_t k = 0; k < per; ++k, ++r) {
      labels[static_cast<std::size_t>(r)] = cls;
      Rng rng(derive_seed(spec.pattern_seed, split_tag,
                          static_cast<std::uint64_t>(cls),
                          static_cast<std::uint64_t>(k)));
      const auto& tmpl = templates[static_cast<std::size_t>(cls)];
      for (std::int64_t i = 0; i < 3 * s * s; ++i)
        raw[r * 3 * s * s + i] =
            tmpl[i] + (spec.sigma > 0 ? spec.sigma * rng.normal() : 0.0);
    }
  }

  NormConstants nc;
  if (reuse) {
    nc = *reuse;
  } else {
    const std::int64_t per_channel = n * s * s;
    for (std::int64_t c = 0; c < 3; ++c) {
      double sum = 0;
      for (std::int64_t rr = 0; rr < n; ++rr)
        for (std::int64_t i = 0; i < s * s; ++i)
          sum += raw[(rr * 3 + c) * s * s + i];
      const double mean = sum / static_cast<double>(per_channel);
      double var = 0;
      for (std::int64_t rr = 0; rr < n; ++rr)
        for (std::int64_t i = 0; i < s * s; ++i) {
          const double d = raw[(rr * 3 + c) * s * s + i] - mean;
          var += d * d;
        }
      var /= static_cast<double>(per_channel);
      nc.mean[static_cast<std::size_t>(c)] = mean;
      nc.std[static_cast<std::size_t>(c)] = var > 0 ? std::sqrt(var) : 1.0;
    }
  }

  Dataset ds;
  ds.split = split;
  ds.num_classes = spec.num_classes;
  ds.labels = std::move(labels);
  ds.norm_mean = nc.mean;
  ds.norm_std = nc.std;
  ds.images = Tensor<double>({n, 3, s, s});
  for (std::int64_t rr = 0; rr < n; ++rr)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < s * s; ++i)
        ds.images[(rr * 3 + c) * s * s + i] =
            (raw[(rr * 3 + c) * s * s + i] -
             nc.mean[static_cast<std::size_t>(c)]) /
            nc.std[static_cast<std::size_t>(c)];
  return ds;
}

}  // namespace

std::pair<Dataset, Dataset> make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<Tensor<double>> templates;
  templates.reserve(static_cast<std::size_t>(spec.num_classes));
  for (int cls = 0; cls < spec.num_classes; ++cls)
    templates.push_back(class_template(spec, cls));
  Dataset train = synthesize_split(spec, "train", templates, nullptr);
  NormConstants nc{train.norm_mean, train.norm_std};
  Dataset test = synthesize_split(spec, "test", templates, &nc);
  return {std::move(train), std::move(test)};
}

std::vector<std::int64_t> shuffled_indices(std::uint64_t seed,
                                           std::int64_t epoch,
                                           std::int64_t count) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i)
    idx[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, 0x5f0ff1e, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(idx);
  return idx;
}

Batch make_batch(const Dataset& ds, const std::vector<std::int64_t>& indices,
                 std::size_t first, std::size_t count, bool augment,
                 std::uint64_t aug_seed) {
  if (first + count > indices.size())
    throw Error("make_batch: index range out of bounds");
  const std::int64_t C = ds.images.dim(1), H = ds.height(), W = ds.width();
  Batch batch;
  batch.images = Tensor<double>({static_cast<std::int64_t>(count), C, H, W});
  batch.labels.resize(count);
  Rng rng(aug_seed);
  for (std::size_t k = 0; k < count; ++k) {
    const std::int64_t r = indices[first + k];
    batch.labels[k] = ds.labels[static_cast<std::size_t>(r)];
    const bool flip = augment && rng.coin();
    // 4-pixel pad-and-crop: offsets in [-4, 4], zero padding (= channel mean
    // in normalized space).
    const std::int64_t dy =
        augment ? static_cast<std::int64_t>(rng.below(9)) - 4 : 0;
    const std::int64_t dx =
        augment ? static_cast<std::int64_t>(rng.below(9)) - 4 : 0;
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
          const std::int64_t sy = y + dy;
          const std::int64_t sx = (flip ? W - 1 - x : x) + dx;
          double v = 0.0;
          if (sy >= 0 && sy < H && sx >= 0 && sx < W)
            v = ds.images[((r * C + c) * H + sy) * W + sx];
          batch.images.at(static_cast<std::int64_t>(k), c, y, x) = v;
        }
  }
  return batch;
}

}  // namespace microdense
