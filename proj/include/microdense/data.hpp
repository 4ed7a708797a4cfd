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

#ifndef MICRODENSE_DATA_HPP_
#define MICRODENSE_DATA_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "microdense/tensor.hpp"

namespace microdense {

/// Labeled image records, normalized per channel; the normalization
/// constants are recorded for reproducibility and checkpoint embedding.
struct Dataset {
  Tensor<double> images;  // (count, 3, H, W)
  std::vector<int> labels;
  std::string split;
  int num_classes = 10;
  std::array<double, 3> norm_mean{};
  std::array<double, 3> norm_std{1.0, 1.0, 1.0};

  std::int64_t count() const { return images.empty() ? 0 : images.dim(0); }
  std::int64_t height() const { return images.dim(2); }
  std::int64_t width() const { return images.dim(3); }
};

enum class CifarVariant { Cifar10, Cifar100 };

struct NormConstants {
  std::array<double, 3> mean{};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

/// Parses the standard CIFAR binary batch files under `dir` ("train" or
/// "test" split). Pixels are scaled to [0,1] then normalized per channel;
/// the constants come from the training split unless `reuse` is given.
Dataset load_cifar(const std::string& dir, CifarVariant variant,
                   const std::string& split,
                   const NormConstants* reuse = nullptr);

/// Writes a dataset back to the CIFAR-10 binary fixture layout
/// (data_batch_1..5.bin or test_batch.bin under `dir`), denormalizing to
/// the original bytes. Reading the fixture back yields a bit-identical
/// Dataset.
void write_cifar_fixture(const Dataset& ds, const std::string& dir);

/// Synthetic task: one fixed smooth template per class (seeded low-res
/// lattice, bilinearly upsampled), samples are template + N(0, sigma^2).
/// With sigma = 0 the task is exactly solvable.
struct SyntheticSpec {
  int num_classes = 10;
  int samples_per_class = 20;  // per split
  int image_size = 32;
  std::uint64_t pattern_seed = 7;
  double sigma = 0.25;

  void validate() const {
    if (num_classes < 2) throw Error("synthetic: num_classes must be >= 2");
    if (sigma < 0) throw Error("synthetic: sigma must be >= 0");
    if (samples_per_class < 1 || image_size < 4)
      throw Error("synthetic: bad samples_per_class or image_size");
  }
};

std::pair<Dataset, Dataset> make_synthetic(const SyntheticSpec& spec);

/// Seeded shuffle order: a pure function of (seed, epoch, count).
std::vector<std::int64_t> shuffled_indices(std::uint64_t seed,
                                           std::int64_t epoch,
                                           std::int64_t count);

struct Batch {
  Tensor<double> images;
  std::vector<int> labels;
};

/// Assembles one batch; augmentation (horizontal flip + 4-pixel pad-and-crop)
/// is a pure function of the augmentation seed.
Batch make_batch(const Dataset& ds, const std::vector<std::int64_t>& indices,
                 std::size_t first, std::size_t count, bool augment,
                 std::uint64_t aug_seed);

}  // namespace microdense

#endif  // MICRODENSE_DATA_HPP_
