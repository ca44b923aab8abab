// Copyright 2026 The gradleak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef GRADLEAK_DATA_HPP_
#define GRADLEAK_DATA_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gradleak/rng.hpp"
#include "gradleak/tensor.hpp"

namespace gradleak {

enum class Split { kPublic, kPrivate };

// Two disjoint synthetic image families. "geometric" draws bright shapes on
// dark backgrounds; "texture" draws bright periodic or blocky patterns.
enum class SynthFamily { kGeometric, kTexture };

SynthFamily parse_family(const std::string& name);
std::string family_name(SynthFamily family);

struct Dataset {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  Split split = Split::kPublic;
  // One (C, H, W) row-major image per sample, pixels in [0, 1].
  std::vector<std::vector<double>> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
  std::size_t pixels() const { return channels * height * width; }
  // (1, C, H, W)
  Tensor image(std::size_t index) const;
  // (B, C, H, W) in the given order.
  Tensor stack(std::span<const std::size_t> indices) const;
  std::vector<int> labels_of(std::span<const std::size_t> indices) const;
  // Checks length agreement, pixel range and label range.
  void validate() const;
};

struct Batch {
  Tensor images;  // (B, C, H, W)
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

// Deterministic given the seed; labels are balanced (i mod classes) and
// shuffled. size must be 16 or 32, classes in [1, 10].
Dataset synth_dataset(std::uint64_t seed, std::size_t count, std::size_t classes,
                      std::size_t size, SynthFamily family,
                      Split split = Split::kPublic);

// Standard CIFAR-10 binary batch: 1 label byte + 3072 channel-major pixels.
Dataset parse_cifar10_binary(std::span<const std::uint8_t> bytes);
Dataset load_cifar10_binary(const std::filesystem::path& path);

// label -> (label + 1) mod classes, so no sample keeps its label.
Dataset mislabel(const Dataset& dataset);

// Uniform sample without replacement.
Batch sample_batch(const Dataset& dataset, std::size_t batch_size, Rng& rng);

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices);

}  // namespace gradleak

#endif  // GRADLEAK_DATA_HPP_
