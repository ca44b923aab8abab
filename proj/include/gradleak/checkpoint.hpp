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

// Binary tensor container shared by models, gradient updates and IR
// candidates. Layout (all integers little-endian):
//
//   "GLCK" | u32 version | u32 len | descriptor (UTF-8) | u32 count |
//   count x ( u32 len | name | u32 rank | rank x u64 extent | f64 values )
//
// The descriptor is a ';'-separated list of layer tokens such as
// "input(3,16,16);conv(16,3,1);relu;maxpool;flatten;linear(128);spab(128,4)".

#ifndef GRADLEAK_CHECKPOINT_HPP_
#define GRADLEAK_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradleak/tensor.hpp"

namespace gradleak {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ModelCheckpoint {
  std::string descriptor;
  std::vector<NamedTensor> tensors;

  // Throws FormatError when absent.
  const Tensor& find(std::string_view name) const;
  bool contains(std::string_view name) const;
};

struct DescriptorToken {
  std::string name;
  std::vector<long long> args;

  bool operator==(const DescriptorToken&) const = default;
};

// Throws FormatError on syntax errors or unknown layer names.
std::vector<DescriptorToken> parse_descriptor(std::string_view descriptor);
std::string format_descriptor(const std::vector<DescriptorToken>& tokens);

std::vector<std::uint8_t> save_checkpoint(const ModelCheckpoint& checkpoint);
ModelCheckpoint load_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint_file(const std::filesystem::path& path,
                           const ModelCheckpoint& checkpoint);
ModelCheckpoint read_checkpoint_file(const std::filesystem::path& path);

}  // namespace gradleak

#endif  // GRADLEAK_CHECKPOINT_HPP_
