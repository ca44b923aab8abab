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

// Networks used by the pipeline: a convolutional feature extractor producing
// an IR vector per sample, the linear-ReLU-linear classification head and a
// small U-net style image generator. Copying any model deep-copies its
// parameters.

#ifndef GRADLEAK_MODELS_HPP_
#define GRADLEAK_MODELS_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gradleak/checkpoint.hpp"
#include "gradleak/tensor.hpp"

namespace gradleak {

// kTrainable forwards through the parameter leaves themselves so backward
// fills their grads; kFrozen forwards through detached aliases.
enum class ParamMode { kTrainable, kFrozen };

// Ordered named parameters. Copies clone the underlying storage.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  void add(std::string name, Tensor tensor);
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);
  std::vector<NamedTensor>& entries() { return entries_; }
  const std::vector<NamedTensor>& entries() const { return entries_; }
  void zero_grad();

 private:
  std::vector<NamedTensor> entries_;
};

enum class LayerKind { kConv, kRelu, kMaxPool, kFlatten, kLinear };

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t out = 0;      // conv out-channels or linear width
  std::size_t kernel = 0;   // conv only
  std::size_t padding = 0;  // conv only

  bool operator==(const LayerSpec&) const = default;
};

struct FeatureExtractorSpec {
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::vector<LayerSpec> layers;

  // conv(C->16,3,p1)-relu-pool, conv(16->32,3,p1)-relu-pool, flatten,
  // linear -> ir_dim.
  static FeatureExtractorSpec desk_default(std::size_t channels,
                                           std::size_t height,
                                           std::size_t width,
                                           std::size_t ir_dim = 128);

  // Validates the layer list and returns the IR width M.
  std::size_t ir_dim() const;
  std::vector<DescriptorToken> descriptor_tokens() const;

  bool operator==(const FeatureExtractorSpec&) const = default;
};

class FeatureExtractor {
 public:
  // He-normal weights, zero biases.
  FeatureExtractor(FeatureExtractorSpec spec, std::uint64_t seed);
  FeatureExtractor(FeatureExtractorSpec spec, ParameterSet params);

  // x: (B, C, H, W) -> (B, M).
  Tensor forward(const Tensor& x, ParamMode mode = ParamMode::kFrozen) const;

  const FeatureExtractorSpec& spec() const { return spec_; }
  std::size_t ir_dim() const { return ir_dim_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

 private:
  FeatureExtractorSpec spec_;
  std::size_t ir_dim_ = 0;
  ParameterSet params_;
};

// Z = Y w + b, Z' = relu(Z), logits = Z' w2 + b2.
struct SpabHead {
  Tensor w;   // (M, N)
  Tensor b;   // (N)
  Tensor w2;  // (N, C)
  Tensor b2;  // (C)

  SpabHead() = default;
  SpabHead(Tensor w, Tensor b, Tensor w2, Tensor b2);
  SpabHead(const SpabHead& other);
  SpabHead& operator=(const SpabHead& other);
  SpabHead(SpabHead&&) noexcept = default;
  SpabHead& operator=(SpabHead&&) noexcept = default;

  // He-normal weights, zero biases (b = 0 as required before SpAB-training).
  static SpabHead random(std::size_t ir_dim, std::size_t width,
                         std::size_t classes, std::uint64_t seed);

  std::size_t ir_dim() const { return w.dim(0); }
  std::size_t width() const { return w.dim(1); }
  std::size_t classes() const { return w2.dim(1); }
  std::vector<Tensor*> parameters();
  void zero_grad();
};

struct SpabOutput {
  Tensor logits;  // (B, C)
  Tensor z;       // (B, N) pre-activation
  Tensor z_act;   // (B, N) post-ReLU
};

SpabOutput forward_spab(const SpabHead& head, const Tensor& ir,
                        ParamMode mode = ParamMode::kFrozen);

// Feature extractor followed by a SpAB-shaped head.
struct Classifier {
  FeatureExtractor extractor;
  SpabHead head;

  Tensor logits(const Tensor& x, ParamMode mode = ParamMode::kFrozen) const;
  std::string descriptor() const;
  std::size_t classes() const { return head.classes(); }
};

Tensor forward_feature_extractor(const FeatureExtractor& fe, const Tensor& x);

struct GeneratorSpec {
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t widths[3] = {16, 32, 64};

  std::vector<DescriptorToken> descriptor_tokens() const;
  bool operator==(const GeneratorSpec&) const = default;
};

// Three-level encoder-decoder with nearest upsampling, concatenation skips
// and a sigmoid output, so images always lie in (0, 1).
class Generator {
 public:
  Generator(GeneratorSpec spec, std::uint64_t seed);
  Generator(GeneratorSpec spec, ParameterSet params);

  // seed tensor s: (1, C, H, W), same shape as the produced image.
  Tensor forward(const Tensor& s, ParamMode mode = ParamMode::kFrozen) const;

  const GeneratorSpec& spec() const { return spec_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

 private:
  GeneratorSpec spec_;
  ParameterSet params_;
};

Tensor forward_generator(const Generator& gen, const Tensor& s);

ModelCheckpoint to_checkpoint(const Classifier& model);
Classifier classifier_from_checkpoint(const ModelCheckpoint& checkpoint);
ModelCheckpoint to_checkpoint(const Generator& gen);
Generator generator_from_checkpoint(const ModelCheckpoint& checkpoint);

}  // namespace gradleak

#endif  // GRADLEAK_MODELS_HPP_
