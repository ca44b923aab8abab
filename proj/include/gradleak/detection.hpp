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

// Client-side inspection of a received model. Hand-crafted leaking layers
// (identity or zero kernels, repeated rows) have weight vectors whose values
// collapse into few histogram bins; trained or random weights do not.

#ifndef GRADLEAK_DETECTION_HPP_
#define GRADLEAK_DETECTION_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gradleak/checkpoint.hpp"
#include "gradleak/models.hpp"

namespace gradleak {

inline constexpr double kDefaultBinWidth = 1e-6;
inline constexpr double kDefaultEntropyThreshold = 0.5;

// Histogram entropy with bins floor(v / bin_width), normalized by
// ln(size). Vectors with fewer than two entries return 1.
double normalized_entropy(std::span<const double> values, double bin_width = kDefaultBinWidth);

struct WeightVectorReport {
  std::string layer;
  std::size_t index = 0;  // output channel for conv, 0 for linear
  std::size_t size = 0;
  double entropy = 0.0;
  bool flagged = false;
};

struct ScanResult {
  std::vector<WeightVectorReport> reports;
  bool anomalous = false;
  double min_entropy = 1.0;
  double percentile3 = 1.0;  // 3rd percentile of the entropies
};

struct ScanOptions {
  double bin_width = kDefaultBinWidth;
  double threshold = kDefaultEntropyThreshold;
};

// Scans every weight tensor: rank-4 tensors per output channel, rank-2
// tensors as one vector. Bias tensors are skipped.
ScanResult scan_checkpoint(const ModelCheckpoint& checkpoint, const ScanOptions& options = {});
ScanResult scan_model(const Classifier& model, const ScanOptions& options = {});

void write_scan_csv(const std::filesystem::path& path, const ScanResult& scan);
std::string scan_verdict_json(const ScanResult& scan, const ScanOptions& options);

// (in_ch, in_ch, k, k) with 1 at (i, i, k/2, k/2).
Tensor make_identity_kernel(std::size_t in_ch, std::size_t k);
Tensor make_zero_kernel(std::size_t out_ch, std::size_t in_ch, std::size_t k);

// Two-layer linear module with identical rows in the first weight (M, N)
// and identical columns in the second (N, C), plus increasing bias cutoffs.
struct RtfModule {
  Tensor w;   // (M, N)
  Tensor b;   // (N)
  Tensor w2;  // (N, C)
  Tensor b2;  // (C)
};
RtfModule make_rtf_module(std::size_t ir_dim, std::size_t width, std::size_t classes = 2);

// Overwrites the first output channels of every conv layer with identity
// kernels (as many as the layer has input channels).
void implant_identity_kernels(FeatureExtractor& extractor);
void implant_zero_kernels(FeatureExtractor& extractor);
// Replaces the head with an RtF module of the same shape.
void implant_rtf_head(Classifier& model);

// FNV-1a 64 over the canonical descriptor text.
std::uint64_t structural_checksum(const std::string& descriptor);

}  // namespace gradleak

#endif  // GRADLEAK_DETECTION_HPP_
