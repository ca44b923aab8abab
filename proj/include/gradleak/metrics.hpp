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

#ifndef GRADLEAK_METRICS_HPP_
#define GRADLEAK_METRICS_HPP_

#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "gradleak/tensor.hpp"

namespace gradleak {

inline constexpr std::size_t kSsimWindow = 8;
// Success threshold on SSIM for counting a sample as reconstructed.
inline constexpr double kDefaultSsimThreshold = 0.3;

// -10 log10(MSE) for images in [0, 1]; +infinity when identical.
double psnr(const Tensor& reconstructed, const Tensor& reference);

// Mean SSIM over every 8x8 window (stride 1) of every channel, uniform
// weights, C1 = 0.01^2, C2 = 0.03^2. Accepts (C, H, W) or (1, C, H, W).
double ssim(const Tensor& reconstructed, const Tensor& reference);

struct ImagePair {
  Tensor reconstructed;
  Tensor reference;
};

// Fraction of pairs whose SSIM exceeds the threshold.
double reconstruction_rate(std::span<const ImagePair> pairs,
                           double ssim_threshold = kDefaultSsimThreshold);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};
MeanStd mean_std(std::span<const double> values);

}  // namespace gradleak

#endif  // GRADLEAK_METRICS_HPP_
