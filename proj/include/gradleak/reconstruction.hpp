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

// Image inversion from leaked IRs. ir_match optimizes both the seed and the
// weights of an untrained generator so that the frozen extractor maps the
// generated image onto the target IR; preimage_attack searches for a small
// perturbation that makes two images collide in IR space.

#ifndef GRADLEAK_RECONSTRUCTION_HPP_
#define GRADLEAK_RECONSTRUCTION_HPP_

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gradleak/models.hpp"
#include "gradleak/training.hpp"

namespace gradleak {

Tensor tv_norm(const Tensor& image);

// alpha * KL(softmax(target) || softmax(y)) + (1 - alpha) * MSE(y, target).
// `target` is a constant; y may carry gradients.
Tensor ir_distance(const Tensor& y, const Tensor& target, double alpha);

struct IrMatchConfig {
  int iterations = 2000;
  int perturb_period = 200;
  double seed_step = 0.05;
  double generator_step = 0.05;
  double alpha = 0.5;
  double tv_weight = 1e-4;
  // Independent runs; the one with the lowest best loss is returned.
  int restarts = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct IrMatchResult {
  Tensor image;  // (1, C, H, W) at the best-loss iterate
  double best_loss = 0.0;
  int best_iteration = 0;
  double initial_loss = 0.0;
  // ir_distance part of the loss at the best iterate.
  double ir_distance = 0.0;
  std::vector<double> loss_trace;
};

// target: length-M IR, shape (M) or (1, M).
IrMatchResult ir_match(const Tensor& target, const FeatureExtractor& extractor,
                       const GeneratorSpec& generator, const IrMatchConfig& config);

struct PreimageResult {
  Tensor image;  // x2 + delta at the closest iterate
  // L2 IR distance before the first step and after every step.
  std::vector<double> distance_trace;
  double initial_distance = 0.0;
  double final_distance = 0.0;

  double ratio() const {
    return initial_distance == 0.0 ? 0.0 : final_distance / initial_distance;
  }
};

// Signed-gradient PGD on delta minimizing ||fe(x1) - fe(x2 + delta)||^2 +
// tv_weight * TV(x2 + delta) inside the L-infinity ball. The step size is
// cosine-annealed from budget.step_size to 1% of it.
PreimageResult preimage_attack(const Tensor& x1, const Tensor& x2,
                               const FeatureExtractor& extractor, const PgdBudget& budget,
                               double tv_weight = 0.0);

// Binary PPM (P6). One-channel images are written as gray.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

}  // namespace gradleak

#endif  // GRADLEAK_RECONSTRUCTION_HPP_
