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

// Pretraining: natural and L-infinity PGD adversarial training of the full
// classifier, and sparsity-regularized training of the head on top of a
// frozen extractor.

#ifndef GRADLEAK_TRAINING_HPP_
#define GRADLEAK_TRAINING_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gradleak/data.hpp"
#include "gradleak/models.hpp"

namespace gradleak {

struct PgdBudget {
  double epsilon = 4.0 / 255.0;
  double step_size = 1.0 / 255.0;
  int steps = 10;

  // epsilon == 0 is accepted and turns the attack into the identity.
  void validate() const;
};

// Untargeted L-infinity PGD from X (no random start), maximizing mean
// cross-entropy. Iterates stay inside the epsilon ball and [0, 1].
Tensor pgd_attack(const Classifier& model, const Tensor& images, std::span<const int> labels,
                  const PgdBudget& budget);

struct AdvTrainConfig {
  int epochs = 10;
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  PgdBudget budget;
  // Samples used for the per-epoch accuracy history (0 = skip).
  std::size_t eval_count = 200;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double natural_accuracy = 0.0;
  double robust_accuracy = 0.0;
};

struct AdvTrainResult {
  Classifier model;
  std::vector<EpochRecord> history;
};

AdvTrainResult adversarial_train(const Classifier& init, const Dataset& pub,
                                 const AdvTrainConfig& config);
// adversarial_train with a zero budget.
AdvTrainResult natural_train(const Classifier& init, const Dataset& pub, AdvTrainConfig config);

double accuracy(const Classifier& model, const Dataset& data, std::size_t limit = 0);
// Fraction correct on both the clean and the attacked input.
double robust_accuracy(const Classifier& model, const Dataset& data, const PgdBudget& budget,
                       std::size_t limit = 0);

// (beta1 / N) sum |Z'| + (beta2 / (B N)) sum log(1 + exp(-Z)).
Tensor sparsity_loss(const Tensor& z, const Tensor& z_act, double beta1, double beta2);

// 1 - cos^2(k pi / 2K), 1 <= k <= K.
double alpha_schedule(int k, int total);

struct SpabTrainConfig {
  int epochs = 100;
  double lr = 0.01;
  double beta1 = 100.0;
  double beta2 = 1.0;
  double sigma = 0.01;
  std::size_t batch_size = 64;
  std::size_t batches_per_epoch = 8;
  std::uint64_t seed = 0;

  void validate() const;
  // Large-scale magnitudes for a 512-wide head; kept for reference runs.
  static SpabTrainConfig wide_preset();
};

struct SpabEpoch {
  int epoch = 0;  // 0 is the state before training
  double alpha = 0.0;
  double l_cls = 0.0;
  double l_sp = 0.0;
  double leakage_rate = 0.0;
};

struct SpabTrainResult {
  SpabHead head;
  std::vector<SpabEpoch> trace;
};

// Probe IRs and labels used for the per-epoch leakage rate.
struct ProbeBatch {
  Tensor irs;  // (B, M)
  std::vector<int> labels;
};

ProbeBatch make_probe(const FeatureExtractor& extractor, const Dataset& data,
                      std::size_t batch_size, std::uint64_t seed);

// Trains a copy of `initial` (its first-layer bias is reset to zero) on the
// IRs of `pub`. The extractor is only read.
SpabTrainResult spab_train(const FeatureExtractor& extractor, const SpabHead& initial,
                           const Dataset& pub, const SpabTrainConfig& config,
                           const ProbeBatch& probe);
// Same with precomputed IRs (rows aligned with labels).
SpabTrainResult spab_train_irs(const SpabHead& initial, const Tensor& irs,
                               std::span<const int> labels, const SpabTrainConfig& config,
                               const ProbeBatch& probe);

// Plain cross-entropy SGD on the head alone, same batching as spab_train.
SpabHead train_head(const SpabHead& initial, const Tensor& irs, std::span<const int> labels,
                    const SpabTrainConfig& config);

double head_accuracy(const SpabHead& head, const Tensor& irs, std::span<const int> labels);

// IRs of every sample of `data`, (n, M), computed in chunks.
Tensor compute_irs(const FeatureExtractor& extractor, const Dataset& data);

void write_training_curve_csv(const std::filesystem::path& path,
                              std::span<const SpabEpoch> trace);

}  // namespace gradleak

#endif  // GRADLEAK_TRAINING_HPP_
