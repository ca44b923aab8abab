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

// Experiment orchestration. Every stage reads and writes a fixed set of
// files under the output directory and leaves a stamp keyed by the config
// hash and the bytes of its inputs, so reruns are no-ops.
//
// Output layout:
//   model_natural.glck model_robust.glck pretrain_history.csv   pretrain-at
//   model_spab.glck training_curve.csv                           spab-train
//   update.glck batch.json batch/img_NN.ppm                      fed-round
//   candidates.glck candidates.json                              extract
//   reconstructions.glck reconstruct.json recon/rec_NN.ppm       reconstruct
//   preimage.csv preimage.json                                   preimage
//   detect.csv detect.json                                       detect
//   metrics.csv matches.csv [sweep_batch_size.csv]               evaluate
//   stamps/<stage>.stamp

#ifndef GRADLEAK_PIPELINE_HPP_
#define GRADLEAK_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradleak/data.hpp"
#include "gradleak/federation.hpp"
#include "gradleak/reconstruction.hpp"
#include "gradleak/training.hpp"

namespace gradleak {

// An upstream artifact is absent.
class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string family = "geometric";
  std::size_t image_size = 16;
  std::size_t classes = 4;
  std::size_t public_count = 1000;
  std::size_t private_count = 200;
  // Optional CIFAR-10 binary batches replacing the synthetic splits.
  std::string cifar_public;
  std::string cifar_private;
};

struct ModelConfig {
  std::size_t ir_dim = 128;
  std::size_t spab_width = 128;  // kappa
};

struct RoundConfig {
  std::size_t batch_size = 8;
  bool dp = false;
  DpConfig dp_config;  // seed is derived from the master seed
};

struct ReconstructConfig {
  IrMatchConfig ir_match;  // seed is derived per candidate
  std::size_t max_candidates = 8;
};

struct PreimageConfig {
  std::size_t pairs = 4;
  PgdBudget budget{4.0 / 255.0, 1.0 / 255.0, 100};
  double tv_weight = 0.0;
};

struct EvaluateConfig {
  std::size_t sweep_seeds = 5;
  std::size_t batches_per_seed = 4;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  AdvTrainConfig pretrain;
  SpabTrainConfig spab;
  std::size_t probe_batch = 64;
  RoundConfig round;
  ReconstructConfig reconstruct;
  PreimageConfig preimage;
  EvaluateConfig evaluate;
  std::filesystem::path out_dir = "gradleak_out";
  std::uint64_t seed = 0;

  ExperimentConfig();

  void validate() const;
  // Lossless JSON round trip. Stage seeds are not stored; they are derived
  // from `seed`.
  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  // FNV-1a 64 over the JSON form without out_dir, as 16 hex digits.
  std::string hash() const;
};

// Splits regenerated from the config.
Dataset load_public(const ExperimentConfig& config);
Dataset load_private(const ExperimentConfig& config);

struct RunOptions {
  std::size_t jobs = 1;
  // detect: checkpoint to scan instead of model_spab.glck.
  std::optional<std::filesystem::path> checkpoint;
  // evaluate: batch sizes for the leakage sweep.
  std::vector<std::size_t> sweep_batch_sizes;
};

struct StageOutcome {
  bool skipped = false;
  bool anomalous = false;  // detect verdict
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitAnomalous = 3;
inline constexpr int kExitMissingInput = 4;
inline constexpr int kExitNumeric = 5;

const std::vector<std::string>& stage_names();

// Runs one stage ("demo" chains all of them). Throws MissingInputError,
// ConfigError, NumericError or FormatError.
StageOutcome run_stage(const std::string& stage, const ExperimentConfig& config,
                       const RunOptions& options);

// One ir_match per target on up to `jobs` threads. Job i uses the seed
// derive_seed(config.seed, i); results are independent of `jobs`.
std::vector<IrMatchResult> ir_match_many(std::span<const Tensor> targets,
                                         const FeatureExtractor& extractor,
                                         const GeneratorSpec& generator,
                                         const IrMatchConfig& config, std::size_t jobs);

// Verbosity from GRADLEAK_LOG: "quiet", "info" (default) or "debug".
enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };
LogLevel log_level();
void log_message(LogLevel level, const std::string& message);

// Exit code and one-line JSON record for an exception thrown by run_stage.
int exit_code_for(const std::exception& error);
std::string error_record(const std::string& stage, const std::exception& error);

}  // namespace gradleak

#endif  // GRADLEAK_PIPELINE_HPP_
