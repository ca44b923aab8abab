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

// Closed-form recovery of head inputs from the first-layer gradient.
//
// For Z = Y w + b the gradients are dw = Y^T dZ and db = 1^T dZ. A column q
// of dZ with a single nonzero entry in row p gives dw(:,q) / db(q) = Y(p,:)
// exactly. The attacker cannot see dZ, so every column with a usable bias
// gradient becomes a candidate and near-duplicates are merged. The oracle
// side uses ground-truth activations and is for evaluation only.

#ifndef GRADLEAK_LEAKAGE_HPP_
#define GRADLEAK_LEAKAGE_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "gradleak/checkpoint.hpp"
#include "gradleak/federation.hpp"
#include "gradleak/models.hpp"

namespace gradleak {

inline constexpr double kDefaultBiasTolerance = 1e-9;
inline constexpr double kDefaultDedupeCosine = 0.999;
inline constexpr double kDefaultMatchCosineDistance = 1e-4;

struct IrCandidate {
  std::vector<double> vector;  // length M
  std::size_t source_column = 0;
  double bias_gradient = 0.0;  // |db(q)|
  int group = -1;              // set by dedupe_candidates
};

std::vector<IrCandidate> extract_candidate_irs(const GradientUpdate& update,
                                               double tol = kDefaultBiasTolerance);
// Same, from raw dw (M, N) and db (N).
std::vector<IrCandidate> extract_candidate_irs(const Tensor& grad_w, const Tensor& grad_b,
                                               double tol = kDefaultBiasTolerance);

// Greedy clustering in descending |db| order: a candidate joins the first
// group whose seed it matches with cosine >= threshold, else opens a group.
// Each group is replaced by its mean; output keeps descending |db| order.
std::vector<IrCandidate> dedupe_candidates(std::vector<IrCandidate> candidates,
                                           double cos_threshold = kDefaultDedupeCosine);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct LeakageReport {
  double rate = 0.0;
  std::size_t batch_size = 0;
  // Rows that own at least one single-nonzero column, ascending.
  std::vector<std::size_t> exclusive_rows;
  // (row, column) for every single-nonzero column.
  std::vector<std::pair<std::size_t, std::size_t>> exclusive_columns;
};

// dZ = dZ' masked by Z > 0; counts columns with exactly one nonzero and
// returns (# distinct owning rows) / B.
LeakageReport leakage_report(const Tensor& z, const Tensor& z_act, const Tensor& z_act_grad);
double leakage_rate_oracle(const Tensor& z, const Tensor& z_act, const Tensor& z_act_grad);

// Oracle rate of one cross-entropy step of `head` on the given IRs.
double measure_leakage_rate(const SpabHead& head, const Tensor& irs,
                            std::span<const int> labels);

struct RecoveryMatch {
  std::size_t candidate = 0;  // index into the candidate list
  std::size_t row = 0;        // batch row it matches
  double cosine_distance = 0.0;
};

// Evaluation mode: pairs candidates with ground-truth rows of Y (B, M)
// whose cosine distance is within `max_distance`, keeping the closest row.
std::vector<RecoveryMatch> match_candidates(std::span<const IrCandidate> candidates,
                                            const Tensor& irs,
                                            double max_distance = kDefaultMatchCosineDistance);
// Distinct matched rows / B.
double attacker_recovery_rate(std::span<const IrCandidate> candidates, const Tensor& irs,
                              double max_distance = kDefaultMatchCosineDistance);

ModelCheckpoint candidates_to_checkpoint(std::span<const IrCandidate> candidates,
                                         std::size_t ir_dim);
std::vector<IrCandidate> candidates_from_checkpoint(const ModelCheckpoint& checkpoint);

}  // namespace gradleak

#endif  // GRADLEAK_LEAKAGE_HPP_
