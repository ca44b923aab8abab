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

// One FedSGD interaction of federated transfer learning: the client holds a
// frozen, publicly pretrained feature extractor and uploads the gradient of
// the classification head only, optionally through a Gaussian mechanism.

#ifndef GRADLEAK_FEDERATION_HPP_
#define GRADLEAK_FEDERATION_HPP_

#include <cstdint>
#include <optional>
#include <span>

#include "gradleak/checkpoint.hpp"
#include "gradleak/data.hpp"
#include "gradleak/models.hpp"
#include "gradleak/rng.hpp"

namespace gradleak {

// Head gradients; the only payload a client sends.
struct GradientUpdate {
  Tensor grad_w;   // (M, N)
  Tensor grad_b;   // (N)
  Tensor grad_w2;  // (N, C)
  Tensor grad_b2;  // (C)
  std::size_t batch_size = 0;  // evaluation metadata
  bool dp_applied = false;

  double l2_norm() const;
  // Checks shapes against the head and finiteness of every entry.
  void validate(const SpabHead& head) const;
};

// Everything the client computed for one batch, including ground-truth
// activations that only evaluation code may look at.
struct ClientTrace {
  GradientUpdate update;
  Tensor irs;         // (B, M)
  Tensor z;           // (B, N)
  Tensor z_act;       // (B, N)
  Tensor z_act_grad;  // dL/dZ' (B, N)
  Tensor z_grad;      // dL/dZ (B, N)
};

// Mean cross-entropy gradient over the batch w.r.t. head parameters only.
GradientUpdate client_update(const FeatureExtractor& extractor, const SpabHead& head,
                             const Tensor& images, std::span<const int> labels);
ClientTrace trace_client_update(const FeatureExtractor& extractor, const SpabHead& head,
                                const Tensor& images, std::span<const int> labels);
ClientTrace trace_head_update(const SpabHead& head, const Tensor& irs,
                              std::span<const int> labels);

struct DpConfig {
  double epsilon = 1e3;
  double delta = 1e-4;
  double clip = 100.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Scales the whole update so its global L2 norm is at most `threshold`.
GradientUpdate clip_gradient(GradientUpdate update, double threshold);

// sigma = S_f * sqrt(2 ln(1.25 / delta)) / epsilon
double gaussian_sigma(double epsilon, double delta, double clip);

// Clip, then add i.i.d. N(0, sigma^2) to every entry. Throws if the update
// already went through the mechanism.
GradientUpdate apply_dp(GradientUpdate update, const DpConfig& config);

struct ServerState {
  FeatureExtractor extractor;  // broadcast once, frozen on the client
  SpabHead head;               // broadcast every round
};

struct RoundResult {
  GradientUpdate update;
  Batch batch;
  ClientTrace clean;  // pre-DP trace, evaluation only
};

RoundResult run_round_traced(const ServerState& server, const Dataset& client_data,
                             std::size_t batch_size, Rng& rng,
                             const std::optional<DpConfig>& dp);
GradientUpdate run_round(const ServerState& server, const Dataset& client_data,
                         std::size_t batch_size, Rng& rng,
                         const std::optional<DpConfig>& dp);

// Batch-size weighted mean of client updates, summed in the given order.
GradientUpdate aggregate(std::span<const GradientUpdate> updates);

ModelCheckpoint to_checkpoint(const GradientUpdate& update);
GradientUpdate gradient_update_from_checkpoint(const ModelCheckpoint& checkpoint);

}  // namespace gradleak

#endif  // GRADLEAK_FEDERATION_HPP_
