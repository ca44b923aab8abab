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

#include "gradleak/federation.hpp"

#include <cmath>

#include "gradleak/errors.hpp"
#include "gradleak/ops.hpp"

namespace gradleak {
namespace {

std::vector<Tensor*> parts(GradientUpdate& u) {
  return {&u.grad_w, &u.grad_b, &u.grad_w2, &u.grad_b2};
}

std::vector<const Tensor*> parts(const GradientUpdate& u) {
  return {&u.grad_w, &u.grad_b, &u.grad_w2, &u.grad_b2};
}

}  // namespace

double GradientUpdate::l2_norm() const {
  double acc = 0.0;
  for (const Tensor* t : parts(*this)) {
    for (double v : t->values()) acc += v * v;
  }
  return std::sqrt(acc);
}

void GradientUpdate::validate(const SpabHead& head) const {
  if (grad_w.shape() != head.w.shape() || grad_b.shape() != head.b.shape() ||
      grad_w2.shape() != head.w2.shape() || grad_b2.shape() != head.b2.shape()) {
    throw ShapeError("gradient update does not match the head shapes");
  }
  for (const Tensor* t : parts(*this)) {
    for (double v : t->values()) {
      if (!std::isfinite(v)) throw NumericError("gradient update has non-finite entries");
    }
  }
}

ClientTrace trace_head_update(const SpabHead& head, const Tensor& irs,
                              std::span<const int> labels) {
  SpabHead local = head;
  ClientTrace trace;
  trace.irs = irs.detach();
  {
    Graph graph;
    GraphScope scope(graph);
    SpabOutput out = forward_spab(local, trace.irs, ParamMode::kTrainable);
    Tensor loss = ops::cross_entropy(out.logits, labels);
    graph.backward(loss);
    trace.z = out.z.clone();
    trace.z_act = out.z_act.clone();
    trace.z_act_grad = out.z_act.grad_tensor();
    trace.z_grad = out.z.grad_tensor();
  }
  trace.update.grad_w = local.w.grad_tensor();
  trace.update.grad_b = local.b.grad_tensor();
  trace.update.grad_w2 = local.w2.grad_tensor();
  trace.update.grad_b2 = local.b2.grad_tensor();
  trace.update.batch_size = irs.dim(0);
  return trace;
}

ClientTrace trace_client_update(const FeatureExtractor& extractor, const SpabHead& head,
                                const Tensor& images, std::span<const int> labels) {
  // The extractor is frozen: its forward never touches a graph.
  Tensor irs = extractor.forward(images, ParamMode::kFrozen);
  return trace_head_update(head, irs, labels);
}

GradientUpdate client_update(const FeatureExtractor& extractor, const SpabHead& head,
                             const Tensor& images, std::span<const int> labels) {
  return trace_client_update(extractor, head, images, labels).update;
}

void DpConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("DP epsilon must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("DP delta must lie in (0, 1)");
  if (!(clip > 0.0) || !std::isfinite(clip)) throw ConfigError("DP clip threshold must be positive");
}

GradientUpdate clip_gradient(GradientUpdate update, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("clip threshold must be positive");
  const double norm = update.l2_norm();
  if (norm > threshold) {
    const double factor = threshold / norm;
    for (Tensor* t : parts(update)) {
      Tensor scaled = t->clone();
      for (double& v : scaled.mutable_values()) v *= factor;
      *t = std::move(scaled);
    }
  }
  return update;
}

double gaussian_sigma(double epsilon, double delta, double clip) {
  DpConfig{epsilon, delta, clip, 0}.validate();
  return clip * std::sqrt(2.0 * std::log(1.25 / delta)) / epsilon;
}

GradientUpdate apply_dp(GradientUpdate update, const DpConfig& config) {
  config.validate();
  if (update.dp_applied) {
    throw ConfigError("DP mechanism already applied to this update (single-shot)");
  }
  update = clip_gradient(std::move(update), config.clip);
  const double sigma = gaussian_sigma(config.epsilon, config.delta, config.clip);
  Rng rng(config.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Tensor* t : parts(update)) {
    Tensor noisy = t->clone();
    for (double& v : noisy.mutable_values()) v += sigma * noise(rng);
    *t = std::move(noisy);
  }
  update.dp_applied = true;
  return update;
}

RoundResult run_round_traced(const ServerState& server, const Dataset& client_data,
                             std::size_t batch_size, Rng& rng,
                             const std::optional<DpConfig>& dp) {
  RoundResult result;
  result.batch = sample_batch(client_data, batch_size, rng);
  result.clean = trace_client_update(server.extractor, server.head, result.batch.images,
                                     result.batch.labels);
  result.update = result.clean.update;
  if (dp) result.update = apply_dp(std::move(result.update), *dp);
  return result;
}

GradientUpdate run_round(const ServerState& server, const Dataset& client_data,
                         std::size_t batch_size, Rng& rng,
                         const std::optional<DpConfig>& dp) {
  return run_round_traced(server, client_data, batch_size, rng, dp).update;
}

GradientUpdate aggregate(std::span<const GradientUpdate> updates) {
  if (updates.empty()) throw ConfigError("nothing to aggregate");
  std::size_t total = 0;
  for (const auto& u : updates) total += u.batch_size;
  if (total == 0) throw ConfigError("aggregate needs nonzero batch sizes");
  GradientUpdate out;
  out.grad_w = Tensor::zeros(updates[0].grad_w.shape());
  out.grad_b = Tensor::zeros(updates[0].grad_b.shape());
  out.grad_w2 = Tensor::zeros(updates[0].grad_w2.shape());
  out.grad_b2 = Tensor::zeros(updates[0].grad_b2.shape());
  out.batch_size = total;
  for (const auto& u : updates) {
    const double weight = static_cast<double>(u.batch_size) / static_cast<double>(total);
    auto dst = parts(out);
    auto src = parts(u);
    for (std::size_t p = 0; p < dst.size(); ++p) {
      if (src[p]->shape() != dst[p]->shape()) throw ShapeError("aggregate: mismatched updates");
      auto d = dst[p]->mutable_values();
      auto s = src[p]->values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += weight * s[i];
    }
    out.dp_applied = out.dp_applied || u.dp_applied;
  }
  return out;
}

ModelCheckpoint to_checkpoint(const GradientUpdate& update) {
  ModelCheckpoint ckpt;
  ckpt.descriptor = format_descriptor(
      {{"gradient_update",
        {static_cast<long long>(update.grad_w.dim(0)), static_cast<long long>(update.grad_w.dim(1)),
         static_cast<long long>(update.grad_w2.dim(1)), static_cast<long long>(update.batch_size),
         update.dp_applied ? 1LL : 0LL}}});
  ckpt.tensors = {{"grad.w", update.grad_w.clone()},
                  {"grad.b", update.grad_b.clone()},
                  {"grad.w2", update.grad_w2.clone()},
                  {"grad.b2", update.grad_b2.clone()}};
  return ckpt;
}

GradientUpdate gradient_update_from_checkpoint(const ModelCheckpoint& checkpoint) {
  const auto tokens = parse_descriptor(checkpoint.descriptor);
  if (tokens.size() != 1 || tokens[0].name != "gradient_update" || tokens[0].args.size() != 5) {
    throw FormatError("descriptor is not a gradient update: " + checkpoint.descriptor);
  }
  const auto& a = tokens[0].args;
  GradientUpdate u;
  u.grad_w = checkpoint.find("grad.w").clone();
  u.grad_b = checkpoint.find("grad.b").clone();
  u.grad_w2 = checkpoint.find("grad.w2").clone();
  u.grad_b2 = checkpoint.find("grad.b2").clone();
  u.batch_size = static_cast<std::size_t>(a[3]);
  u.dp_applied = a[4] != 0;
  const Shape w{static_cast<std::size_t>(a[0]), static_cast<std::size_t>(a[1])};
  const Shape w2{static_cast<std::size_t>(a[1]), static_cast<std::size_t>(a[2])};
  if (u.grad_w.shape() != w || u.grad_b.shape() != Shape{w[1]} || u.grad_w2.shape() != w2 ||
      u.grad_b2.shape() != Shape{w2[1]}) {
    throw FormatError("gradient update tensors do not match descriptor");
  }
  return u;
}

}  // namespace gradleak
