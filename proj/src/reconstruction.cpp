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

#include "gradleak/reconstruction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <utility>

#include "gradleak/errors.hpp"
#include "gradleak/ops.hpp"

namespace gradleak {
namespace {

constexpr double kPi = 3.14159265358979323846;

Tensor as_vector(const Tensor& t) {
  if (t.rank() == 1) return t;
  if (t.rank() == 2 && t.dim(0) == 1) return ops::reshape(t, {t.dim(1)});
  throw ShapeError("expected an IR of shape (M) or (1, M), got " + shape_to_string(t.shape()));
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc;
}

}  // namespace

Tensor tv_norm(const Tensor& image) { return ops::tv_norm(image); }

Tensor ir_distance(const Tensor& y, const Tensor& target, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("ir_distance alpha must lie in [0, 1]");
  const Tensor yv = as_vector(y);
  const Tensor tv = as_vector(target.detach());
  if (yv.size() != tv.size()) throw ShapeError("ir_distance: IR lengths differ");
  const std::size_t m = yv.size();

  // Constant target distribution p and its log.
  const auto t = tv.values();
  const double mx = *std::max_element(t.begin(), t.end());
  std::vector<double> log_p(m), p(m);
  double z = 0.0;
  for (std::size_t i = 0; i < m; ++i) z += std::exp(t[i] - mx);
  const double log_z = std::log(z) + mx;
  for (std::size_t i = 0; i < m; ++i) {
    log_p[i] = t[i] - log_z;
    p[i] = std::exp(log_p[i]);
  }
  const Tensor p_t({m}, p);
  const Tensor log_p_t({m}, log_p);
  Tensor kl = ops::sum(ops::mul(p_t, ops::sub(log_p_t, ops::log_softmax(yv))));
  Tensor mse = ops::mean(ops::square(ops::sub(yv, tv)));
  return ops::add(ops::scale(kl, alpha), ops::scale(mse, 1.0 - alpha));
}

void IrMatchConfig::validate() const {
  if (iterations < 1) throw ConfigError("ir_match needs at least one iteration");
  if (restarts < 1) throw ConfigError("ir_match needs at least one restart");
  if (perturb_period < 1) throw ConfigError("perturbation period K1 must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("ir_match alpha must lie in [0, 1]");
  if (!(tv_weight >= 0.0) || !std::isfinite(tv_weight)) {
    throw ConfigError("TV weight must be non-negative");
  }
  if (!(seed_step >= 0.0) || !(generator_step >= 0.0)) {
    throw ConfigError("ir_match step sizes must be non-negative");
  }
}

namespace {

IrMatchResult ir_match_once(const Tensor& goal, const FeatureExtractor& extractor,
                            const GeneratorSpec& generator_spec, const IrMatchConfig& config,
                            std::uint64_t run_seed) {
  Generator gen(generator_spec, derive_seed(run_seed, "generator"));
  Rng rng(derive_seed(run_seed, "seed"));
  const Shape seed_shape{1, generator_spec.channels, generator_spec.height, generator_spec.width};
  std::vector<double> s0(numel(seed_shape));
  for (double& v : s0) v = standard_normal(rng);
  Tensor s(seed_shape, std::move(s0), true);

  std::vector<Tensor*> gen_params;
  for (auto& e : gen.params().entries()) gen_params.push_back(&e.tensor);

  IrMatchResult result;
  result.loss_trace.reserve(static_cast<std::size_t>(config.iterations));
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < config.iterations; ++k) {
    if (k > 0 && k % config.perturb_period == 0) {
      for (double& v : s.mutable_values()) v += standard_normal(rng);
    }
    double loss_value = 0.0, dist_value = 0.0;
    Tensor image;
    {
      Graph graph;
      GraphScope scope(graph);
      image = gen.forward(s, ParamMode::kTrainable);
      Tensor dist = ir_distance(extractor.forward(image, ParamMode::kFrozen), goal, config.alpha);
      Tensor loss = ops::add(dist, ops::scale(ops::tv_norm(image), config.tv_weight));
      loss_value = loss.item();
      dist_value = dist.item();
      if (!std::isfinite(loss_value)) {
        std::ostringstream msg;
        msg << "ir_match diverged at iteration " << k << " (last finite loss " << best << ")";
        throw NumericError(msg.str());
      }
      graph.backward(loss);
    }
    result.loss_trace.push_back(loss_value);
    if (k == 0) result.initial_loss = loss_value;
    if (loss_value < best) {
      best = loss_value;
      result.best_iteration = k;
      result.image = image.clone();
      result.ir_distance = dist_value;
    }
    {
      auto v = s.mutable_values();
      const auto g = s.grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= config.seed_step * g[i];
      s.zero_grad();
    }
    for (Tensor* p : gen_params) {
      if (!p->has_grad()) continue;
      auto v = p->mutable_values();
      const auto g = p->grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= config.generator_step * g[i];
      p->zero_grad();
    }
  }
  result.best_loss = best;
  return result;
}

}  // namespace

IrMatchResult ir_match(const Tensor& target, const FeatureExtractor& extractor,
                       const GeneratorSpec& generator_spec, const IrMatchConfig& config) {
  config.validate();
  const Tensor goal = as_vector(target.detach()).clone();
  if (goal.size() != extractor.ir_dim()) throw ShapeError("target IR length differs from M");
  if (generator_spec.channels != extractor.spec().channels ||
      generator_spec.height != extractor.spec().height ||
      generator_spec.width != extractor.spec().width) {
    throw ShapeError("generator output does not match the extractor input");
  }
  IrMatchResult best = ir_match_once(goal, extractor, generator_spec, config, config.seed);
  for (int r = 1; r < config.restarts; ++r) {
    IrMatchResult next = ir_match_once(goal, extractor, generator_spec, config,
                                       derive_seed(config.seed, static_cast<std::uint64_t>(r)));
    if (next.best_loss < best.best_loss) best = std::move(next);
  }
  return best;
}

PreimageResult preimage_attack(const Tensor& x1, const Tensor& x2,
                               const FeatureExtractor& extractor, const PgdBudget& budget,
                               double tv_weight) {
  budget.validate();
  if (x1.shape() != x2.shape() || x1.rank() != 4 || x1.dim(0) != 1) {
    throw ShapeError("preimage_attack expects two (1, C, H, W) images");
  }
  if (!(tv_weight >= 0.0)) throw ConfigError("TV weight must be non-negative");
  const Tensor y1 = extractor.forward(x1, ParamMode::kFrozen);
  const auto base = x2.values();

  PreimageResult result;
  Tensor current = x2.clone();
  result.initial_distance =
      std::sqrt(squared_distance(y1.values(), extractor.forward(current).values()));
  result.distance_trace.push_back(result.initial_distance);
  result.image = current.clone();
  result.final_distance = result.initial_distance;
  if (result.initial_distance == 0.0 || budget.epsilon == 0.0) return result;

  for (int step = 0; step < budget.steps; ++step) {
    Tensor input = current.clone();
    input.set_requires_grad(true);
    {
      Graph graph;
      GraphScope scope(graph);
      Tensor y2 = extractor.forward(input, ParamMode::kFrozen);
      Tensor loss = ops::sum(ops::square(ops::sub(y2, y1)));
      if (tv_weight > 0.0) loss = ops::add(loss, ops::scale(ops::tv_norm(input), tv_weight));
      graph.backward(loss);
    }
    const double frac = static_cast<double>(step) / static_cast<double>(budget.steps);
    const double lr = budget.step_size * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(kPi * frac)));
    const auto g = input.grad();
    auto c = current.mutable_values();
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double sgn = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      double v = c[i] - lr * sgn;
      v = std::clamp(v, base[i] - budget.epsilon, base[i] + budget.epsilon);
      c[i] = std::clamp(v, 0.0, 1.0);
    }
    const double d =
        std::sqrt(squared_distance(y1.values(), extractor.forward(current).values()));
    result.distance_trace.push_back(d);
    if (d < result.final_distance) {
      result.final_distance = d;
      result.image = current.clone();
    }
  }
  return result;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  std::size_t c = 0, h = 0, w = 0;
  if (image.rank() == 3) {
    c = image.dim(0), h = image.dim(1), w = image.dim(2);
  } else if (image.rank() == 4 && image.dim(0) == 1) {
    c = image.dim(1), h = image.dim(2), w = image.dim(3);
  } else {
    throw ShapeError("write_ppm expects (C, H, W) or (1, C, H, W)");
  }
  if (c != 1 && c != 3) throw ShapeError("write_ppm supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  const auto v = image.values();
  std::vector<unsigned char> bytes(h * w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < 3; ++k) {
        const std::size_t src = ((c == 1 ? 0 : k) * h + y) * w + x;
        const double px = std::clamp(v[src], 0.0, 1.0);
        bytes[(y * w + x) * 3 + k] = static_cast<unsigned char>(std::lround(255.0 * px));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w == 0 || h == 0) {
    throw FormatError("unsupported PPM header in " + path.string());
  }
  in.get();
  std::vector<unsigned char> bytes(w * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw FormatError("truncated PPM " + path.string());
  }
  std::vector<double> v(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < 3; ++k) {
        v[(k * h + y) * w + x] = bytes[(y * w + x) * 3 + k] / 255.0;
      }
    }
  }
  return Tensor({1, 3, h, w}, std::move(v));
}

}  // namespace gradleak
