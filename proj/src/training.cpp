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

#include "gradleak/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "gradleak/errors.hpp"
#include "gradleak/leakage.hpp"
#include "gradleak/ops.hpp"

namespace gradleak {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::size_t kIrChunk = 64;

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t width = x.size() / x.dim(0);
  std::vector<double> out;
  out.reserve(rows.size() * width);
  const auto v = x.values();
  for (std::size_t r : rows) {
    out.insert(out.end(), v.begin() + r * width, v.begin() + (r + 1) * width);
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  return Tensor(std::move(shape), std::move(out));
}

std::vector<int> gather_labels(std::span<const int> labels, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

void sgd_step(std::span<Tensor* const> params, double lr) {
  for (Tensor* p : params) {
    if (!p->has_grad()) continue;
    auto v = p->mutable_values();
    const auto g = p->grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    p->zero_grad();
  }
}

std::vector<Tensor*> classifier_parameters(Classifier& model) {
  std::vector<Tensor*> out;
  for (auto& e : model.extractor.params().entries()) out.push_back(&e.tensor);
  for (Tensor* p : model.head.parameters()) out.push_back(p);
  return out;
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t c = logits.dim(1);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (argmax_row(logits.values().subspan(i * c, c)) == static_cast<std::size_t>(labels[i])) {
      ++ok;
    }
  }
  return ok;
}

std::vector<bool> correct_mask(const Tensor& logits, std::span<const int> labels) {
  const std::size_t c = logits.dim(1);
  std::vector<bool> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i] = argmax_row(logits.values().subspan(i * c, c)) ==
             static_cast<std::size_t>(labels[i]);
  }
  return out;
}

std::size_t effective(std::size_t limit, std::size_t n) {
  return limit == 0 ? n : std::min(limit, n);
}

void check_finite(double loss, const char* what, int epoch, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(what) + " diverged: loss " + std::to_string(loss) +
                       " at epoch " + std::to_string(epoch) + ", step " +
                       std::to_string(step));
  }
}

enum class HeadObjective { kSpab, kCrossEntropy };

}  // namespace

void PgdBudget::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw ConfigError("PGD epsilon must be finite and non-negative");
  }
  if (steps < 1) throw ConfigError("PGD needs at least one step");
  if (epsilon > 0.0 && !(step_size > 0.0 && step_size <= epsilon)) {
    throw ConfigError("PGD step size must lie in (0, epsilon]");
  }
}

Tensor pgd_attack(const Classifier& model, const Tensor& images, std::span<const int> labels,
                  const PgdBudget& budget) {
  budget.validate();
  for (double v : images.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("pgd_attack input outside [0, 1]");
  }
  if (budget.epsilon == 0.0) return images.clone();
  const auto x0 = images.values();
  Tensor adv = images.clone();
  for (int step = 0; step < budget.steps; ++step) {
    Tensor input = adv.clone();
    input.set_requires_grad(true);
    {
      Graph graph;
      GraphScope scope(graph);
      Tensor loss = ops::cross_entropy(model.logits(input, ParamMode::kFrozen), labels);
      graph.backward(loss);
    }
    const auto g = input.grad();
    auto a = adv.mutable_values();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      double v = a[i] + budget.step_size * s;
      v = std::clamp(v, x0[i] - budget.epsilon, x0[i] + budget.epsilon);
      a[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  return adv;
}

void AdvTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("training needs at least one epoch");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  budget.validate();
}

AdvTrainResult adversarial_train(const Classifier& init, const Dataset& pub,
                                 const AdvTrainConfig& config) {
  config.validate();
  if (pub.size() == 0) throw ConfigError("training set is empty");
  AdvTrainResult result{init, {}};
  Classifier& model = result.model;
  auto params = classifier_parameters(model);
  Rng rng(derive_seed(config.seed, "adversarial_train"));
  const Dataset eval = [&] {
    std::vector<std::size_t> idx(effective(config.eval_count, pub.size()));
    std::iota(idx.begin(), idx.end(), 0);
    return subset(pub, idx);
  }();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = shuffled(pub.size(), rng);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      Tensor x = pub.stack(rows);
      const auto labels = pub.labels_of(rows);
      if (config.budget.epsilon > 0.0) x = pgd_attack(model, x, labels, config.budget);
      double loss_value = 0.0;
      {
        Graph graph;
        GraphScope scope(graph);
        Tensor loss = ops::cross_entropy(model.logits(x, ParamMode::kTrainable), labels);
        loss_value = loss.item();
        check_finite(loss_value, "adversarial training", epoch, steps);
        graph.backward(loss);
      }
      sgd_step(params, config.lr);
      loss_sum += loss_value;
      ++steps;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(steps);
    if (config.eval_count > 0) {
      rec.natural_accuracy = accuracy(model, eval);
      rec.robust_accuracy = config.budget.epsilon > 0.0
                                ? robust_accuracy(model, eval, config.budget)
                                : rec.natural_accuracy;
    }
    result.history.push_back(rec);
  }
  return result;
}

AdvTrainResult natural_train(const Classifier& init, const Dataset& pub, AdvTrainConfig config) {
  config.budget.epsilon = 0.0;
  return adversarial_train(init, pub, config);
}

double accuracy(const Classifier& model, const Dataset& data, std::size_t limit) {
  const std::size_t n = effective(limit, data.size());
  if (n == 0) return 0.0;
  std::size_t ok = 0;
  for (std::size_t start = 0; start < n; start += kIrChunk) {
    std::vector<std::size_t> rows(std::min(n, start + kIrChunk) - start);
    std::iota(rows.begin(), rows.end(), start);
    ok += count_correct(model.logits(data.stack(rows)), data.labels_of(rows));
  }
  return static_cast<double>(ok) / static_cast<double>(n);
}

double robust_accuracy(const Classifier& model, const Dataset& data, const PgdBudget& budget,
                       std::size_t limit) {
  const std::size_t n = effective(limit, data.size());
  if (n == 0) return 0.0;
  std::size_t ok = 0;
  for (std::size_t start = 0; start < n; start += kIrChunk) {
    std::vector<std::size_t> rows(std::min(n, start + kIrChunk) - start);
    std::iota(rows.begin(), rows.end(), start);
    const Tensor x = data.stack(rows);
    const auto labels = data.labels_of(rows);
    const auto clean = correct_mask(model.logits(x), labels);
    const auto attacked = correct_mask(model.logits(pgd_attack(model, x, labels, budget)), labels);
    for (std::size_t i = 0; i < rows.size(); ++i) ok += clean[i] && attacked[i];
  }
  return static_cast<double>(ok) / static_cast<double>(n);
}

Tensor sparsity_loss(const Tensor& z, const Tensor& z_act, double beta1, double beta2) {
  if (z.rank() != 2 || z.shape() != z_act.shape()) {
    throw ShapeError("sparsity_loss expects equal (B, N) tensors");
  }
  const double b = static_cast<double>(z.dim(0)), n = static_cast<double>(z.dim(1));
  Tensor l1 = ops::scale(ops::sum(ops::abs(z_act)), beta1 / n);
  Tensor barrier = ops::scale(ops::sum(ops::softplus(ops::scale(z, -1.0))), beta2 / (b * n));
  return ops::add(l1, barrier);
}

double alpha_schedule(int k, int total) {
  if (total < 1 || k < 1 || k > total) {
    throw ConfigError("alpha_schedule needs 1 <= k <= K");
  }
  const double c = std::cos(static_cast<double>(k) * kPi / (2.0 * static_cast<double>(total)));
  return 1.0 - c * c;
}

void SpabTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("SpAB-training needs at least one epoch");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0) || !std::isfinite(beta1) || !(beta2 >= 0.0) || !std::isfinite(beta2)) {
    throw ConfigError("sparsity coefficients must be finite and non-negative");
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be non-negative");
  if (batch_size == 0 || batches_per_epoch == 0) {
    throw ConfigError("batch size and batches per epoch must be positive");
  }
}

SpabTrainConfig SpabTrainConfig::wide_preset() {
  SpabTrainConfig cfg;
  cfg.epochs = 100;
  cfg.lr = 1e-3;
  cfg.beta1 = 1.3e4;
  cfg.beta2 = 45.0;
  cfg.sigma = 1e-3;
  cfg.batch_size = 512;
  return cfg;
}

ProbeBatch make_probe(const FeatureExtractor& extractor, const Dataset& data,
                      std::size_t batch_size, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "probe"));
  Batch batch = sample_batch(data, batch_size, rng);
  return {extractor.forward(batch.images, ParamMode::kFrozen), std::move(batch.labels)};
}

Tensor compute_irs(const FeatureExtractor& extractor, const Dataset& data) {
  if (data.size() == 0) throw ConfigError("cannot compute IRs of an empty dataset");
  std::vector<double> out;
  out.reserve(data.size() * extractor.ir_dim());
  for (std::size_t start = 0; start < data.size(); start += kIrChunk) {
    std::vector<std::size_t> rows(std::min(data.size(), start + kIrChunk) - start);
    std::iota(rows.begin(), rows.end(), start);
    const Tensor y = extractor.forward(data.stack(rows), ParamMode::kFrozen);
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  return Tensor({data.size(), extractor.ir_dim()}, std::move(out));
}

namespace {

SpabTrainResult run_head_training(const SpabHead& initial, const Tensor& irs,
                                  std::span<const int> labels, const SpabTrainConfig& config,
                                  const ProbeBatch* probe, HeadObjective objective) {
  config.validate();
  if (irs.rank() != 2 || irs.dim(0) != labels.size() || irs.dim(1) != initial.ir_dim()) {
    throw ShapeError("head training expects IRs (n, M) aligned with labels");
  }
  const std::size_t n = irs.dim(0);
  const std::size_t batch = std::min(config.batch_size, n);
  SpabTrainResult result{initial, {}};
  SpabHead& head = result.head;
  auto params = head.parameters();
  Rng rng(derive_seed(config.seed, objective == HeadObjective::kSpab ? "spab" : "head"));
  if (objective == HeadObjective::kSpab) {
    std::fill(head.b.mutable_values().begin(), head.b.mutable_values().end(), 0.0);
  }
  auto probe_rate = [&] {
    return probe ? measure_leakage_rate(head, probe->irs, probe->labels) : 0.0;
  };
  result.trace.push_back({0, 0.0, 0.0, 0.0, probe_rate()});

  std::vector<std::size_t> order;
  std::size_t cursor = n;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double alpha = 1.0;
    if (objective == HeadObjective::kSpab) {
      alpha = alpha_schedule(epoch, config.epochs);
      if (config.sigma > 0.0) {
        for (Tensor* t : {&head.w, &head.b}) {
          for (double& v : t->mutable_values()) v += config.sigma * standard_normal(rng);
        }
      }
    }
    double cls_sum = 0.0, sp_sum = 0.0;
    for (std::size_t step = 0; step < config.batches_per_epoch; ++step) {
      if (cursor + batch > n) {
        order = shuffled(n, rng);
        cursor = 0;
      }
      std::span<const std::size_t> rows(order.data() + cursor, batch);
      cursor += batch;
      const Tensor y = gather_rows(irs, rows);
      const auto lab = gather_labels(labels, rows);
      {
        Graph graph;
        GraphScope scope(graph);
        SpabOutput out = forward_spab(head, y, ParamMode::kTrainable);
        Tensor l_cls = ops::cross_entropy(out.logits, lab);
        Tensor total = l_cls;
        double sp_value = 0.0;
        if (objective == HeadObjective::kSpab) {
          Tensor l_sp = sparsity_loss(out.z, out.z_act, config.beta1, config.beta2);
          sp_value = l_sp.item();
          total = ops::add(ops::scale(l_cls, alpha), ops::scale(l_sp, 1.0 - alpha));
        }
        check_finite(total.item(), "head training", epoch, step);
        cls_sum += l_cls.item();
        sp_sum += sp_value;
        graph.backward(total);
      }
      sgd_step(params, config.lr);
    }
    const double steps = static_cast<double>(config.batches_per_epoch);
    result.trace.push_back({epoch, alpha, cls_sum / steps, sp_sum / steps, probe_rate()});
  }
  return result;
}

}  // namespace

SpabTrainResult spab_train_irs(const SpabHead& initial, const Tensor& irs,
                               std::span<const int> labels, const SpabTrainConfig& config,
                               const ProbeBatch& probe) {
  return run_head_training(initial, irs, labels, config, &probe, HeadObjective::kSpab);
}

SpabTrainResult spab_train(const FeatureExtractor& extractor, const SpabHead& initial,
                           const Dataset& pub, const SpabTrainConfig& config,
                           const ProbeBatch& probe) {
  config.validate();
  const Tensor irs = compute_irs(extractor, pub);
  return spab_train_irs(initial, irs, pub.labels, config, probe);
}

SpabHead train_head(const SpabHead& initial, const Tensor& irs, std::span<const int> labels,
                    const SpabTrainConfig& config) {
  return run_head_training(initial, irs, labels, config, nullptr, HeadObjective::kCrossEntropy)
      .head;
}

double head_accuracy(const SpabHead& head, const Tensor& irs, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  return static_cast<double>(count_correct(forward_spab(head, irs).logits, labels)) /
         static_cast<double>(labels.size());
}

void write_training_curve_csv(const std::filesystem::path& path,
                              std::span<const SpabEpoch> trace) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "epoch,L_cls,L_sp,leakage_rate\n" << std::setprecision(10);
  for (const auto& e : trace) {
    out << e.epoch << ',' << e.l_cls << ',' << e.l_sp << ',' << e.leakage_rate << '\n';
  }
}

}  // namespace gradleak
