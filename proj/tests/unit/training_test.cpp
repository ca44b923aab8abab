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

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "gradleak/errors.hpp"
#include "gradleak/leakage.hpp"
#include "gradleak/ops.hpp"
#include "gradleak/training.hpp"
#include "test_util.hpp"

namespace gradleak {
namespace {

using testing::uniform_tensor;

constexpr double kPi = 3.14159265358979323846;

Classifier small_classifier(std::uint64_t seed, std::size_t size = 16) {
  return Classifier{FeatureExtractor(FeatureExtractorSpec::desk_default(3, size, size, 32), seed),
                    SpabHead::random(32, 16, 4, seed + 1)};
}

double batch_loss(const Classifier& m, const Tensor& x, const std::vector<int>& labels) {
  return ops::cross_entropy(m.logits(x), labels).item();
}

TEST(PgdBudgetTest, Validation) {
  EXPECT_NO_THROW((PgdBudget{0.0, 1.0 / 255, 3}.validate()));
  EXPECT_THROW((PgdBudget{4.0 / 255, 8.0 / 255, 3}.validate()), ConfigError);
  EXPECT_THROW((PgdBudget{4.0 / 255, 1.0 / 255, 0}.validate()), ConfigError);
  EXPECT_THROW((PgdBudget{4.0 / 255, 0.0, 3}.validate()), ConfigError);
}

TEST(PgdTest, ZeroEpsilonIsIdentity) {
  const Dataset d = synth_dataset(1, 8, 4, 16, SynthFamily::kGeometric);
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  const Tensor x = d.stack(rows);
  const Tensor adv = pgd_attack(small_classifier(1), x, d.labels_of(rows), PgdBudget{0.0, 1.0 / 255, 5});
  EXPECT_TRUE(bitwise_equal(adv, x));
}

TEST(PgdTest, SingleStepIsSignedGradientAscent) {
  const Classifier m = small_classifier(2);
  const Dataset d = synth_dataset(2, 8, 4, 16, SynthFamily::kGeometric);
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4};
  const Tensor x = d.stack(rows);
  const auto labels = d.labels_of(rows);
  const double step = 2.0 / 255;
  Tensor probe = x.clone().set_requires_grad(true);
  {
    Graph g;
    GraphScope scope(g);
    g.backward(ops::cross_entropy(m.logits(probe), labels));
  }
  const Tensor adv = pgd_attack(m, x, labels, PgdBudget{4.0 / 255, step, 1});
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double gi = probe.grad()[i];
    const double s = gi > 0 ? 1.0 : (gi < 0 ? -1.0 : 0.0);
    EXPECT_NEAR(adv.at(i), std::clamp(x.at(i) + step * s, 0.0, 1.0), 1e-15);
  }
}

TEST(PgdTest, StaysInBallAndRaisesLoss) {
  const Classifier m = small_classifier(3);
  const Dataset d = synth_dataset(3, 200, 4, 16, SynthFamily::kGeometric);
  const PgdBudget budget{4.0 / 255, 1.0 / 255, 10};
  Rng rng(3);
  int raised = 0;
  double loss10 = 0.0, loss1 = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Batch b = sample_batch(d, 8, rng);
    const Tensor adv = pgd_attack(m, b.images, b.labels, budget);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      ASSERT_LE(std::abs(adv.at(i) - b.images.at(i)), budget.epsilon + 1e-15);
      ASSERT_GE(adv.at(i), 0.0);
      ASSERT_LE(adv.at(i), 1.0);
    }
    const double clean = batch_loss(m, b.images, b.labels);
    const double attacked = batch_loss(m, adv, b.labels);
    raised += attacked >= clean ? 1 : 0;
    loss10 += attacked;
    loss1 += batch_loss(m, pgd_attack(m, b.images, b.labels, PgdBudget{4.0 / 255, 1.0 / 255, 1}), b.labels);
  }
  EXPECT_GE(raised, 18);
  EXPECT_GE(loss10, loss1);
}

TEST(PgdTest, RejectsOutOfRangeInput) {
  const Tensor x = Tensor::full({1, 3, 16, 16}, 1.5);
  EXPECT_THROW(pgd_attack(small_classifier(4), x, std::vector<int>{0}, PgdBudget{}), ConfigError);
}

TEST(AdversarialTrainTest, ZeroEpsilonMatchesNaturalTraining) {
  const Dataset d = synth_dataset(5, 64, 4, 16, SynthFamily::kGeometric);
  AdvTrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.eval_count = 16;
  cfg.seed = 5;
  cfg.budget = PgdBudget{0.0, 1.0 / 255, 3};
  const auto a = adversarial_train(small_classifier(5), d, cfg);
  cfg.budget = PgdBudget{};
  const auto n = natural_train(small_classifier(5), d, cfg);
  ASSERT_EQ(a.history.size(), n.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].loss, n.history[i].loss);
}

TEST(AdversarialTrainTest, DeskScaleAccuracies) {
  const Dataset pub = synth_dataset(11, 1000, 4, 16, SynthFamily::kGeometric);
  const Dataset test = synth_dataset(12, 200, 4, 16, SynthFamily::kGeometric, Split::kPrivate);
  AdvTrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 11;
  cfg.eval_count = 0;
  cfg.budget = PgdBudget{4.0 / 255, 1.6 / 255, 5};
  const Classifier init{FeatureExtractor(FeatureExtractorSpec::desk_default(3, 16, 16), 11),
                        SpabHead::random(128, 128, 4, 12)};
  const Classifier natural = natural_train(init, pub, cfg).model;
  const Classifier robust = adversarial_train(init, pub, cfg).model;
  EXPECT_GT(accuracy(natural, test), 0.9);
  const double nat = accuracy(robust, test);
  const double rob = robust_accuracy(robust, test, cfg.budget);
  EXPECT_GT(nat, 0.9);
  EXPECT_GT(rob, 0.6);
  EXPECT_LE(rob, nat);
}

TEST(AdversarialTrainTest, RobustNeverExceedsNatural) {
  const Classifier m = small_classifier(6);
  const Dataset d = synth_dataset(6, 40, 4, 16, SynthFamily::kGeometric);
  EXPECT_LE(robust_accuracy(m, d, PgdBudget{}), accuracy(m, d));
}

// (b1/N) sum |Z'| + (b2/(BN)) sum log(1 + exp(-Z)), one scalar at a time.
double sparsity_oracle(const Tensor& z, const Tensor& za, double b1, double b2) {
  const std::size_t B = z.dim(0), N = z.dim(1);
  double l1 = 0.0, sp = 0.0;
  for (std::size_t i = 0; i < B * N; ++i) {
    l1 += std::abs(za.at(i));
    sp += std::log1p(std::exp(-z.at(i)));
  }
  return b1 / static_cast<double>(N) * l1 + b2 / static_cast<double>(B * N) * sp;
}

TEST(SparsityLossTest, ClosedForms) {
  EXPECT_NEAR(sparsity_loss(Tensor::zeros({1, 1}), Tensor::zeros({1, 1}), 3.0, 2.5).item(),
              2.5 * std::log(2.0), 1e-15);
  EXPECT_LT(sparsity_loss(Tensor::full({2, 2}, 50.0), Tensor::zeros({2, 2}), 1.0, 1.0).item(), 1e-20);
}

TEST(SparsityLossTest, MatchesScalarLoop) {
  Rng rng(7);
  const Tensor z = uniform_tensor({2, 3}, rng);
  const Tensor za = ops::relu(z);
  EXPECT_NEAR(sparsity_loss(z, za, 1.7, 0.4).item(), sparsity_oracle(z, za, 1.7, 0.4), 1e-12);
}

TEST(SparsityLossTest, GradCheck) {
  Rng rng(8);
  const Tensor z = uniform_tensor({3, 4}, rng);
  EXPECT_LT(grad_check([](const Tensor& x) { return sparsity_loss(x, ops::relu(x), 2.0, 1.5); }, z, 1e-5),
            1e-4);
}

TEST(SparsityLossTest, ShrinkingPositiveActivationLowersLoss) {
  Rng rng(9);
  const Tensor z = uniform_tensor({3, 4}, rng);
  const Tensor za = ops::relu(z);
  for (std::size_t i = 0; i < za.size(); ++i) {
    if (za.at(i) <= 0.0) continue;
    Tensor smaller = za.clone();
    smaller.mutable_values()[i] *= 0.5;
    EXPECT_LT(sparsity_loss(z, smaller, 1.0, 1.0).item(), sparsity_loss(z, za, 1.0, 1.0).item());
  }
}

TEST(SparsityLossTest, ShapeMismatchThrows) {
  EXPECT_THROW(sparsity_loss(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}), 1, 1), ShapeError);
}

TEST(AlphaScheduleTest, Values) {
  EXPECT_EQ(alpha_schedule(7, 7), 1.0);
  EXPECT_NEAR(alpha_schedule(1, 2), 0.5, 1e-15);
  const double c = std::cos(kPi / 200.0);
  EXPECT_NEAR(alpha_schedule(1, 100), 1.0 - c * c, 1e-15);
  EXPECT_NEAR(alpha_schedule(1, 100), 2.467e-4, 1e-7);
  EXPECT_THROW(alpha_schedule(0, 5), ConfigError);
  EXPECT_THROW(alpha_schedule(6, 5), ConfigError);
}

TEST(AlphaScheduleTest, Nondecreasing) {
  for (int total : {1, 3, 10, 100}) {
    double prev = 0.0;
    for (int k = 1; k <= total; ++k) {
      const double a = alpha_schedule(k, total);
      EXPECT_GE(a, prev);
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0);
      prev = a;
    }
  }
}

TEST(SpabTrainTest, NoNoiseNoSparsityIsWeightedCrossEntropyDescent) {
  Rng rng(10);
  const std::size_t n = 12, m = 6, width = 5, classes = 3;
  const Tensor irs = uniform_tensor({n, m}, rng);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  const SpabHead init = SpabHead::random(m, width, classes, 10);
  SpabTrainConfig cfg;
  cfg.epochs = 6;
  cfg.lr = 0.1;
  cfg.beta1 = cfg.beta2 = cfg.sigma = 0.0;
  cfg.batch_size = n;
  cfg.batches_per_epoch = 1;
  const ProbeBatch probe{irs, labels};
  const SpabHead trained = spab_train_irs(init, irs, labels, cfg, probe).head;

  SpabHead ref = init;
  for (int k = 1; k <= cfg.epochs; ++k) {
    const double alpha = alpha_schedule(k, cfg.epochs);
    ref.zero_grad();
    {
      Graph g;
      GraphScope scope(g);
      g.backward(ops::scale(ops::cross_entropy(forward_spab(ref, irs, ParamMode::kTrainable).logits, labels),
                            alpha));
    }
    for (Tensor* p : ref.parameters()) {
      if (!p->has_grad()) continue;
      auto v = p->mutable_values();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= cfg.lr * p->grad()[i];
    }
  }
  const std::vector<std::pair<const Tensor*, const Tensor*>> pairs{
      {&trained.w, &ref.w}, {&trained.b, &ref.b}, {&trained.w2, &ref.w2}, {&trained.b2, &ref.b2}};
  for (const auto& [a, b] : pairs) EXPECT_LT(testing::max_abs_diff(a->values(), b->values()), 1e-12);
}

TEST(SpabTrainTest, TraceAndFrozenExtractor) {
  const Dataset pub = synth_dataset(13, 64, 4, 16, SynthFamily::kGeometric);
  const FeatureExtractor fe(FeatureExtractorSpec::desk_default(3, 16, 16, 32), 13);
  const auto before = to_checkpoint(Classifier{fe, SpabHead::random(32, 16, 4, 1)});
  SpabTrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.batches_per_epoch = 2;
  const ProbeBatch probe = make_probe(fe, pub, 16, 1);
  const auto res = spab_train(fe, SpabHead::random(32, 16, 4, 2), pub, cfg, probe);
  ASSERT_EQ(res.trace.size(), 5u);
  EXPECT_EQ(res.trace[0].epoch, 0);
  EXPECT_EQ(res.trace.back().alpha, 1.0);
  EXPECT_DOUBLE_EQ(res.trace[0].leakage_rate,
                   measure_leakage_rate(SpabHead::random(32, 16, 4, 2), probe.irs, probe.labels));
  const auto after = to_checkpoint(Classifier{fe, SpabHead::random(32, 16, 4, 1)});
  for (std::size_t i = 0; i < before.tensors.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(before.tensors[i].tensor, after.tensors[i].tensor));
  }
}

TEST(SpabTrainTest, InitialBiasIsZeroed) {
  Rng rng(14);
  const Tensor irs = uniform_tensor({8, 4}, rng);
  const std::vector<int> labels{0, 1, 0, 1, 0, 1, 0, 1};
  SpabHead init = SpabHead::random(4, 3, 2, 14);
  init.b = Tensor::full({3}, 5.0, true);
  SpabTrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 1e-12;
  cfg.sigma = 0.0;
  cfg.batch_size = 8;
  cfg.batches_per_epoch = 1;
  const auto head = spab_train_irs(init, irs, labels, cfg, ProbeBatch{irs, labels}).head;
  for (double v : head.b.values()) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(SpabTrainTest, ConfigValidation) {
  SpabTrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.beta1 = std::numeric_limits<double>::infinity();
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SpabTrainConfig{};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(SpabTrainConfig::wide_preset().beta1, 1.3e4);
}

TEST(TrainingCurveTest, CsvLayout) {
  testing::TempDir dir("curve");
  const std::vector<SpabEpoch> trace{{0, 0.0, 0.0, 0.0, 0.25}, {1, 0.5, 1.25, 2.5, 0.5}};
  write_training_curve_csv(dir.path() / "c.csv", trace);
  std::ifstream in(dir.path() / "c.csv");
  std::string header, line0, line1;
  std::getline(in, header);
  std::getline(in, line0);
  std::getline(in, line1);
  EXPECT_EQ(header, "epoch,L_cls,L_sp,leakage_rate");
  EXPECT_EQ(line1, "1,1.25,2.5,0.5");
}

}  // namespace
}  // namespace gradleak
