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
#include <vector>

#include <gtest/gtest.h>

#include "gradleak/errors.hpp"
#include "gradleak/federation.hpp"
#include "test_util.hpp"

namespace gradleak {
namespace {

using testing::max_abs_diff;
using testing::uniform_tensor;

struct HeadGrads {
  std::vector<double> w, b, w2, b2;
};

// Mean cross-entropy gradients of the head, written out loop by loop.
HeadGrads head_grad_oracle(const SpabHead& h, const Tensor& y, const std::vector<int>& labels) {
  const std::size_t B = y.dim(0), M = y.dim(1), N = h.w.dim(1), C = h.w2.dim(1);
  HeadGrads g{std::vector<double>(M * N), std::vector<double>(N), std::vector<double>(N * C),
              std::vector<double>(C)};
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<double> z(N), za(N), logit(C);
    for (std::size_t j = 0; j < N; ++j) {
      z[j] = h.b.at(j);
      for (std::size_t k = 0; k < M; ++k) z[j] += y.at(i * M + k) * h.w.at(k * N + j);
      za[j] = z[j] > 0 ? z[j] : 0.0;
    }
    double mx = -1e300;
    for (std::size_t c = 0; c < C; ++c) {
      logit[c] = h.b2.at(c);
      for (std::size_t j = 0; j < N; ++j) logit[c] += za[j] * h.w2.at(j * C + c);
      mx = std::max(mx, logit[c]);
    }
    double denom = 0.0;
    for (std::size_t c = 0; c < C; ++c) denom += std::exp(logit[c] - mx);
    std::vector<double> dl(C);
    for (std::size_t c = 0; c < C; ++c) {
      dl[c] = (std::exp(logit[c] - mx) / denom - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0)) /
              static_cast<double>(B);
      g.b2[c] += dl[c];
      for (std::size_t j = 0; j < N; ++j) g.w2[j * C + c] += za[j] * dl[c];
    }
    for (std::size_t j = 0; j < N; ++j) {
      double dza = 0.0;
      for (std::size_t c = 0; c < C; ++c) dza += dl[c] * h.w2.at(j * C + c);
      const double dz = z[j] > 0 ? dza : 0.0;
      g.b[j] += dz;
      for (std::size_t k = 0; k < M; ++k) g.w[k * N + j] += y.at(i * M + k) * dz;
    }
  }
  return g;
}

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

TEST(HeadUpdateTest, MatchesStraightLineOracle) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    const SpabHead h = SpabHead::random(6, 5, 3, seed);
    SpabHead biased = h;
    biased.b = uniform_tensor({5}, rng, -0.3, 0.3);
    const Tensor y = uniform_tensor({4, 6}, rng);
    const std::vector<int> labels{0, 2, 1, 2};
    const auto u = trace_head_update(biased, y, labels).update;
    const HeadGrads g = head_grad_oracle(biased, y, labels);
    EXPECT_LT(max_abs_diff(u.grad_w.values(), g.w), 1e-10);
    EXPECT_LT(max_abs_diff(u.grad_b.values(), g.b), 1e-10);
    EXPECT_LT(max_abs_diff(u.grad_w2.values(), g.w2), 1e-10);
    EXPECT_LT(max_abs_diff(u.grad_b2.values(), g.b2), 1e-10);
    EXPECT_EQ(u.batch_size, 4u);
  }
}

TEST(HeadUpdateTest, SingleSampleColumnsAreScaledInput) {
  Rng rng(4);
  const SpabHead h = SpabHead::random(7, 9, 4, 4);
  const Tensor y = uniform_tensor({1, 7}, rng, 0.0, 2.0);
  const auto u = trace_head_update(h, y, std::vector<int>{2}).update;
  for (std::size_t j = 0; j < 9; ++j) {
    for (std::size_t k = 0; k < 7; ++k) {
      EXPECT_NEAR(u.grad_w.at(k * 9 + j), u.grad_b.at(j) * y.at(k), 1e-12);
    }
  }
}

TEST(HeadUpdateTest, DuplicatedBatchGivesSameMeanGradient) {
  Rng rng(5);
  const SpabHead h = SpabHead::random(4, 6, 3, 5);
  const Tensor y = uniform_tensor({2, 4}, rng);
  std::vector<double> dup(to_vec(y));
  dup.insert(dup.end(), y.values().begin(), y.values().end());
  const auto a = trace_head_update(h, y, std::vector<int>{0, 1}).update;
  const auto b = trace_head_update(h, Tensor({4, 4}, dup), std::vector<int>{0, 1, 0, 1}).update;
  EXPECT_LT(max_abs_diff(a.grad_w.values(), b.grad_w.values()), 1e-14);
  EXPECT_LT(max_abs_diff(a.grad_b2.values(), b.grad_b2.values()), 1e-14);
}

TEST(HeadUpdateTest, DeadColumnHasZeroGradient) {
  Rng rng(6);
  SpabHead h = SpabHead::random(4, 3, 2, 6);
  h.b = Tensor({3}, std::vector<double>{0.0, -1e6, 0.0});
  const auto u = trace_head_update(h, uniform_tensor({3, 4}, rng), std::vector<int>{0, 1, 1}).update;
  EXPECT_EQ(u.grad_b.at(1), 0.0);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(u.grad_w.at(k * 3 + 1), 0.0);
}

TEST(ClientUpdateTest, ValidatesAgainstHead) {
  const FeatureExtractor fe(FeatureExtractorSpec::desk_default(3, 16, 16, 8), 7);
  const SpabHead h = SpabHead::random(8, 4, 2, 7);
  const Dataset d = synth_dataset(7, 4, 2, 16, SynthFamily::kGeometric);
  const std::vector<std::size_t> rows{0, 1, 2};
  const auto u = client_update(fe, h, d.stack(rows), d.labels_of(rows));
  EXPECT_NO_THROW(u.validate(h));
  EXPECT_THROW(u.validate(SpabHead::random(8, 5, 2, 7)), ShapeError);
  auto bad = u;
  bad.grad_b = Tensor({4}, std::vector<double>{0, std::nan(""), 0, 0});
  EXPECT_THROW(bad.validate(h), NumericError);
}

GradientUpdate constant_update(double v) {
  return GradientUpdate{Tensor::full({3, 3}, v), Tensor::full({3}, v), Tensor::full({3, 1}, v),
                        Tensor::full({1}, v), 1, false};
}

TEST(ClipTest, Examples) {
  // 16 entries of 1 give norm 4.
  EXPECT_DOUBLE_EQ(constant_update(1.0).l2_norm(), 4.0);
  const auto clipped = clip_gradient(constant_update(1.0), 2.0);
  EXPECT_NEAR(clipped.l2_norm(), 2.0, 1e-14);
  EXPECT_DOUBLE_EQ(clipped.grad_b.at(0), 0.5);
  const auto untouched = clip_gradient(constant_update(1.0), 10.0);
  EXPECT_EQ(untouched.grad_w.at(0), 1.0);
  EXPECT_THROW(clip_gradient(constant_update(1.0), 0.0), ConfigError);
}

TEST(ClipTest, NormNeverExceedsThreshold) {
  Rng rng(8);
  for (int k = 0; k < 20; ++k) {
    GradientUpdate u{uniform_tensor({3, 4}, rng, -5, 5), uniform_tensor({4}, rng, -5, 5),
                     uniform_tensor({4, 2}, rng, -5, 5), uniform_tensor({2}, rng, -5, 5), 1, false};
    const double t = 0.5 + static_cast<double>(k);
    EXPECT_LE(clip_gradient(u, t).l2_norm(), t * (1 + 1e-12));
  }
}

TEST(GaussianSigmaTest, ClosedForm) {
  EXPECT_NEAR(gaussian_sigma(10.0, 1e-4, 1.0), 0.43436, 1e-5);
  EXPECT_NEAR(gaussian_sigma(1e3, 1e-4, 100.0), 100.0 * std::sqrt(2.0 * std::log(1.25e4)) / 1e3, 1e-14);
  EXPECT_THROW(gaussian_sigma(0.0, 1e-4, 1.0), ConfigError);
  EXPECT_THROW(gaussian_sigma(1.0, 1.0, 1.0), ConfigError);
}

TEST(GaussianSigmaTest, MonotoneInEpsilonAndClip) {
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {0.1, 1.0, 10.0, 1e3, 1e6}) {
    const double s = gaussian_sigma(eps, 1e-5, 3.0);
    EXPECT_LT(s, prev);
    prev = s;
  }
  EXPECT_LT(gaussian_sigma(5.0, 1e-5, 1.0), gaussian_sigma(5.0, 1e-5, 2.0));
}

TEST(ApplyDpTest, NoiseStdMatchesSigma) {
  const std::size_t M = 128, N = 128;
  GradientUpdate zero{Tensor::zeros({M, N}), Tensor::zeros({N}), Tensor::zeros({N, 4}), Tensor::zeros({4}),
                      8, false};
  const DpConfig cfg{10.0, 1e-4, 1.0, 99};
  const auto noisy = apply_dp(zero, cfg);
  double ss = 0.0;
  std::size_t n = 0;
  for (const Tensor* t : {&noisy.grad_w, &noisy.grad_b, &noisy.grad_w2, &noisy.grad_b2}) {
    for (double v : t->values()) {
      ss += v * v;
      ++n;
    }
  }
  const double empirical = std::sqrt(ss / static_cast<double>(n));
  const double sigma = gaussian_sigma(cfg.epsilon, cfg.delta, cfg.clip);
  EXPECT_NEAR(empirical / sigma, 1.0, 0.02);
  EXPECT_TRUE(noisy.dp_applied);
  EXPECT_EQ(noisy.batch_size, 8u);
}

TEST(ApplyDpTest, SeededAndSingleShot) {
  const DpConfig cfg{1e3, 1e-4, 2.0, 5};
  const auto a = apply_dp(constant_update(1.0), cfg);
  const auto b = apply_dp(constant_update(1.0), cfg);
  EXPECT_TRUE(bitwise_equal(a.grad_w, b.grad_w));
  EXPECT_THROW(apply_dp(a, cfg), ConfigError);
}

TEST(ApplyDpTest, HugeEpsilonIsClipOnly) {
  const auto u = apply_dp(constant_update(1.0), DpConfig{1e12, 1e-4, 2.0, 1});
  EXPECT_NEAR(u.grad_w.at(0), 0.5, 1e-9);
}

TEST(RoundTest, MatchesDirectClientUpdate) {
  const FeatureExtractor fe(FeatureExtractorSpec::desk_default(3, 16, 16, 8), 9);
  const ServerState server{fe, SpabHead::random(8, 6, 4, 9)};
  const Dataset d = synth_dataset(9, 30, 4, 16, SynthFamily::kGeometric);
  Rng r1(3), r2(3), r3(3);
  const RoundResult traced = run_round_traced(server, d, 5, r1, std::nullopt);
  const GradientUpdate plain = run_round(server, d, 5, r2, std::nullopt);
  const Batch b = sample_batch(d, 5, r3);
  EXPECT_EQ(traced.batch.indices, b.indices);
  const auto direct = client_update(fe, server.head, b.images, b.labels);
  EXPECT_TRUE(bitwise_equal(plain.grad_w, direct.grad_w));
  EXPECT_TRUE(bitwise_equal(traced.update.grad_w, direct.grad_w));

  Rng r4(3);
  const DpConfig dp{1e3, 1e-4, 1.0, 4};
  const GradientUpdate private_update = run_round(server, d, 5, r4, dp);
  const auto expected = apply_dp(direct, dp);
  EXPECT_TRUE(bitwise_equal(private_update.grad_w, expected.grad_w));
}

TEST(AggregateTest, WeightedMean) {
  auto a = constant_update(1.0);
  auto b = constant_update(4.0);
  a.batch_size = 3;
  b.batch_size = 1;
  const std::vector<GradientUpdate> all{a, b};
  const auto m = aggregate(all);
  EXPECT_DOUBLE_EQ(m.grad_b.at(0), 1.75);
  EXPECT_EQ(m.batch_size, 4u);
  EXPECT_THROW(aggregate(std::span<const GradientUpdate>{}), ConfigError);
}

TEST(UpdateCheckpointTest, RoundTripIsBitIdentical) {
  Rng rng(10);
  GradientUpdate u{uniform_tensor({3, 4}, rng), uniform_tensor({4}, rng), uniform_tensor({4, 2}, rng),
                   uniform_tensor({2}, rng), 7, true};
  const auto bytes = save_checkpoint(to_checkpoint(u));
  const auto back = gradient_update_from_checkpoint(load_checkpoint(bytes));
  EXPECT_TRUE(bitwise_equal(back.grad_w, u.grad_w));
  EXPECT_TRUE(bitwise_equal(back.grad_b2, u.grad_b2));
  EXPECT_EQ(back.batch_size, 7u);
  EXPECT_TRUE(back.dp_applied);
  ModelCheckpoint wrong;
  wrong.descriptor = "linear(2)";
  EXPECT_THROW(gradient_update_from_checkpoint(wrong), FormatError);
}

}  // namespace
}  // namespace gradleak
