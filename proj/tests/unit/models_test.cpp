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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "gradleak/checkpoint.hpp"
#include "gradleak/detection.hpp"
#include "gradleak/errors.hpp"
#include "gradleak/federation.hpp"
#include "gradleak/models.hpp"
#include "gradleak/ops.hpp"
#include "test_util.hpp"

namespace gradleak {
namespace {

using testing::uniform_tensor;

FeatureExtractor small_extractor(std::uint64_t seed = 1) {
  return FeatureExtractor(FeatureExtractorSpec::desk_default(3, 8, 8, 16), seed);
}

Tensor row(const Tensor& m, std::size_t r) {
  const std::size_t n = m.dim(1);
  return Tensor({n}, std::vector<double>(m.values().begin() + r * n, m.values().begin() + (r + 1) * n));
}

TEST(FeatureExtractorTest, SingleSampleGivesSingleRow) {
  Rng rng(1);
  const auto fe = small_extractor();
  const Tensor y = fe.forward(uniform_tensor({1, 3, 8, 8}, rng, 0.0, 1.0));
  EXPECT_EQ(y.shape(), (Shape{1, 16}));
}

TEST(FeatureExtractorTest, BatchPermutationPermutesRows) {
  Rng rng(2);
  const auto fe = small_extractor();
  const Tensor x = uniform_tensor({3, 3, 8, 8}, rng, 0.0, 1.0);
  const std::size_t per = 3 * 8 * 8;
  std::vector<double> swapped(x.size());
  const std::size_t order[3] = {2, 0, 1};
  for (std::size_t i = 0; i < 3; ++i) {
    std::copy_n(x.values().begin() + order[i] * per, per, swapped.begin() + i * per);
  }
  const Tensor y = fe.forward(x);
  const Tensor ys = fe.forward(Tensor(x.shape(), swapped));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(bitwise_equal(row(ys, i), row(y, order[i])));
  }
}

TEST(FeatureExtractorTest, IdentityKernelStackIsFlatten) {
  FeatureExtractorSpec spec;
  spec.channels = 3;
  spec.height = spec.width = 6;
  spec.layers = {{LayerKind::kConv, 3, 3, 1}, {LayerKind::kRelu},
                 {LayerKind::kConv, 3, 5, 2}, {LayerKind::kFlatten}};
  FeatureExtractor fe(spec, 3);
  implant_identity_kernels(fe);
  Rng rng(3);
  const Tensor x = uniform_tensor({2, 3, 6, 6}, rng, 0.0, 1.0);
  const Tensor y = fe.forward(x);
  ASSERT_EQ(y.shape(), (Shape{2, 108}));
  EXPECT_EQ(testing::max_abs_diff(y.values(), x.values()), 0.0);
}

TEST(FeatureExtractorTest, RejectsWrongInputShape) {
  const auto fe = small_extractor();
  EXPECT_THROW(fe.forward(Tensor::zeros({1, 3, 8, 9})), ShapeError);
}

TEST(SpabHeadTest, IdentityWeightPassesNonNegativeInput) {
  const std::size_t m = 5;
  std::vector<double> eye(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) eye[i * m + i] = 1.0;
  const SpabHead head(Tensor({m, m}, eye), Tensor::zeros({m}), Tensor::full({m, 2}, 0.5),
                      Tensor::zeros({2}));
  Rng rng(4);
  const Tensor y = uniform_tensor({3, m}, rng, 0.0, 1.0);
  const SpabOutput out = forward_spab(head, y);
  EXPECT_EQ(testing::max_abs_diff(out.z_act.values(), y.values()), 0.0);
}

TEST(SpabHeadTest, VeryNegativeBiasKillsColumn) {
  SpabHead head = SpabHead::random(6, 4, 3, 5);
  head.b.mutable_values()[2] = -1e6;
  Rng rng(5);
  const SpabOutput out = forward_spab(head, uniform_tensor({7, 6}, rng));
  for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(out.z_act.at(k * 4 + 2), 0.0);
}

TEST(SpabHeadTest, MatchesStraightLineArithmetic) {
  SpabHead head = SpabHead::random(6, 5, 3, 6);
  Rng rng(6);
  for (double& v : head.b.mutable_values()) v = standard_normal(rng);
  for (double& v : head.b2.mutable_values()) v = standard_normal(rng);
  const Tensor y = uniform_tensor({4, 6}, rng);
  const SpabOutput out = forward_spab(head, y);
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<double> za(5);
    for (std::size_t j = 0; j < 5; ++j) {
      double z = head.b.at(j);
      for (std::size_t i = 0; i < 6; ++i) z += y.at(k * 6 + i) * head.w.at(i * 5 + j);
      EXPECT_NEAR(out.z.at(k * 5 + j), z, 1e-12);
      za[j] = z > 0.0 ? z : 0.0;
    }
    for (std::size_t c = 0; c < 3; ++c) {
      double l = head.b2.at(c);
      for (std::size_t j = 0; j < 5; ++j) l += za[j] * head.w2.at(j * 3 + c);
      EXPECT_NEAR(out.logits.at(k * 3 + c), l, 1e-12);
    }
  }
}

TEST(SpabHeadTest, RandomHeadHasZeroBias) {
  const SpabHead head = SpabHead::random(8, 8, 2, 7);
  for (double v : head.b.values()) EXPECT_EQ(v, 0.0);
}

TEST(SpabHeadTest, GradientIdentitiesHold) {
  // dw(i,j) = sum_k Y(k,i) dZ(k,j) and db(j) = sum_k dZ(k,j).
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const SpabHead head = SpabHead::random(7, 6, 3, seed);
    const Tensor y = uniform_tensor({5, 7}, rng);
    std::vector<int> labels(5);
    for (int& l : labels) l = static_cast<int>(rng() % 3);
    const ClientTrace t = trace_head_update(head, y, labels);
    for (std::size_t j = 0; j < 6; ++j) {
      double db = 0.0;
      for (std::size_t k = 0; k < 5; ++k) db += t.z_grad.at(k * 6 + j);
      EXPECT_NEAR(t.update.grad_b.at(j), db, 1e-10);
      for (std::size_t i = 0; i < 7; ++i) {
        double dw = 0.0;
        for (std::size_t k = 0; k < 5; ++k) dw += y.at(k * 7 + i) * t.z_grad.at(k * 6 + j);
        EXPECT_NEAR(t.update.grad_w.at(i * 6 + j), dw, 1e-10);
      }
    }
  }
}

GeneratorSpec tiny_generator() {
  GeneratorSpec g;
  g.channels = 1;
  g.height = g.width = 4;
  g.widths[0] = 2;
  g.widths[1] = 3;
  g.widths[2] = 2;
  return g;
}

TEST(GeneratorTest, OutputInUnitInterval) {
  const Generator gen(GeneratorSpec{}, 8);
  Rng rng(8);
  const Tensor x = gen.forward(testing::normal_tensor({1, 3, 16, 16}, rng, 3.0));
  EXPECT_EQ(x.shape(), (Shape{1, 3, 16, 16}));
  for (double v : x.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(GeneratorTest, SameSeedAndWeightsAreDeterministic) {
  Rng rng(9);
  const Tensor s = testing::normal_tensor({1, 3, 16, 16}, rng);
  EXPECT_TRUE(bitwise_equal(Generator(GeneratorSpec{}, 1).forward(s),
                            Generator(GeneratorSpec{}, 1).forward(s)));
}

TEST(GeneratorTest, GradCheckWithRespectToSeed) {
  const Generator gen(tiny_generator(), 10);
  Rng rng(10);
  const Tensor s = testing::normal_tensor({1, 1, 4, 4}, rng);
  const Tensor r = uniform_tensor({1, 1, 4, 4}, rng, 0.5, 1.5);
  const double err = grad_check(
      [&](const Tensor& x) { return ops::sum(ops::mul(gen.forward(x), r)); }, s, 1e-5);
  EXPECT_LT(err, 1e-4);
}

TEST(GeneratorTest, RejectsWrongSeedShape) {
  const Generator gen(GeneratorSpec{}, 1);
  EXPECT_THROW(gen.forward(Tensor::zeros({1, 3, 8, 8})), ShapeError);
}

TEST(GeneratorTest, CanFitAnImage) {
  // Deep-image-prior sanity: plain GD on seed and weights reaches MSE < 1e-3.
  Rng rng(11);
  const Tensor target = uniform_tensor({1, 3, 16, 16}, rng, 0.1, 0.9);
  Generator gen(GeneratorSpec{}, 11);
  Tensor s = testing::normal_tensor({1, 3, 16, 16}, rng);
  s.set_requires_grad(true);
  double mse = 1.0;
  for (int step = 0; step < 2000 && mse >= 1e-3; ++step) {
    Graph g;
    GraphScope scope(g);
    Tensor loss = ops::mean(ops::square(ops::sub(gen.forward(s, ParamMode::kTrainable), target)));
    mse = loss.item();
    g.backward(loss);
    auto update = [](Tensor& p, double lr) {
      auto v = p.mutable_values();
      const auto gr = p.grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * gr[i];
      p.zero_grad();
    };
    update(s, 2.0);
    for (auto& e : gen.params().entries()) {
      if (e.tensor.has_grad()) update(e.tensor, 2.0);
    }
  }
  EXPECT_LT(mse, 1e-3);
}

TEST(CheckpointTest, ClassifierRoundTripIsBitIdentical) {
  const Classifier model{small_extractor(12), SpabHead::random(16, 8, 4, 12)};
  const auto bytes = save_checkpoint(to_checkpoint(model));
  const Classifier back = classifier_from_checkpoint(load_checkpoint(bytes));
  EXPECT_EQ(back.descriptor(), model.descriptor());
  const auto a = to_checkpoint(model), b = to_checkpoint(back);
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_EQ(a.tensors[i].name, b.tensors[i].name);
    EXPECT_TRUE(bitwise_equal(a.tensors[i].tensor, b.tensors[i].tensor));
  }
  EXPECT_EQ(save_checkpoint(b), bytes);
}

TEST(CheckpointTest, GeneratorRoundTrip) {
  const Generator gen(GeneratorSpec{}, 13);
  const Generator back = generator_from_checkpoint(load_checkpoint(save_checkpoint(to_checkpoint(gen))));
  Rng rng(13);
  const Tensor s = testing::normal_tensor({1, 3, 16, 16}, rng);
  EXPECT_TRUE(bitwise_equal(gen.forward(s), back.forward(s)));
}

TEST(CheckpointTest, HeaderLayout) {
  ModelCheckpoint c;
  c.descriptor = "linear(2)";
  c.tensors.push_back({"w", Tensor({2}, {1.5, -2.0})});
  const auto bytes = save_checkpoint(c);
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "GLCK");
  EXPECT_EQ(bytes[4], kCheckpointVersion);
  // 4 magic + 4 version + 4 len + 9 descriptor + 4 count + 4 + 1 name + 4 rank + 8 extent + 16.
  EXPECT_EQ(bytes.size(), 58u);
  double last;
  std::memcpy(&last, bytes.data() + bytes.size() - 8, 8);
  EXPECT_EQ(last, -2.0);
}

TEST(CheckpointTest, TruncationIsRejected) {
  const auto bytes = save_checkpoint(to_checkpoint(Classifier{small_extractor(), SpabHead::random(16, 8, 4, 1)}));
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 1);
  EXPECT_THROW(load_checkpoint(cut), FormatError);
}

TEST(CheckpointTest, BadMagicAndVersionAreRejected) {
  ModelCheckpoint c;
  c.descriptor = "linear(2)";
  auto bytes = save_checkpoint(c);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(load_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
  EXPECT_THROW(load_checkpoint(bad_version), FormatError);
}

TEST(CheckpointTest, UnknownLayerIsRejected) {
  EXPECT_THROW(parse_descriptor("input(3,8,8);attention(4)"), FormatError);
  ModelCheckpoint c;
  c.descriptor = "input(3,8,8);linear(4)";
  auto bytes = save_checkpoint(c);
  // Overwrite "linear" with "lineax" in place.
  const std::string text(bytes.begin(), bytes.end());
  bytes[text.find("linear") + 5] = 'x';
  EXPECT_THROW(load_checkpoint(bytes), FormatError);
}

TEST(CheckpointTest, DescriptorFormatRoundTrip) {
  const std::string d = "input(3,16,16);conv(16,3,1);relu;maxpool;flatten;linear(128);spab(128,4)";
  EXPECT_EQ(format_descriptor(parse_descriptor(d)), d);
}

}  // namespace
}  // namespace gradleak
