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

// Differentiable primitives. Every op validates shapes (ShapeError), rejects
// non-finite results (NumericError) and records itself on the active Graph
// when an input requires a gradient.
//
// Layout conventions: images are (B, C, H, W); dense activations are (B, N);
// linear weights are (in, out) so a layer computes Y * w + b.
// Subgradients: relu'(0) = 0, |x|'(0) = 0.

#ifndef GRADLEAK_OPS_HPP_
#define GRADLEAK_OPS_HPP_

#include <span>

#include "gradleak/tensor.hpp"

namespace gradleak::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

// (m, k) x (k, n) -> (m, n)
Tensor matmul(const Tensor& a, const Tensor& b);
// (B, N) + (N) broadcast over rows. The only broadcast supported.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// Stride-1 convolution. x: (B, C, H, W), weight: (O, C, k, k), bias: (O) or
// undefined. Output spatial size is H + 2 * padding - k + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int padding);
// 2x2 max pooling with stride 2; H and W must be even.
Tensor maxpool2x2(const Tensor& x);
Tensor upsample_nearest2x(const Tensor& x);
Tensor concat_channels(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

// (B, ...) -> (B, prod(...))
Tensor flatten(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor l2_norm(const Tensor& x);

// Row-wise over the last axis of a rank-1 or rank-2 tensor.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
// Mean cross-entropy of (B, C) logits against class indices.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// Anisotropic total variation of a (C, H, W) or (1, C, H, W) image.
Tensor tv_norm(const Tensor& image);

}  // namespace gradleak::ops

#endif  // GRADLEAK_OPS_HPP_
