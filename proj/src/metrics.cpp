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

#include "gradleak/metrics.hpp"

#include <cmath>
#include <vector>

#include "gradleak/errors.hpp"

namespace gradleak {
namespace {

struct ImageDims {
  std::size_t c, h, w;
};

ImageDims image_dims(const Tensor& t) {
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  if (t.rank() == 4 && t.dim(0) == 1) return {t.dim(1), t.dim(2), t.dim(3)};
  throw ShapeError("expected a (C, H, W) or (1, C, H, W) image, got " +
                   shape_to_string(t.shape()));
}

void require_same_size(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size() || a.size() == 0) {
    throw ShapeError("image shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

}  // namespace

double psnr(const Tensor& reconstructed, const Tensor& reference) {
  require_same_size(reconstructed, reference);
  const auto a = reconstructed.values(), b = reference.values();
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double ssim(const Tensor& reconstructed, const Tensor& reference) {
  const ImageDims d = image_dims(reconstructed);
  const ImageDims e = image_dims(reference);
  if (d.c != e.c || d.h != e.h || d.w != e.w) {
    throw ShapeError("image shape mismatch " + shape_to_string(reconstructed.shape()) +
                     " vs " + shape_to_string(reference.shape()));
  }
  if (d.h < kSsimWindow || d.w < kSsimWindow) {
    throw ShapeError("image smaller than the 8x8 SSIM window");
  }
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  constexpr double kN = static_cast<double>(kSsimWindow * kSsimWindow);
  const auto x = reconstructed.values(), y = reference.values();
  const std::size_t wy = d.h - kSsimWindow + 1, wx = d.w - kSsimWindow + 1;

  // Summed-area tables of x, y, x^2, y^2, xy per channel.
  const std::size_t sw = d.w + 1;
  std::vector<double> sx((d.h + 1) * sw), sy(sx.size()), sxx(sx.size()),
      syy(sx.size()), sxy(sx.size());
  double total = 0.0;
  for (std::size_t c = 0; c < d.c; ++c) {
    const double* px = x.data() + c * d.h * d.w;
    const double* py = y.data() + c * d.h * d.w;
    for (std::size_t i = 0; i < d.h; ++i) {
      for (std::size_t j = 0; j < d.w; ++j) {
        const double a = px[i * d.w + j], b = py[i * d.w + j];
        const std::size_t k = (i + 1) * sw + (j + 1);
        const std::size_t up = i * sw + (j + 1), left = (i + 1) * sw + j, diag = i * sw + j;
        sx[k] = a + sx[up] + sx[left] - sx[diag];
        sy[k] = b + sy[up] + sy[left] - sy[diag];
        sxx[k] = a * a + sxx[up] + sxx[left] - sxx[diag];
        syy[k] = b * b + syy[up] + syy[left] - syy[diag];
        sxy[k] = a * b + sxy[up] + sxy[left] - sxy[diag];
      }
    }
    auto box = [&](const std::vector<double>& s, std::size_t i, std::size_t j) {
      const std::size_t i1 = i + kSsimWindow, j1 = j + kSsimWindow;
      return s[i1 * sw + j1] - s[i * sw + j1] - s[i1 * sw + j] + s[i * sw + j];
    };
    for (std::size_t i = 0; i < wy; ++i) {
      for (std::size_t j = 0; j < wx; ++j) {
        const double mx = box(sx, i, j) / kN, my = box(sy, i, j) / kN;
        const double vx = box(sxx, i, j) / kN - mx * mx;
        const double vy = box(syy, i, j) / kN - my * my;
        const double cxy = box(sxy, i, j) / kN - mx * my;
        total += ((2 * mx * my + kC1) * (2 * cxy + kC2)) /
                 ((mx * mx + my * my + kC1) * (vx + vy + kC2));
      }
    }
  }
  return total / static_cast<double>(d.c * wy * wx);
}

double reconstruction_rate(std::span<const ImagePair> pairs, double ssim_threshold) {
  if (pairs.empty()) throw ConfigError("reconstruction_rate needs at least one pair");
  std::size_t ok = 0;
  for (const auto& p : pairs) {
    if (ssim(p.reconstructed, p.reference) > ssim_threshold) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  for (double v : values) out.stddev += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(out.stddev / static_cast<double>(values.size()));
  return out;
}

}  // namespace gradleak
