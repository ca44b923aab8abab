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

#include "gradleak/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "gradleak/errors.hpp"

namespace gradleak::ops {
namespace {

using Impl = std::shared_ptr<detail::TensorImpl>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (Graph::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined operand");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require_defined(op, a);
  require_defined(op, b);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  require_defined(op, t);
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got " +
                     shape_to_string(t.shape()));
  }
}

// Wraps freshly computed values into a tensor and records the backward rule
// when tracking.
Tensor emit(const char* op, Shape shape, std::vector<double> values,
            bool track, Graph::BackwardFn fn) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite output");
    }
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::make_shared<std::vector<double>>(std::move(values));
  impl->requires_grad = track;
  if (track) Graph::active()->record(impl, std::move(fn));
  return make_tensor(std::move(impl));
}

const std::vector<double>& data(const Impl& impl) { return *impl->data; }

// Elementwise unary op with derivative expressed from input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  require_defined(op, x);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const bool track = tracking({&x});
  Impl xi = x.impl();
  Tensor result = emit(op, x.shape(), std::move(out), false, nullptr);
  if (track) {
    // Output storage is never mutated, so the closure can hold it directly.
    auto yi = result.impl();
    yi->requires_grad = true;
    Graph::active()->record(yi, [xi, ydata = yi->data, deriv](
                                    const std::vector<double>& g) {
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buffer();
      const auto& xs = *xi->data;
      const auto& ys = *ydata;
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += g[i] * deriv(xs[i], ys[i]);
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Impl ai = a.impl(), bi = b.impl();
  return emit("add", a.shape(), std::move(out), tracking({&a, &b}),
              [ai, bi](const std::vector<double>& g) {
                for (const Impl* p : {&ai, &bi}) {
                  if (!(*p)->requires_grad) continue;
                  auto& gp = (*p)->grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
                }
              });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Impl ai = a.impl(), bi = b.impl();
  return emit("sub", a.shape(), std::move(out), tracking({&a, &b}),
              [ai, bi](const std::vector<double>& g) {
                if (ai->requires_grad) {
                  auto& ga = ai->grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (bi->requires_grad) {
                  auto& gb = bi->grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                }
              });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Impl ai = a.impl(), bi = b.impl();
  return emit("mul", a.shape(), std::move(out), tracking({&a, &b}),
              [ai, bi](const std::vector<double>& g) {
                const auto& as = data(ai);
                const auto& bs = data(bi);
                if (ai->requires_grad) {
                  auto& ga = ai->grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bs[i];
                }
                if (bi->requires_grad) {
                  auto& gb = bi->grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * as[i];
                }
              });
}

Tensor scale(const Tensor& a, double factor) {
  require_defined("scale", a);
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  Impl ai = a.impl();
  return emit("scale", a.shape(), std::move(out), tracking({&a}),
              [ai, factor](const std::vector<double>& g) {
                auto& ga = ai->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
              });
}

Tensor add_scalar(const Tensor& a, double offset) {
  require_defined("add_scalar", a);
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + offset;
  Impl ai = a.impl();
  return emit("add_scalar", a.shape(), std::move(out), tracking({&a}),
              [ai](const std::vector<double>& g) {
                auto& ga = ai->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
              });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " +
                     shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const double* A = a.values().data();
  const double* B = b.values().data();
  std::vector<double> out(m * n, 0.0);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  Impl ai = a.impl(), bi = b.impl();
  return emit("matmul", {m, n}, std::move(out), tracking({&a, &b}),
              [ai, bi, m, k, n](const std::vector<double>& g) {
                const double* A = data(ai).data();
                const double* B = data(bi).data();
                if (ai->requires_grad) {
                  // dA = G * B^T
                  double* gA = ai->grad_buffer().data();
#pragma omp parallel for schedule(static)
                  for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = g.data() + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                      const double* brow = B + p * n;
                      double acc = 0.0;
                      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                      gA[i * k + p] += acc;
                    }
                  }
                }
                if (bi->requires_grad) {
                  // dB = A^T * G, summed over rows in index order.
                  double* gB = bi->grad_buffer().data();
#pragma omp parallel for schedule(static)
                  for (std::size_t p = 0; p < k; ++p) {
                    double* out_row = gB + p * n;
                    for (std::size_t i = 0; i < m; ++i) {
                      const double av = A[i * k + p];
                      if (av == 0.0) continue;
                      const double* grow = g.data() + i * n;
                      for (std::size_t j = 0; j < n; ++j) out_row[j] += av * grow[j];
                    }
                  }
                }
              });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_bias", x, 2);
  require_rank("add_bias", bias, 1);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (bias.dim(0) != cols) {
    throw ShapeError("add_bias: bias " + shape_to_string(bias.shape()) +
                     " does not match " + shape_to_string(x.shape()));
  }
  const auto xv = x.values(), bv = bias.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = xv[r * cols + c] + bv[c];
    }
  }
  Impl xi = x.impl(), bi = bias.impl();
  return emit("add_bias", x.shape(), std::move(out), tracking({&x, &bias}),
              [xi, bi, rows, cols](const std::vector<double>& g) {
                if (xi->requires_grad) {
                  auto& gx = xi->grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                }
                if (bi->requires_grad) {
                  auto& gb = bi->grad_buffer();
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                  }
                }
              });
}

namespace {

// Unfolds one (C, H, W) plane stack into columns (C*K*K, Ho*Wo).
void im2col(const double* in, std::size_t C, long H, long W, long K, long p, long Ho,
            long Wo, double* col) {
  for (std::size_t c = 0; c < C; ++c) {
    for (long ky = 0; ky < K; ++ky) {
      for (long kx = 0; kx < K; ++kx) {
        double* row = col + ((static_cast<long>(c) * K + ky) * K + kx) * Ho * Wo;
        for (long y = 0; y < Ho; ++y) {
          const long iy = y + ky - p;
          double* dst = row + y * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          const double* src = in + (static_cast<long>(c) * H + iy) * W;
          for (long x = 0; x < Wo; ++x) {
            const long ix = x + kx - p;
            dst[x] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Folds column gradients back onto the input gradient (adds).
void col2im(const double* col, std::size_t C, long H, long W, long K, long p, long Ho,
            long Wo, double* gin) {
  for (std::size_t c = 0; c < C; ++c) {
    for (long ky = 0; ky < K; ++ky) {
      for (long kx = 0; kx < K; ++kx) {
        const double* row = col + ((static_cast<long>(c) * K + ky) * K + kx) * Ho * Wo;
        for (long y = 0; y < Ho; ++y) {
          const long iy = y + ky - p;
          if (iy < 0 || iy >= H) continue;
          double* dst = gin + (static_cast<long>(c) * H + iy) * W;
          const double* src = row + y * Wo;
          for (long x = 0; x < Wo; ++x) {
            const long ix = x + kx - p;
            if (ix >= 0 && ix < W) dst[ix] += src[x];
          }
        }
      }
    }
  }
}

// out(:) += sum_q w[q] * rows(q, :) for a (Q, P) row-major block.
void axpy_rows(const double* w, const double* rows, std::size_t Q, std::size_t P,
               double* out) {
  std::size_t q = 0;
  for (; q + 4 <= Q; q += 4) {
    const double w0 = w[q], w1 = w[q + 1], w2 = w[q + 2], w3 = w[q + 3];
    const double* r0 = rows + q * P;
    const double* r1 = r0 + P;
    const double* r2 = r1 + P;
    const double* r3 = r2 + P;
    for (std::size_t i = 0; i < P; ++i) {
      out[i] += w0 * r0[i] + w1 * r1[i] + w2 * r2[i] + w3 * r3[i];
    }
  }
  for (; q < Q; ++q) {
    const double wv = w[q];
    const double* r = rows + q * P;
    for (std::size_t i = 0; i < P; ++i) out[i] += wv * r[i];
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int padding) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = weight.dim(0), K = weight.dim(2);
  if (weight.dim(1) != C || weight.dim(3) != K) {
    throw ShapeError("conv2d: weight " + shape_to_string(weight.shape()) +
                     " incompatible with input " + shape_to_string(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O)) {
    throw ShapeError("conv2d: bias " + shape_to_string(bias.shape()) +
                     " does not match " + std::to_string(O) + " channels");
  }
  if (padding < 0) throw ShapeError("conv2d: negative padding");
  const long p = padding;
  const long Hl = static_cast<long>(H), Wl = static_cast<long>(W);
  const long Kl = static_cast<long>(K);
  if (Hl + 2 * p - Kl + 1 <= 0 || Wl + 2 * p - Kl + 1 <= 0) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  const std::size_t Ho = static_cast<std::size_t>(Hl + 2 * p - Kl + 1);
  const std::size_t Wo = static_cast<std::size_t>(Wl + 2 * p - Kl + 1);
  const std::size_t P = Ho * Wo, Q = C * K * K;

  const double* X = x.values().data();
  const double* Wt = weight.values().data();
  const double* Bs = bias.defined() ? bias.values().data() : nullptr;
  std::vector<double> out(B * O * P);
#pragma omp parallel
  {
    std::vector<double> col(Q * P);
#pragma omp for schedule(static)
    for (std::size_t n = 0; n < B; ++n) {
      im2col(X + n * C * H * W, C, Hl, Wl, Kl, p, static_cast<long>(Ho),
             static_cast<long>(Wo), col.data());
      for (std::size_t o = 0; o < O; ++o) {
        double* plane = out.data() + (n * O + o) * P;
        std::fill(plane, plane + P, Bs ? Bs[o] : 0.0);
        axpy_rows(Wt + o * Q, col.data(), Q, P, plane);
      }
    }
  }

  Impl xi = x.impl(), wi = weight.impl();
  Impl bi = bias.defined() ? bias.impl() : nullptr;
  return emit(
      "conv2d", {B, O, Ho, Wo}, std::move(out), tracking({&x, &weight, &bias}),
      [xi, wi, bi, B, C, H, W, O, K, Ho, Wo, p, P, Q](const std::vector<double>& g) {
        const long Hl = static_cast<long>(H), Wl = static_cast<long>(W);
        const long Kl = static_cast<long>(K);
        const long Hol = static_cast<long>(Ho), Wol = static_cast<long>(Wo);
        const double* X = data(xi).data();
        const double* Wt = data(wi).data();
        if (xi->requires_grad) {
          double* gX = xi->grad_buffer().data();
#pragma omp parallel
          {
            std::vector<double> gcol(Q * P);
#pragma omp for schedule(static)
            for (std::size_t n = 0; n < B; ++n) {
              std::fill(gcol.begin(), gcol.end(), 0.0);
              // gcol(q, :) = sum_o W(o, q) g(o, :), four outputs rows at a time.
              std::vector<double> wcol(O);
              for (std::size_t q = 0; q < Q; ++q) {
                for (std::size_t o = 0; o < O; ++o) wcol[o] = Wt[o * Q + q];
                axpy_rows(wcol.data(), g.data() + n * O * P, O, P, gcol.data() + q * P);
              }
              col2im(gcol.data(), C, Hl, Wl, Kl, p, Hol, Wol, gX + n * C * H * W);
            }
          }
        }
        if (wi->requires_grad) {
          double* gW = wi->grad_buffer().data();
          // Per-sample columns, reduced in sample order for every weight.
          std::vector<double> cols(B * Q * P);
#pragma omp parallel for schedule(static)
          for (std::size_t n = 0; n < B; ++n) {
            im2col(X + n * C * H * W, C, Hl, Wl, Kl, p, Hol, Wol, cols.data() + n * Q * P);
          }
#pragma omp parallel for schedule(static)
          for (std::size_t o = 0; o < O; ++o) {
            double* gw = gW + o * Q;
            for (std::size_t n = 0; n < B; ++n) {
              const double* gplane = g.data() + (n * O + o) * P;
              const double* ncol = cols.data() + n * Q * P;
              for (std::size_t q = 0; q < Q; ++q) {
                const double* crow = ncol + q * P;
                double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                std::size_t i = 0;
                for (; i + 4 <= P; i += 4) {
                  a0 += gplane[i] * crow[i];
                  a1 += gplane[i + 1] * crow[i + 1];
                  a2 += gplane[i + 2] * crow[i + 2];
                  a3 += gplane[i + 3] * crow[i + 3];
                }
                for (; i < P; ++i) a0 += gplane[i] * crow[i];
                gw[q] += (a0 + a1) + (a2 + a3);
              }
            }
          }
        }
        if (bi && bi->requires_grad) {
          auto& gb = bi->grad_buffer();
          for (std::size_t o = 0; o < O; ++o) {
            double acc = 0.0;
            for (std::size_t n = 0; n < B; ++n) {
              const double* gplane = g.data() + (n * O + o) * P;
              for (std::size_t i = 0; i < P; ++i) acc += gplane[i];
            }
            gb[o] += acc;
          }
        }
      });
}

Tensor maxpool2x2(const Tensor& x) {
  require_rank("maxpool2x2", x, 4);
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0 || H == 0 || W == 0) {
    throw ShapeError("maxpool2x2: spatial size must be even, got " +
                     shape_to_string(x.shape()));
  }
  const std::size_t Ho = H / 2, Wo = W / 2;
  const double* X = x.values().data();
  std::vector<double> out(B * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t plane = 0; plane < B * C; ++plane) {
    const double* in = X + plane * H * W;
    for (std::size_t y = 0; y < Ho; ++y) {
      for (std::size_t xx = 0; xx < Wo; ++xx) {
        const std::size_t base = (2 * y) * W + 2 * xx;
        std::size_t best = base;
        for (std::size_t idx : {base + 1, base + W, base + W + 1}) {
          if (in[idx] > in[best]) best = idx;
        }
        const std::size_t o = plane * Ho * Wo + y * Wo + xx;
        out[o] = in[best];
        (*argmax)[o] = plane * H * W + best;
      }
    }
  }
  Impl xi = x.impl();
  return emit("maxpool2x2", {B, C, Ho, Wo}, std::move(out), tracking({&x}),
              [xi, argmax](const std::vector<double>& g) {
                auto& gx = xi->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
              });
}

Tensor upsample_nearest2x(const Tensor& x) {
  require_rank("upsample_nearest2x", x, 4);
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = 2 * H, Wo = 2 * W;
  const double* X = x.values().data();
  std::vector<double> out(B * C * Ho * Wo);
  for (std::size_t plane = 0; plane < B * C; ++plane) {
    for (std::size_t y = 0; y < Ho; ++y) {
      for (std::size_t xx = 0; xx < Wo; ++xx) {
        out[plane * Ho * Wo + y * Wo + xx] = X[plane * H * W + (y / 2) * W + xx / 2];
      }
    }
  }
  Impl xi = x.impl();
  return emit("upsample_nearest2x", {B, C, Ho, Wo}, std::move(out),
              tracking({&x}),
              [xi, B, C, H, W, Ho, Wo](const std::vector<double>& g) {
                auto& gx = xi->grad_buffer();
                for (std::size_t plane = 0; plane < B * C; ++plane) {
                  for (std::size_t y = 0; y < Ho; ++y) {
                    for (std::size_t xx = 0; xx < Wo; ++xx) {
                      gx[plane * H * W + (y / 2) * W + xx / 2] +=
                          g[plane * Ho * Wo + y * Wo + xx];
                    }
                  }
                }
              });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank("concat_channels", a, 4);
  require_rank("concat_channels", b, 4);
  const std::size_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  const std::size_t H = a.dim(2), W = a.dim(3);
  if (b.dim(0) != B || b.dim(2) != H || b.dim(3) != W) {
    throw ShapeError("concat_channels: " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
  const std::size_t plane = H * W, C = Ca + Cb;
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(B * C * plane);
  for (std::size_t n = 0; n < B; ++n) {
    std::copy_n(av.data() + n * Ca * plane, Ca * plane,
                out.data() + n * C * plane);
    std::copy_n(bv.data() + n * Cb * plane, Cb * plane,
                out.data() + (n * C + Ca) * plane);
  }
  Impl ai = a.impl(), bi = b.impl();
  return emit("concat_channels", {B, C, H, W}, std::move(out),
              tracking({&a, &b}),
              [ai, bi, B, Ca, Cb, C, plane](const std::vector<double>& g) {
                if (ai->requires_grad) {
                  auto& ga = ai->grad_buffer();
                  for (std::size_t n = 0; n < B; ++n) {
                    for (std::size_t i = 0; i < Ca * plane; ++i) {
                      ga[n * Ca * plane + i] += g[n * C * plane + i];
                    }
                  }
                }
                if (bi->requires_grad) {
                  auto& gb = bi->grad_buffer();
                  for (std::size_t n = 0; n < B; ++n) {
                    for (std::size_t i = 0; i < Cb * plane; ++i) {
                      gb[n * Cb * plane + i] += g[(n * C + Ca) * plane + i];
                    }
                  }
                }
              });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x,
      [](double v) { return std::log1p(std::exp(-std::abs(v))) + std::max(v, 0.0); },
      [](double v, double) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined("reshape", x);
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) +
                     " as " + shape_to_string(shape));
  }
  const auto xv = x.values();
  Impl xi = x.impl();
  return emit("reshape", std::move(shape),
              std::vector<double>(xv.begin(), xv.end()), tracking({&x}),
              [xi](const std::vector<double>& g) {
                auto& gx = xi->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
              });
}

Tensor flatten(const Tensor& x) {
  require_defined("flatten", x);
  if (x.rank() < 2) throw ShapeError("flatten: needs a batch axis");
  return reshape(x, {x.dim(0), x.size() / x.dim(0)});
}

Tensor sum(const Tensor& x) {
  require_defined("sum", x);
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Impl xi = x.impl();
  return emit("sum", {1}, {acc}, tracking({&x}),
              [xi](const std::vector<double>& g) {
                auto& gx = xi->grad_buffer();
                for (double& v : gx) v += g[0];
              });
}

Tensor mean(const Tensor& x) {
  require_defined("mean", x);
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  const double n = static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Impl xi = x.impl();
  return emit("mean", {1}, {acc / n}, tracking({&x}),
              [xi, n](const std::vector<double>& g) {
                auto& gx = xi->grad_buffer();
                for (double& v : gx) v += g[0] / n;
              });
}

Tensor l2_norm(const Tensor& x) {
  require_defined("l2_norm", x);
  double acc = 0.0;
  for (double v : x.values()) acc += v * v;
  const double norm = std::sqrt(acc);
  Impl xi = x.impl();
  return emit("l2_norm", {1}, {norm}, tracking({&x}),
              [xi, norm](const std::vector<double>& g) {
                if (norm == 0.0) return;
                auto& gx = xi->grad_buffer();
                const auto& xs = data(xi);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * xs[i] / norm;
              });
}

namespace {

std::pair<std::size_t, std::size_t> rows_cols(const char* op, const Tensor& x) {
  require_defined(op, x);
  if (x.rank() == 1) return {1, x.dim(0)};
  if (x.rank() == 2) return {x.dim(0), x.dim(1)};
  throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " +
                   shape_to_string(x.shape()));
}

std::vector<double> row_softmax(std::span<const double> xv, std::size_t rows,
                                std::size_t cols) {
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  return out;
}

}  // namespace

Tensor softmax(const Tensor& x) {
  const auto [rows, cols] = rows_cols("softmax", x);
  std::vector<double> out = row_softmax(x.values(), rows, cols);
  auto probs = std::make_shared<std::vector<double>>(out);
  Impl xi = x.impl();
  return emit("softmax", x.shape(), std::move(out), tracking({&x}),
              [xi, probs, rows, cols](const std::vector<double>& g) {
                auto& gx = xi->grad_buffer();
                const auto& s = *probs;
                for (std::size_t r = 0; r < rows; ++r) {
                  double dot = 0.0;
                  for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * s[r * cols + c];
                  for (std::size_t c = 0; c < cols; ++c) {
                    gx[r * cols + c] += s[r * cols + c] * (g[r * cols + c] - dot);
                  }
                }
              });
}

Tensor log_softmax(const Tensor& x) {
  const auto [rows, cols] = rows_cols("log_softmax", x);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[c] - lse;
  }
  auto probs = std::make_shared<std::vector<double>>(row_softmax(xv, rows, cols));
  Impl xi = x.impl();
  return emit("log_softmax", x.shape(), std::move(out), tracking({&x}),
              [xi, probs, rows, cols](const std::vector<double>& g) {
                auto& gx = xi->grad_buffer();
                const auto& s = *probs;
                for (std::size_t r = 0; r < rows; ++r) {
                  double total = 0.0;
                  for (std::size_t c = 0; c < cols; ++c) total += g[r * cols + c];
                  for (std::size_t c = 0; c < cols; ++c) {
                    gx[r * cols + c] += g[r * cols + c] - s[r * cols + c] * total;
                  }
                }
              });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(B));
  }
  for (int c : labels) {
    if (c < 0 || static_cast<std::size_t>(c) >= C) {
      throw ShapeError("cross_entropy: label " + std::to_string(c) +
                       " outside [0, " + std::to_string(C) + ")");
    }
  }
  const auto xv = logits.values();
  auto probs = std::make_shared<std::vector<double>>(row_softmax(xv, B, C));
  double loss = 0.0;
  for (std::size_t r = 0; r < B; ++r) {
    const double* in = xv.data() + r * C;
    const double mx = *std::max_element(in, in + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(in[c] - mx);
    loss += mx + std::log(z) - in[labels[r]];
  }
  loss /= static_cast<double>(B);
  auto targets = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  Impl xi = logits.impl();
  return emit("cross_entropy", {1}, {loss}, tracking({&logits}),
              [xi, probs, targets, B, C](const std::vector<double>& g) {
                auto& gx = xi->grad_buffer();
                const double w = g[0] / static_cast<double>(B);
                for (std::size_t r = 0; r < B; ++r) {
                  for (std::size_t c = 0; c < C; ++c) {
                    const double onehot = (static_cast<int>(c) == (*targets)[r]) ? 1.0 : 0.0;
                    gx[r * C + c] += w * ((*probs)[r * C + c] - onehot);
                  }
                }
              });
}

Tensor tv_norm(const Tensor& image) {
  require_defined("tv_norm", image);
  std::size_t C, H, W;
  if (image.rank() == 3) {
    C = image.dim(0), H = image.dim(1), W = image.dim(2);
  } else if (image.rank() == 4 && image.dim(0) == 1) {
    C = image.dim(1), H = image.dim(2), W = image.dim(3);
  } else {
    throw ShapeError("tv_norm: expected (C, H, W) or (1, C, H, W), got " +
                     shape_to_string(image.shape()));
  }
  const double* X = image.values().data();
  double total = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    const double* p = X + c * H * W;
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        if (i + 1 < H) total += std::abs(p[(i + 1) * W + j] - p[i * W + j]);
        if (j + 1 < W) total += std::abs(p[i * W + j + 1] - p[i * W + j]);
      }
    }
  }
  Impl xi = image.impl();
  return emit("tv_norm", {1}, {total}, tracking({&image}),
              [xi, C, H, W](const std::vector<double>& g) {
                auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
                auto& gx = xi->grad_buffer();
                const double* X = data(xi).data();
                for (std::size_t c = 0; c < C; ++c) {
                  const double* p = X + c * H * W;
                  double* gp = gx.data() + c * H * W;
                  for (std::size_t i = 0; i < H; ++i) {
                    for (std::size_t j = 0; j < W; ++j) {
                      if (i + 1 < H) {
                        const double s = g[0] * sign(p[(i + 1) * W + j] - p[i * W + j]);
                        gp[(i + 1) * W + j] += s;
                        gp[i * W + j] -= s;
                      }
                      if (j + 1 < W) {
                        const double s = g[0] * sign(p[i * W + j + 1] - p[i * W + j]);
                        gp[i * W + j + 1] += s;
                        gp[i * W + j] -= s;
                      }
                    }
                  }
                }
              });
}

}  // namespace gradleak::ops
