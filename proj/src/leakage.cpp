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

#include "gradleak/leakage.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "gradleak/errors.hpp"

namespace gradleak {

std::vector<IrCandidate> extract_candidate_irs(const Tensor& grad_w, const Tensor& grad_b,
                                               double tol) {
  if (grad_w.rank() != 2 || grad_b.rank() != 1 || grad_b.dim(0) != grad_w.dim(1)) {
    throw ShapeError("extract_candidate_irs expects dw (M, N) and db (N)");
  }
  if (!(tol > 0.0)) throw ConfigError("bias tolerance must be positive");
  const std::size_t m = grad_w.dim(0), n = grad_w.dim(1);
  const auto gw = grad_w.values();
  const auto gb = grad_b.values();
  std::vector<IrCandidate> out;
  for (std::size_t q = 0; q < n; ++q) {
    if (!(std::abs(gb[q]) > tol)) continue;
    IrCandidate cand;
    cand.vector.resize(m);
    bool finite = true;
    for (std::size_t i = 0; i < m; ++i) {
      cand.vector[i] = gw[i * n + q] / gb[q];
      finite = finite && std::isfinite(cand.vector[i]);
    }
    if (!finite) continue;
    cand.source_column = q;
    cand.bias_gradient = std::abs(gb[q]);
    out.push_back(std::move(cand));
  }
  return out;
}

std::vector<IrCandidate> extract_candidate_irs(const GradientUpdate& update, double tol) {
  return extract_candidate_irs(update.grad_w, update.grad_b, tol);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<IrCandidate> dedupe_candidates(std::vector<IrCandidate> candidates,
                                           double cos_threshold) {
  if (!(cos_threshold > 0.0 && cos_threshold < 1.0)) {
    throw ConfigError("cos_threshold must lie in (0, 1)");
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const IrCandidate& a, const IrCandidate& b) {
                     return a.bias_gradient > b.bias_gradient;
                   });
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    bool placed = false;
    for (auto& g : groups) {
      if (cosine_similarity(candidates[g.front()].vector, candidates[i].vector) >=
          cos_threshold) {
        g.push_back(i);
        placed = true;
        break;
      }
    }
    if (!placed) groups.push_back({i});
  }
  std::vector<IrCandidate> out;
  out.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    IrCandidate rep = candidates[groups[g].front()];
    if (groups[g].size() > 1) {
      std::fill(rep.vector.begin(), rep.vector.end(), 0.0);
      for (std::size_t idx : groups[g]) {
        for (std::size_t k = 0; k < rep.vector.size(); ++k) {
          rep.vector[k] += candidates[idx].vector[k];
        }
      }
      for (double& v : rep.vector) v /= static_cast<double>(groups[g].size());
    }
    rep.group = static_cast<int>(g);
    out.push_back(std::move(rep));
  }
  return out;
}

LeakageReport leakage_report(const Tensor& z, const Tensor& z_act, const Tensor& z_act_grad) {
  if (z.rank() != 2 || z.shape() != z_act.shape() || z.shape() != z_act_grad.shape()) {
    throw ShapeError("leakage oracle expects equal (B, N) tensors");
  }
  const std::size_t b = z.dim(0), n = z.dim(1);
  const auto zv = z.values();
  const auto gv = z_act_grad.values();
  LeakageReport report;
  report.batch_size = b;
  std::set<std::size_t> rows;
  for (std::size_t q = 0; q < n; ++q) {
    std::size_t nonzero = 0, owner = 0;
    for (std::size_t p = 0; p < b; ++p) {
      const double dz = zv[p * n + q] > 0.0 ? gv[p * n + q] : 0.0;
      if (dz != 0.0) {
        ++nonzero;
        owner = p;
      }
    }
    if (nonzero == 1) {
      rows.insert(owner);
      report.exclusive_columns.emplace_back(owner, q);
    }
  }
  report.exclusive_rows.assign(rows.begin(), rows.end());
  report.rate = b == 0 ? 0.0 : static_cast<double>(rows.size()) / static_cast<double>(b);
  return report;
}

double leakage_rate_oracle(const Tensor& z, const Tensor& z_act, const Tensor& z_act_grad) {
  return leakage_report(z, z_act, z_act_grad).rate;
}

double measure_leakage_rate(const SpabHead& head, const Tensor& irs,
                            std::span<const int> labels) {
  const ClientTrace trace = trace_head_update(head, irs, labels);
  return leakage_rate_oracle(trace.z, trace.z_act, trace.z_act_grad);
}

std::vector<RecoveryMatch> match_candidates(std::span<const IrCandidate> candidates,
                                            const Tensor& irs, double max_distance) {
  if (irs.rank() != 2) throw ShapeError("match_candidates expects IRs (B, M)");
  const std::size_t b = irs.dim(0), m = irs.dim(1);
  const auto y = irs.values();
  std::vector<RecoveryMatch> out;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (candidates[c].vector.size() != m) throw ShapeError("candidate length differs from M");
    double best = max_distance;
    std::size_t best_row = b;
    for (std::size_t p = 0; p < b; ++p) {
      const double d =
          1.0 - cosine_similarity(candidates[c].vector, y.subspan(p * m, m));
      if (d <= best) {
        best = d;
        best_row = p;
      }
    }
    if (best_row < b) out.push_back({c, best_row, best});
  }
  return out;
}

double attacker_recovery_rate(std::span<const IrCandidate> candidates, const Tensor& irs,
                              double max_distance) {
  std::set<std::size_t> rows;
  for (const auto& m : match_candidates(candidates, irs, max_distance)) rows.insert(m.row);
  return static_cast<double>(rows.size()) / static_cast<double>(irs.dim(0));
}

ModelCheckpoint candidates_to_checkpoint(std::span<const IrCandidate> candidates,
                                         std::size_t ir_dim) {
  const std::size_t k = candidates.size();
  std::vector<double> vectors;
  vectors.reserve(k * ir_dim);
  std::vector<double> meta;
  meta.reserve(k * 3);
  for (const auto& c : candidates) {
    if (c.vector.size() != ir_dim) throw ShapeError("candidate length differs from M");
    vectors.insert(vectors.end(), c.vector.begin(), c.vector.end());
    meta.push_back(static_cast<double>(c.source_column));
    meta.push_back(c.bias_gradient);
    meta.push_back(static_cast<double>(c.group));
  }
  ModelCheckpoint ckpt;
  ckpt.descriptor = format_descriptor(
      {{"ir_candidates", {static_cast<long long>(k), static_cast<long long>(ir_dim)}}});
  ckpt.tensors = {{"candidates.vectors", Tensor({k, ir_dim}, std::move(vectors))},
                  {"candidates.meta", Tensor({k, 3}, std::move(meta))}};
  return ckpt;
}

std::vector<IrCandidate> candidates_from_checkpoint(const ModelCheckpoint& checkpoint) {
  const auto tokens = parse_descriptor(checkpoint.descriptor);
  if (tokens.size() != 1 || tokens[0].name != "ir_candidates" || tokens[0].args.size() != 2) {
    throw FormatError("descriptor is not an IR candidate list: " + checkpoint.descriptor);
  }
  const std::size_t k = static_cast<std::size_t>(tokens[0].args[0]);
  const std::size_t m = static_cast<std::size_t>(tokens[0].args[1]);
  const Tensor& vectors = checkpoint.find("candidates.vectors");
  const Tensor& meta = checkpoint.find("candidates.meta");
  if (vectors.shape() != Shape{k, m} || meta.shape() != Shape{k, 3}) {
    throw FormatError("candidate tensors do not match descriptor");
  }
  std::vector<IrCandidate> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    auto row = vectors.values().subspan(i * m, m);
    out[i].vector.assign(row.begin(), row.end());
    out[i].source_column = static_cast<std::size_t>(meta.at(i * 3));
    out[i].bias_gradient = meta.at(i * 3 + 1);
    out[i].group = static_cast<int>(meta.at(i * 3 + 2));
  }
  return out;
}

}  // namespace gradleak
