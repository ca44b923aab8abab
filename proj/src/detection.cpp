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

#include "gradleak/detection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "gradleak/errors.hpp"

namespace gradleak {
namespace {

bool is_weight_name(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf != "bias" && leaf != "b" && leaf != "b2";
}

void add_report(ScanResult& scan, const std::string& layer, std::size_t index,
                std::span<const double> values, const ScanOptions& options) {
  WeightVectorReport r;
  r.layer = layer;
  r.index = index;
  r.size = values.size();
  r.entropy = normalized_entropy(values, options.bin_width);
  r.flagged = r.entropy < options.threshold;
  scan.reports.push_back(std::move(r));
}

void fill(Tensor& t, double value) {
  for (double& v : t.mutable_values()) v = value;
}

}  // namespace

double normalized_entropy(std::span<const double> values, double bin_width) {
  if (!(bin_width > 0.0)) throw ConfigError("bin width must be positive");
  const std::size_t n = values.size();
  if (n < 2) return 1.0;
  std::vector<double> bins;
  bins.reserve(n);
  for (double v : values) bins.push_back(std::floor(v / bin_width));
  std::sort(bins.begin(), bins.end());
  double h = 0.0;
  const double total = static_cast<double>(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && bins[j] == bins[i]) ++j;
    const double p = static_cast<double>(j - i) / total;
    h -= p * std::log(p);
    i = j;
  }
  return std::clamp(h / std::log(total), 0.0, 1.0);
}

ScanResult scan_checkpoint(const ModelCheckpoint& checkpoint, const ScanOptions& options) {
  if (!(options.threshold > 0.0 && options.threshold <= 1.0)) {
    throw ConfigError("entropy threshold must lie in (0, 1]");
  }
  ScanResult scan;
  for (const auto& [name, tensor] : checkpoint.tensors) {
    if (!is_weight_name(name)) continue;
    if (tensor.rank() == 4) {
      const std::size_t per = tensor.size() / tensor.dim(0);
      for (std::size_t o = 0; o < tensor.dim(0); ++o) {
        add_report(scan, name, o, tensor.values().subspan(o * per, per), options);
      }
    } else if (tensor.rank() == 2) {
      add_report(scan, name, 0, tensor.values(), options);
    }
  }
  if (scan.reports.empty()) return scan;
  std::vector<double> entropies;
  for (const auto& r : scan.reports) {
    entropies.push_back(r.entropy);
    scan.anomalous = scan.anomalous || r.flagged;
  }
  std::sort(entropies.begin(), entropies.end());
  scan.min_entropy = entropies.front();
  // Linear interpolation between order statistics.
  const double pos = 0.03 * static_cast<double>(entropies.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, entropies.size() - 1);
  scan.percentile3 = entropies[lo] + (pos - static_cast<double>(lo)) * (entropies[hi] - entropies[lo]);
  return scan;
}

ScanResult scan_model(const Classifier& model, const ScanOptions& options) {
  return scan_checkpoint(to_checkpoint(model), options);
}

void write_scan_csv(const std::filesystem::path& path, const ScanResult& scan) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "layer,index,size,entropy,flagged\n";
  out.precision(10);
  for (const auto& r : scan.reports) {
    out << r.layer << ',' << r.index << ',' << r.size << ',' << r.entropy << ','
        << (r.flagged ? 1 : 0) << '\n';
  }
}

std::string scan_verdict_json(const ScanResult& scan, const ScanOptions& options) {
  nlohmann::ordered_json j;
  j["verdict"] = scan.anomalous ? "anomalous" : "clean";
  j["min_entropy"] = scan.min_entropy;
  j["percentile3"] = scan.percentile3;
  j["vectors"] = scan.reports.size();
  std::size_t flagged = 0;
  for (const auto& r : scan.reports) flagged += r.flagged ? 1 : 0;
  j["flagged"] = flagged;
  j["threshold"] = options.threshold;
  j["bin_width"] = options.bin_width;
  return j.dump(2);
}

Tensor make_identity_kernel(std::size_t in_ch, std::size_t k) {
  if (k % 2 == 0) throw ConfigError("identity kernels need an odd size");
  if (in_ch == 0) throw ConfigError("identity kernel needs at least one channel");
  Tensor t = Tensor::zeros({in_ch, in_ch, k, k});
  auto v = t.mutable_values();
  for (std::size_t i = 0; i < in_ch; ++i) {
    v[((i * in_ch + i) * k + k / 2) * k + k / 2] = 1.0;
  }
  return t;
}

Tensor make_zero_kernel(std::size_t out_ch, std::size_t in_ch, std::size_t k) {
  if (out_ch == 0 || in_ch == 0 || k == 0) throw ConfigError("zero kernel needs positive sizes");
  return Tensor::zeros({out_ch, in_ch, k, k});
}

RtfModule make_rtf_module(std::size_t ir_dim, std::size_t width, std::size_t classes) {
  if (ir_dim == 0 || width == 0 || classes == 0) {
    throw ConfigError("RtF module needs positive sizes");
  }
  RtfModule m;
  m.w = Tensor::full({ir_dim, width}, 1.0 / static_cast<double>(ir_dim));
  std::vector<double> cut(width);
  for (std::size_t j = 0; j < width; ++j) {
    cut[j] = -static_cast<double>(j) / static_cast<double>(width);
  }
  m.b = Tensor({width}, std::move(cut));
  std::vector<double> w2(width * classes);
  for (std::size_t j = 0; j < width; ++j) {
    for (std::size_t c = 0; c < classes; ++c) w2[j * classes + c] = j % 2 == 0 ? 1.0 : -1.0;
  }
  m.w2 = Tensor({width, classes}, std::move(w2));
  m.b2 = Tensor::zeros({classes});
  return m;
}

void implant_identity_kernels(FeatureExtractor& extractor) {
  for (auto& e : extractor.params().entries()) {
    Tensor& t = e.tensor;
    if (t.rank() != 4) continue;
    const std::size_t out = t.dim(0), in = t.dim(1), k = t.dim(2);
    const Tensor id = make_identity_kernel(in, k);
    const std::size_t per = in * k * k;
    auto v = t.mutable_values();
    for (std::size_t o = 0; o < std::min(out, in); ++o) {
      std::copy_n(id.values().begin() + o * per, per, v.begin() + o * per);
    }
  }
}

void implant_zero_kernels(FeatureExtractor& extractor) {
  for (auto& e : extractor.params().entries()) {
    Tensor& t = e.tensor;
    if (t.rank() != 4) continue;
    const std::size_t per = t.size() / t.dim(0);
    auto v = t.mutable_values();
    std::fill_n(v.begin(), per, 0.0);
  }
}

void implant_rtf_head(Classifier& model) {
  const RtfModule m = make_rtf_module(model.head.ir_dim(), model.head.width(),
                                      model.head.classes());
  SpabHead& h = model.head;
  std::copy(m.w.values().begin(), m.w.values().end(), h.w.mutable_values().begin());
  std::copy(m.b.values().begin(), m.b.values().end(), h.b.mutable_values().begin());
  std::copy(m.w2.values().begin(), m.w2.values().end(), h.w2.mutable_values().begin());
  fill(h.b2, 0.0);
}

std::uint64_t structural_checksum(const std::string& descriptor) {
  const std::string canonical = format_descriptor(parse_descriptor(descriptor));
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace gradleak
