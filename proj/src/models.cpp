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

#include "gradleak/models.hpp"

#include <cmath>

#include "gradleak/errors.hpp"
#include "gradleak/ops.hpp"
#include "gradleak/rng.hpp"

namespace gradleak {
namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(numel(shape));
  for (double& x : v) x = stddev * standard_normal(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor view(const Tensor& param, ParamMode mode) {
  return mode == ParamMode::kTrainable ? param : param.detach();
}

void require_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  if (!t.defined() || t.shape() != expected) {
    throw ShapeError(what + ": expected " + shape_to_string(expected) +
                     ", got " + shape_to_string(t.shape()));
  }
}

std::string layer_prefix(std::size_t index) {
  return "fe." + std::to_string(index);
}

std::size_t arg(const DescriptorToken& token, std::size_t i) {
  if (i >= token.args.size() || token.args[i] <= 0) {
    throw FormatError("layer '" + token.name + "' has missing or invalid arguments");
  }
  return static_cast<std::size_t>(token.args[i]);
}

}  // namespace

ParameterSet::ParameterSet(const ParameterSet& other) {
  for (const auto& e : other.entries_) {
    Tensor copy = e.tensor.clone();
    copy.set_requires_grad(e.tensor.requires_grad());
    entries_.push_back({e.name, std::move(copy)});
  }
}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this != &other) {
    ParameterSet tmp(other);
    entries_ = std::move(tmp.entries_);
  }
  return *this;
}

void ParameterSet::add(std::string name, Tensor tensor) {
  entries_.push_back({std::move(name), std::move(tensor)});
}

const Tensor& ParameterSet::get(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw FormatError("missing parameter '" + std::string(name) + "'");
}

Tensor& ParameterSet::get(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

FeatureExtractorSpec FeatureExtractorSpec::desk_default(std::size_t channels,
                                                        std::size_t height,
                                                        std::size_t width,
                                                        std::size_t ir_dim) {
  FeatureExtractorSpec spec;
  spec.channels = channels;
  spec.height = height;
  spec.width = width;
  spec.layers = {
      {LayerKind::kConv, 16, 3, 1}, {LayerKind::kRelu},
      {LayerKind::kMaxPool},        {LayerKind::kConv, 32, 3, 1},
      {LayerKind::kRelu},           {LayerKind::kMaxPool},
      {LayerKind::kFlatten},        {LayerKind::kLinear, ir_dim, 0, 0},
  };
  return spec;
}

std::size_t FeatureExtractorSpec::ir_dim() const {
  if (channels == 0 || height == 0 || width == 0) {
    throw ShapeError("feature extractor input shape must be positive");
  }
  if (layers.empty()) throw ShapeError("feature extractor has no layers");
  std::size_t c = channels, h = height, w = width, flat = 0;
  bool is_flat = false;
  for (const auto& layer : layers) {
    switch (layer.kind) {
      case LayerKind::kConv: {
        if (is_flat) throw ShapeError("conv layer after flatten");
        if (layer.out == 0 || layer.kernel == 0) throw ShapeError("conv layer with zero size");
        const long ho = static_cast<long>(h + 2 * layer.padding) - static_cast<long>(layer.kernel) + 1;
        const long wo = static_cast<long>(w + 2 * layer.padding) - static_cast<long>(layer.kernel) + 1;
        if (ho <= 0 || wo <= 0) throw ShapeError("conv kernel larger than its input");
        c = layer.out;
        h = static_cast<std::size_t>(ho);
        w = static_cast<std::size_t>(wo);
        break;
      }
      case LayerKind::kRelu:
        break;
      case LayerKind::kMaxPool:
        if (is_flat || h % 2 || w % 2) throw ShapeError("maxpool needs an even spatial input");
        h /= 2;
        w /= 2;
        break;
      case LayerKind::kFlatten:
        if (is_flat) throw ShapeError("double flatten");
        flat = c * h * w;
        is_flat = true;
        break;
      case LayerKind::kLinear:
        if (!is_flat) throw ShapeError("linear layer before flatten");
        if (layer.out == 0) throw ShapeError("linear layer with zero width");
        flat = layer.out;
        break;
    }
  }
  if (!is_flat) throw ShapeError("feature extractor must end in a flat IR vector");
  const LayerKind last = layers.back().kind;
  if (last != LayerKind::kLinear && last != LayerKind::kFlatten) {
    throw ShapeError("feature extractor must end at its IR output");
  }
  return flat;
}

std::vector<DescriptorToken> FeatureExtractorSpec::descriptor_tokens() const {
  std::vector<DescriptorToken> tokens;
  tokens.push_back({"input", {static_cast<long long>(channels),
                              static_cast<long long>(height),
                              static_cast<long long>(width)}});
  for (const auto& layer : layers) {
    switch (layer.kind) {
      case LayerKind::kConv:
        tokens.push_back({"conv", {static_cast<long long>(layer.out),
                                   static_cast<long long>(layer.kernel),
                                   static_cast<long long>(layer.padding)}});
        break;
      case LayerKind::kRelu: tokens.push_back({"relu", {}}); break;
      case LayerKind::kMaxPool: tokens.push_back({"maxpool", {}}); break;
      case LayerKind::kFlatten: tokens.push_back({"flatten", {}}); break;
      case LayerKind::kLinear:
        tokens.push_back({"linear", {static_cast<long long>(layer.out)}});
        break;
    }
  }
  return tokens;
}

FeatureExtractor::FeatureExtractor(FeatureExtractorSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)), ir_dim_(spec_.ir_dim()) {
  Rng rng(seed);
  std::size_t c = spec_.channels, h = spec_.height, w = spec_.width, flat = 0;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& layer = spec_.layers[i];
    if (layer.kind == LayerKind::kConv) {
      const std::size_t fan_in = c * layer.kernel * layer.kernel;
      params_.add(layer_prefix(i) + ".weight",
                  he_normal({layer.out, c, layer.kernel, layer.kernel}, fan_in, rng));
      params_.add(layer_prefix(i) + ".bias", Tensor::zeros({layer.out}, true));
      h = h + 2 * layer.padding - layer.kernel + 1;
      w = w + 2 * layer.padding - layer.kernel + 1;
      c = layer.out;
    } else if (layer.kind == LayerKind::kMaxPool) {
      h /= 2;
      w /= 2;
    } else if (layer.kind == LayerKind::kFlatten) {
      flat = c * h * w;
    } else if (layer.kind == LayerKind::kLinear) {
      params_.add(layer_prefix(i) + ".weight", he_normal({flat, layer.out}, flat, rng));
      params_.add(layer_prefix(i) + ".bias", Tensor::zeros({layer.out}, true));
      flat = layer.out;
    }
  }
}

FeatureExtractor::FeatureExtractor(FeatureExtractorSpec spec, ParameterSet params)
    : spec_(std::move(spec)), ir_dim_(spec_.ir_dim()), params_(std::move(params)) {
  // Re-derive the expected parameter shapes and check them.
  FeatureExtractor reference(spec_, 0);
  if (reference.params_.entries().size() != params_.entries().size()) {
    throw FormatError("feature extractor parameter count mismatch");
  }
  for (const auto& e : reference.params_.entries()) {
    Tensor& mine = params_.get(e.name);
    require_shape(mine, e.tensor.shape(), e.name);
    mine.set_requires_grad(true);
  }
}

Tensor FeatureExtractor::forward(const Tensor& x, ParamMode mode) const {
  if (x.rank() != 4 || x.dim(1) != spec_.channels || x.dim(2) != spec_.height ||
      x.dim(3) != spec_.width) {
    throw ShapeError("feature extractor expects (B, " + std::to_string(spec_.channels) +
                     ", " + std::to_string(spec_.height) + ", " +
                     std::to_string(spec_.width) + "), got " +
                     shape_to_string(x.shape()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& layer = spec_.layers[i];
    switch (layer.kind) {
      case LayerKind::kConv:
        h = ops::conv2d(h, view(params_.get(layer_prefix(i) + ".weight"), mode),
                        view(params_.get(layer_prefix(i) + ".bias"), mode),
                        static_cast<int>(layer.padding));
        break;
      case LayerKind::kRelu: h = ops::relu(h); break;
      case LayerKind::kMaxPool: h = ops::maxpool2x2(h); break;
      case LayerKind::kFlatten: h = ops::flatten(h); break;
      case LayerKind::kLinear:
        h = ops::add_bias(ops::matmul(h, view(params_.get(layer_prefix(i) + ".weight"), mode)),
                          view(params_.get(layer_prefix(i) + ".bias"), mode));
        break;
    }
  }
  return h;
}

Tensor forward_feature_extractor(const FeatureExtractor& fe, const Tensor& x) {
  return fe.forward(x, ParamMode::kFrozen);
}

SpabHead::SpabHead(Tensor w_, Tensor b_, Tensor w2_, Tensor b2_)
    : w(std::move(w_)), b(std::move(b_)), w2(std::move(w2_)), b2(std::move(b2_)) {
  if (w.rank() != 2) throw ShapeError("head weight must be (M, N)");
  const std::size_t n = w.dim(1);
  if (w2.rank() != 2 || w2.dim(0) != n) throw ShapeError("head w2 must be (N, C)");
  require_shape(b, {n}, "head bias");
  require_shape(b2, {w2.dim(1)}, "head output bias");
  for (Tensor* p : parameters()) p->set_requires_grad(true);
}

SpabHead::SpabHead(const SpabHead& other)
    : w(other.w.clone()), b(other.b.clone()), w2(other.w2.clone()), b2(other.b2.clone()) {
  for (Tensor* p : parameters()) p->set_requires_grad(true);
}

SpabHead& SpabHead::operator=(const SpabHead& other) {
  if (this != &other) *this = SpabHead(other);
  return *this;
}

SpabHead SpabHead::random(std::size_t ir_dim, std::size_t width,
                          std::size_t classes, std::uint64_t seed) {
  if (ir_dim == 0 || width == 0 || classes == 0) {
    throw ShapeError("head dimensions must be positive");
  }
  Rng rng(seed);
  Tensor w = he_normal({ir_dim, width}, ir_dim, rng);
  Tensor w2 = he_normal({width, classes}, width, rng);
  return SpabHead(std::move(w), Tensor::zeros({width}), std::move(w2),
                  Tensor::zeros({classes}));
}

std::vector<Tensor*> SpabHead::parameters() { return {&w, &b, &w2, &b2}; }

void SpabHead::zero_grad() {
  for (Tensor* p : parameters()) p->zero_grad();
}

SpabOutput forward_spab(const SpabHead& head, const Tensor& ir, ParamMode mode) {
  if (ir.rank() != 2 || ir.dim(1) != head.ir_dim()) {
    throw ShapeError("head expects (B, " + std::to_string(head.ir_dim()) +
                     ") IRs, got " + shape_to_string(ir.shape()));
  }
  SpabOutput out;
  out.z = ops::add_bias(ops::matmul(ir, view(head.w, mode)), view(head.b, mode));
  out.z_act = ops::relu(out.z);
  out.logits = ops::add_bias(ops::matmul(out.z_act, view(head.w2, mode)),
                             view(head.b2, mode));
  return out;
}

Tensor Classifier::logits(const Tensor& x, ParamMode mode) const {
  return forward_spab(head, extractor.forward(x, mode), mode).logits;
}

std::string Classifier::descriptor() const {
  auto tokens = extractor.spec().descriptor_tokens();
  tokens.push_back({"spab", {static_cast<long long>(head.width()),
                             static_cast<long long>(head.classes())}});
  return format_descriptor(tokens);
}

std::vector<DescriptorToken> GeneratorSpec::descriptor_tokens() const {
  return {{"generator",
           {static_cast<long long>(channels), static_cast<long long>(height),
            static_cast<long long>(width), static_cast<long long>(widths[0]),
            static_cast<long long>(widths[1]), static_cast<long long>(widths[2])}}};
}

namespace {

struct GenLayer {
  const char* name;
  std::size_t in;
  std::size_t out;
};

std::vector<GenLayer> generator_layers(const GeneratorSpec& s) {
  const std::size_t a = s.widths[0], b = s.widths[1], c = s.widths[2];
  return {{"gen.enc1", s.channels, a}, {"gen.enc2", a, b},     {"gen.enc3", b, c},
          {"gen.dec2", c + b, b},      {"gen.dec1", b + a, a}, {"gen.out", a, s.channels}};
}

void validate(const GeneratorSpec& s) {
  if (s.channels == 0 || s.height == 0 || s.width == 0 || s.height % 4 || s.width % 4) {
    throw ShapeError("generator needs positive spatial size divisible by 4");
  }
  for (std::size_t w : s.widths) {
    if (w == 0) throw ShapeError("generator widths must be positive");
  }
}

}  // namespace

Generator::Generator(GeneratorSpec spec, std::uint64_t seed) : spec_(spec) {
  validate(spec_);
  Rng rng(seed);
  for (const auto& layer : generator_layers(spec_)) {
    params_.add(std::string(layer.name) + ".weight",
                he_normal({layer.out, layer.in, 3, 3}, layer.in * 9, rng));
    params_.add(std::string(layer.name) + ".bias", Tensor::zeros({layer.out}, true));
  }
}

Generator::Generator(GeneratorSpec spec, ParameterSet params)
    : spec_(spec), params_(std::move(params)) {
  validate(spec_);
  if (params_.entries().size() != 2 * generator_layers(spec_).size()) {
    throw FormatError("generator parameter count mismatch");
  }
  for (const auto& layer : generator_layers(spec_)) {
    Tensor& w = params_.get(std::string(layer.name) + ".weight");
    Tensor& b = params_.get(std::string(layer.name) + ".bias");
    require_shape(w, {layer.out, layer.in, 3, 3}, layer.name);
    require_shape(b, {layer.out}, layer.name);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
  }
}

Tensor Generator::forward(const Tensor& s, ParamMode mode) const {
  if (s.shape() != Shape{1, spec_.channels, spec_.height, spec_.width}) {
    throw ShapeError("generator seed must be (1, " + std::to_string(spec_.channels) +
                     ", " + std::to_string(spec_.height) + ", " +
                     std::to_string(spec_.width) + "), got " + shape_to_string(s.shape()));
  }
  auto conv = [&](const char* name, const Tensor& x) {
    return ops::conv2d(x, view(params_.get(std::string(name) + ".weight"), mode),
                       view(params_.get(std::string(name) + ".bias"), mode), 1);
  };
  Tensor e1 = ops::relu(conv("gen.enc1", s));
  Tensor e2 = ops::relu(conv("gen.enc2", ops::maxpool2x2(e1)));
  Tensor e3 = ops::relu(conv("gen.enc3", ops::maxpool2x2(e2)));
  Tensor d2 = ops::relu(conv("gen.dec2", ops::concat_channels(ops::upsample_nearest2x(e3), e2)));
  Tensor d1 = ops::relu(conv("gen.dec1", ops::concat_channels(ops::upsample_nearest2x(d2), e1)));
  return ops::sigmoid(conv("gen.out", d1));
}

Tensor forward_generator(const Generator& gen, const Tensor& s) {
  return gen.forward(s, ParamMode::kFrozen);
}

ModelCheckpoint to_checkpoint(const Classifier& model) {
  ModelCheckpoint ckpt;
  ckpt.descriptor = model.descriptor();
  for (const auto& e : model.extractor.params().entries()) {
    ckpt.tensors.push_back({e.name, e.tensor.clone()});
  }
  ckpt.tensors.push_back({"head.w", model.head.w.clone()});
  ckpt.tensors.push_back({"head.b", model.head.b.clone()});
  ckpt.tensors.push_back({"head.w2", model.head.w2.clone()});
  ckpt.tensors.push_back({"head.b2", model.head.b2.clone()});
  return ckpt;
}

Classifier classifier_from_checkpoint(const ModelCheckpoint& checkpoint) {
  const auto tokens = parse_descriptor(checkpoint.descriptor);
  if (tokens.size() < 3 || tokens.front().name != "input" || tokens.back().name != "spab") {
    throw FormatError("descriptor is not a classifier: " + checkpoint.descriptor);
  }
  FeatureExtractorSpec spec;
  spec.channels = arg(tokens[0], 0);
  spec.height = arg(tokens[0], 1);
  spec.width = arg(tokens[0], 2);
  for (std::size_t i = 1; i + 1 < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (t.name == "conv") {
      spec.layers.push_back({LayerKind::kConv, arg(t, 0), arg(t, 1),
                             t.args.size() > 2 ? static_cast<std::size_t>(t.args[2]) : 0});
    } else if (t.name == "relu") {
      spec.layers.push_back({LayerKind::kRelu});
    } else if (t.name == "maxpool") {
      spec.layers.push_back({LayerKind::kMaxPool});
    } else if (t.name == "flatten") {
      spec.layers.push_back({LayerKind::kFlatten});
    } else if (t.name == "linear") {
      spec.layers.push_back({LayerKind::kLinear, arg(t, 0), 0, 0});
    } else {
      throw FormatError("layer '" + t.name + "' not allowed in a feature extractor");
    }
  }
  std::size_t m = 0;
  try {
    m = spec.ir_dim();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("invalid architecture: ") + e.what());
  }
  ParameterSet params;
  for (const auto& e : checkpoint.tensors) {
    if (e.name.rfind("fe.", 0) == 0) params.add(e.name, e.tensor.clone());
  }
  const std::size_t n = arg(tokens.back(), 0), c = arg(tokens.back(), 1);
  SpabHead head(checkpoint.find("head.w").clone(), checkpoint.find("head.b").clone(),
                checkpoint.find("head.w2").clone(), checkpoint.find("head.b2").clone());
  if (head.ir_dim() != m || head.width() != n || head.classes() != c) {
    throw FormatError("head tensors do not match descriptor");
  }
  return Classifier{FeatureExtractor(std::move(spec), std::move(params)), std::move(head)};
}

ModelCheckpoint to_checkpoint(const Generator& gen) {
  ModelCheckpoint ckpt;
  ckpt.descriptor = format_descriptor(gen.spec().descriptor_tokens());
  for (const auto& e : gen.params().entries()) {
    ckpt.tensors.push_back({e.name, e.tensor.clone()});
  }
  return ckpt;
}

Generator generator_from_checkpoint(const ModelCheckpoint& checkpoint) {
  const auto tokens = parse_descriptor(checkpoint.descriptor);
  if (tokens.size() != 1 || tokens[0].name != "generator") {
    throw FormatError("descriptor is not a generator: " + checkpoint.descriptor);
  }
  GeneratorSpec spec;
  spec.channels = arg(tokens[0], 0);
  spec.height = arg(tokens[0], 1);
  spec.width = arg(tokens[0], 2);
  for (std::size_t i = 0; i < 3; ++i) spec.widths[i] = arg(tokens[0], 3 + i);
  ParameterSet params;
  for (const auto& e : checkpoint.tensors) params.add(e.name, e.tensor.clone());
  return Generator(spec, std::move(params));
}

}  // namespace gradleak
