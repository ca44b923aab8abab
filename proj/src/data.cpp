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

#include "gradleak/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>

#include "gradleak/errors.hpp"

namespace gradleak {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Returns true when normalized offset (u, v) from the shape center, in units
// of the shape radius, lies inside shape `kind`.
bool inside_shape(int kind, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  switch (kind) {
    case 0: return u * u + v * v <= 1.0;                                // disk
    case 1: return au <= 0.8 && av <= 0.8;                              // square
    case 2: return (au <= 0.25 && av <= 1.0) || (av <= 0.25 && au <= 1.0);  // cross
    case 3: return v >= -0.9 && v <= 0.8 && au <= (v + 0.9) * 0.55;      // triangle
    case 4: {                                                           // ring
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.4;
    }
    case 5: return av <= 0.3 && au <= 1.0;                              // horizontal bar
    case 6: return au <= 0.3 && av <= 1.0;                              // vertical bar
    case 7: return au + av <= 1.0;                                      // diamond
    case 8: return std::max(au, av) <= 0.9 && std::max(au, av) >= 0.55; // hollow square
    default: {                                                          // two dots
      const double d1 = (u - 0.5) * (u - 0.5) + v * v;
      const double d2 = (u + 0.5) * (u + 0.5) + v * v;
      return d1 <= 0.16 || d2 <= 0.16;
    }
  }
}

void draw_geometric(int kind, std::size_t side, Rng& rng, std::vector<double>& img) {
  const double s = static_cast<double>(side);
  const double cx = uniform(rng, 0.38, 0.62) * s;
  const double cy = uniform(rng, 0.38, 0.62) * s;
  const double radius = uniform(rng, 0.24, 0.34) * s;
  double bg[3], fg[3];
  for (int c = 0; c < 3; ++c) bg[c] = uniform(rng, 0.02, 0.3);
  for (int c = 0; c < 3; ++c) fg[c] = uniform(rng, 0.55, 1.0);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double u = (static_cast<double>(x) + 0.5 - cx) / radius;
      const double v = (static_cast<double>(y) + 0.5 - cy) / radius;
      const bool in = inside_shape(kind, u, v);
      for (std::size_t c = 0; c < 3; ++c) {
        img[(c * side + y) * side + x] = in ? fg[c] : bg[c];
      }
    }
  }
}

void draw_texture(int kind, std::size_t side, Rng& rng, std::vector<double>& img) {
  const double scale = static_cast<double>(side) / 16.0;
  const double period = uniform(rng, 4.0, 8.0) * scale;
  const double phase = uniform(rng, 0.0, 2.0 * kPi);
  double hi[3], lo[3];
  for (int c = 0; c < 3; ++c) hi[c] = uniform(rng, 0.65, 1.0);
  for (int c = 0; c < 3; ++c) lo[c] = uniform(rng, 0.3, 0.6);
  // Blocky noise cells, drawn up front so every class consumes the rng the
  // same way.
  std::vector<double> cells(16);
  for (double& cell : cells) cell = uniform01(rng);
  const double k = 2.0 * kPi / period;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      double t = 0.0;  // mixing weight toward `hi`
      switch (kind) {
        case 0: t = std::sin(k * fy + phase) > 0 ? 1.0 : 0.0; break;
        case 1: t = std::sin(k * fx + phase) > 0 ? 1.0 : 0.0; break;
        case 2: t = std::sin(k * (fx + fy) / std::sqrt(2.0) + phase) > 0 ? 1.0 : 0.0; break;
        case 3: t = (std::sin(k * fx + phase) > 0) != (std::sin(k * fy + phase) > 0) ? 1.0 : 0.0; break;
        case 4: t = std::sin(k * (fx - fy) / std::sqrt(2.0) + phase) > 0 ? 1.0 : 0.0; break;
        case 5: {
          const double r = std::hypot(fx - side / 2.0, fy - side / 2.0);
          t = std::sin(k * r + phase) > 0 ? 1.0 : 0.0;
          break;
        }
        case 6: t = 0.5 + 0.5 * std::sin(k * fy + phase); break;
        case 7: t = 0.5 + 0.5 * std::sin(k * fx + phase); break;
        case 8: {
          const std::size_t cy = std::min<std::size_t>(3, y * 4 / side);
          const std::size_t cx = std::min<std::size_t>(3, x * 4 / side);
          t = cells[cy * 4 + cx];
          break;
        }
        default: {
          const double cx = std::floor(fx / period), cy = std::floor(fy / period);
          t = std::fmod(std::abs(cx + cy), 2.0) < 1.0 ? 0.25 : 0.75;
          break;
        }
      }
      for (std::size_t c = 0; c < 3; ++c) {
        img[(c * side + y) * side + x] = lo[c] + t * (hi[c] - lo[c]);
      }
    }
  }
}

}  // namespace

SynthFamily parse_family(const std::string& name) {
  if (name == "geometric") return SynthFamily::kGeometric;
  if (name == "texture") return SynthFamily::kTexture;
  throw ConfigError("unknown synthetic family '" + name + "'");
}

std::string family_name(SynthFamily family) {
  return family == SynthFamily::kGeometric ? "geometric" : "texture";
}

Tensor Dataset::image(std::size_t index) const {
  if (index >= size()) throw ShapeError("image index out of range");
  return Tensor({1, channels, height, width}, images[index]);
}

Tensor Dataset::stack(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ShapeError("cannot stack an empty batch");
  std::vector<double> values;
  values.reserve(indices.size() * pixels());
  for (std::size_t i : indices) {
    if (i >= size()) throw ShapeError("image index out of range");
    values.insert(values.end(), images[i].begin(), images[i].end());
  }
  return Tensor({indices.size(), channels, height, width}, std::move(values));
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

void Dataset::validate() const {
  if (images.size() != labels.size()) throw FormatError("image/label count mismatch");
  for (const auto& img : images) {
    if (img.size() != pixels()) throw FormatError("image has wrong pixel count");
    for (double v : img) {
      if (!(v >= 0.0 && v <= 1.0)) throw FormatError("pixel outside [0, 1]");
    }
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw FormatError("label outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Dataset synth_dataset(std::uint64_t seed, std::size_t count, std::size_t classes,
                      std::size_t size, SynthFamily family, Split split) {
  if (size != 16 && size != 32) {
    throw ConfigError("synthetic images must be 16 or 32 pixels wide, got " +
                      std::to_string(size));
  }
  if (classes == 0 || classes > 10) throw ConfigError("synthetic classes must be in [1, 10]");
  Dataset ds;
  ds.channels = 3;
  ds.height = ds.width = size;
  ds.num_classes = classes;
  ds.split = split;
  Rng rng(derive_seed(seed, family_name(family)));
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<int>(i % classes);
  for (std::size_t i = count; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(labels[i - 1], labels[pick(rng)]);
  }
  ds.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> img(ds.pixels());
    if (family == SynthFamily::kGeometric) {
      draw_geometric(labels[i], size, rng, img);
    } else {
      draw_texture(labels[i], size, rng, img);
    }
    ds.images.push_back(std::move(img));
  }
  ds.labels = std::move(labels);
  return ds;
}

Dataset parse_cifar10_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw FormatError("CIFAR-10 file length " + std::to_string(bytes.size()) +
                      " is not a positive multiple of 3073");
  }
  Dataset ds;
  ds.channels = 3;
  ds.height = ds.width = kCifarSide;
  ds.num_classes = 10;
  const std::size_t n = bytes.size() / kCifarRecord;
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] > 9) {
      throw FormatError("CIFAR-10 record " + std::to_string(r) + " has label " +
                        std::to_string(rec[0]));
    }
    ds.labels.push_back(rec[0]);
    std::vector<double> img(kCifarRecord - 1);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rec[1 + i] / 255.0;
    ds.images.push_back(std::move(img));
  }
  return ds;
}

Dataset load_cifar10_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_cifar10_binary(bytes);
}

Dataset mislabel(const Dataset& dataset) {
  if (dataset.num_classes < 2) throw ConfigError("mislabel needs at least two classes");
  Dataset out = dataset;
  const int c = static_cast<int>(dataset.num_classes);
  for (int& l : out.labels) l = (l + 1) % c;
  return out;
}

Batch sample_batch(const Dataset& dataset, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0 || batch_size > dataset.size()) {
    throw ConfigError("batch size " + std::to_string(batch_size) +
                      " invalid for dataset of " + std::to_string(dataset.size()));
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(batch_size);
  Batch batch;
  batch.images = dataset.stack(order);
  batch.labels = dataset.labels_of(order);
  batch.indices = std::move(order);
  return batch;
}

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices) {
  Dataset out;
  out.channels = dataset.channels;
  out.height = dataset.height;
  out.width = dataset.width;
  out.num_classes = dataset.num_classes;
  out.split = dataset.split;
  for (std::size_t i : indices) {
    out.images.push_back(dataset.images.at(i));
    out.labels.push_back(dataset.labels.at(i));
  }
  return out;
}

}  // namespace gradleak
