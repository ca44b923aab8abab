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

#include "gradleak/checkpoint.hpp"

#include <array>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "gradleak/errors.hpp"

namespace gradleak {
namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'G', 'L', 'C', 'K'};

const std::set<std::string, std::less<>>& known_layers() {
  static const std::set<std::string, std::less<>> names = {
      "input",   "conv",      "relu",           "maxpool",
      "flatten", "linear",    "spab",           "generator",
      "gradient_update",      "ir_candidates",  "image_batch"};
  return names;
}

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& ModelCheckpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw FormatError("checkpoint has no tensor named '" + std::string(name) + "'");
}

bool ModelCheckpoint::contains(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

std::vector<DescriptorToken> parse_descriptor(std::string_view descriptor) {
  std::vector<DescriptorToken> tokens;
  std::size_t pos = 0;
  while (pos <= descriptor.size()) {
    std::size_t end = descriptor.find(';', pos);
    if (end == std::string_view::npos) end = descriptor.size();
    std::string_view item = descriptor.substr(pos, end - pos);
    if (item.empty()) throw FormatError("empty layer token in descriptor");
    DescriptorToken token;
    const std::size_t open = item.find('(');
    token.name = std::string(item.substr(0, open));
    for (char c : token.name) {
      if (!(std::islower(static_cast<unsigned char>(c)) || c == '_')) {
        throw FormatError("malformed layer token '" + std::string(item) + "'");
      }
    }
    if (known_layers().find(token.name) == known_layers().end()) {
      throw FormatError("unknown layer '" + token.name + "' in descriptor");
    }
    if (open != std::string_view::npos) {
      if (item.back() != ')') throw FormatError("unterminated arguments in '" + std::string(item) + "'");
      std::string_view args = item.substr(open + 1, item.size() - open - 2);
      std::size_t a = 0;
      while (a <= args.size()) {
        std::size_t comma = args.find(',', a);
        if (comma == std::string_view::npos) comma = args.size();
        std::string_view num = args.substr(a, comma - a);
        if (num.empty()) throw FormatError("empty argument in '" + std::string(item) + "'");
        long long v = 0;
        for (char c : num) {
          if (!std::isdigit(static_cast<unsigned char>(c))) {
            throw FormatError("non-numeric argument in '" + std::string(item) + "'");
          }
          v = v * 10 + (c - '0');
        }
        token.args.push_back(v);
        a = comma + 1;
      }
    }
    tokens.push_back(std::move(token));
    pos = end + 1;
  }
  return tokens;
}

std::string format_descriptor(const std::vector<DescriptorToken>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ';';
    out += tokens[i].name;
    if (!tokens[i].args.empty()) {
      out += '(';
      for (std::size_t a = 0; a < tokens[i].args.size(); ++a) {
        if (a) out += ',';
        out += std::to_string(tokens[i].args[a]);
      }
      out += ')';
    }
  }
  return out;
}

std::vector<std::uint8_t> save_checkpoint(const ModelCheckpoint& checkpoint) {
  parse_descriptor(checkpoint.descriptor);
  Writer w;
  w.bytes(std::string_view(reinterpret_cast<const char*>(kMagic.data()), kMagic.size()));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(checkpoint.descriptor.size()));
  w.bytes(checkpoint.descriptor);
  w.u32(static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t e : tensor.shape()) w.u64(e);
    for (double v : tensor.values()) w.f64(v);
  }
  return w.take();
}

ModelCheckpoint load_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() ||
      std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError("bad checkpoint magic");
  }
  Reader r(bytes.subspan(kMagic.size()));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelCheckpoint ckpt;
  ckpt.descriptor = r.str(r.u32());
  parse_descriptor(ckpt.descriptor);
  const std::uint32_t count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    NamedTensor nt;
    nt.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    const std::size_t n = numel(shape);
    if (n > r.remaining() / 8) throw FormatError("checkpoint truncated");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    nt.tensor = Tensor(std::move(shape), std::move(values));
    ckpt.tensors.push_back(std::move(nt));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return ckpt;
}

void write_checkpoint_file(const std::filesystem::path& path,
                           const ModelCheckpoint& checkpoint) {
  const auto bytes = save_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

ModelCheckpoint read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return load_checkpoint(bytes);
}

}  // namespace gradleak
