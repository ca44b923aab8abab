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

#include "gradleak/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "gradleak/errors.hpp"

namespace gradleak {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace detail {

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data->size(), 0.0);
  return grad;
}

}  // namespace detail

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_to_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::make_shared<std::vector<double>>(std::move(values));
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor make_tensor(std::shared_ptr<detail::TensorImpl> impl) {
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const {
  static const Shape kEmpty;
  return impl_ ? impl_->shape : kEmpty;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(shape()));
  }
  return shape()[axis];
}

std::size_t Tensor::size() const { return impl_ ? impl_->data->size() : 0; }

std::span<const double> Tensor::values() const {
  if (!impl_) return {};
  return {impl_->data->data(), impl_->data->size()};
}

std::span<double> Tensor::mutable_values() {
  if (!impl_) return {};
  return {impl_->data->data(), impl_->data->size()};
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return (*impl_->data)[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (impl_) impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return {impl_->grad.data(), impl_->grad.size()};
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor(shape(), impl_->grad);
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const {
  if (!impl_) return {};
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  return Tensor(impl_->shape, *impl_->data);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto av = a.values();
  auto bv = b.values();
  return std::memcmp(av.data(), bv.data(), av.size() * sizeof(double)) == 0;
}

namespace {
thread_local Graph* g_active_graph = nullptr;
}  // namespace

Graph* Graph::active() { return g_active_graph; }

void Graph::record(std::shared_ptr<detail::TensorImpl> output, BackwardFn fn) {
  nodes_.push_back(Node{std::move(output), std::move(fn)});
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.impl()->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
  }
}

GraphScope::GraphScope(Graph& graph) : previous_(g_active_graph) {
  g_active_graph = &graph;
}

GraphScope::~GraphScope() { g_active_graph = previous_; }

void backward(Graph& graph, const Tensor& loss) { graph.backward(loss); }

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& point, double step) {
  if (!(step > 0.0)) throw ConfigError("grad_check step must be positive");
  Tensor x = point.clone();
  x.set_requires_grad(true);
  {
    Graph graph;
    GraphScope scope(graph);
    Tensor y = f(x);
    graph.backward(y);
  }
  const std::vector<double> autodiff =
      x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                   : std::vector<double>(x.size(), 0.0);

  double worst = 0.0;
  Tensor probe = point.clone();
  auto pv = probe.mutable_values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double original = pv[i];
    pv[i] = original + step;
    const double up = f(probe).item();
    pv[i] = original - step;
    const double down = f(probe).item();
    pv[i] = original;
    const double fd = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(autodiff[i] - fd) / (std::abs(fd) + 1e-8));
  }
  return worst;
}

}  // namespace gradleak
