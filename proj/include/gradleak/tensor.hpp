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

// Dense row-major f64 tensors with a first-order reverse-mode tape.
//
// A Tensor is a cheap handle. Operations in ops.hpp record a node on the
// thread's active Graph (see GraphScope) whenever one of their inputs
// requires a gradient; Graph::backward then replays the nodes in reverse
// recording order and accumulates into every tensor's grad buffer.

#ifndef GRADLEAK_TENSOR_HPP_
#define GRADLEAK_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gradleak {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  bool requires_grad = false;
  // Empty until a gradient reaches this tensor.
  std::vector<double> grad;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  // In-place access for optimizers and fixtures. Never mutate a tensor that
  // is referenced by a graph that has not run backward yet.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  // Copy of the gradient as a value tensor (zeros if none reached it).
  Tensor grad_tensor() const;
  void zero_grad();

  // Shares storage, never records gradients.
  Tensor detach() const;
  // Deep copy without gradient state.
  Tensor clone() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}
  friend Tensor make_tensor(std::shared_ptr<detail::TensorImpl>);

  std::shared_ptr<detail::TensorImpl> impl_;
};

Tensor make_tensor(std::shared_ptr<detail::TensorImpl> impl);

bool bitwise_equal(const Tensor& a, const Tensor& b);

class Graph {
 public:
  // Receives the gradient of the node output and must accumulate into the
  // captured inputs that require gradients.
  using BackwardFn = std::function<void(const std::vector<double>& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void record(std::shared_ptr<detail::TensorImpl> output, BackwardFn fn);
  void backward(const Tensor& loss);
  std::size_t size() const { return nodes_.size(); }

  // The graph ops record onto on this thread, or nullptr.
  static Graph* active();

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  friend class GraphScope;
};

// Makes a graph the active recording target for the current thread.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

void backward(Graph& graph, const Tensor& loss);

// Max over coordinates of |autodiff - central difference| /
// (|central difference| + 1e-8) for a scalar-valued map.
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& point, double step);

}  // namespace gradleak

#endif  // GRADLEAK_TENSOR_HPP_
