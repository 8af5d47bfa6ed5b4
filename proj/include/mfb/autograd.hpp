#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mfb/tensor.hpp"

namespace mfb {

// A trainable tensor plus its gradient accumulator. The trainer zeroes `grad`
// explicitly between steps; the graph only ever adds into it.
struct Parameter {
  Tensor value;
  Tensor grad;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::zeros_like(value)) {}
  void zero_grad() { grad.fill(0.0); }
  std::size_t size() const { return value.size(); }
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid as long as the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

struct BackwardContext {
  const Tensor& value;  // node output
  const Tensor& grad;   // d(root)/d(output)
  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> input_grads;  // nullptr where the input takes no gradient
};

using BackwardFn = std::function<void(const BackwardContext&)>;

// Tape-style reverse-mode graph. Nodes are appended in creation order, which
// is a topological order, so backward walks ids from the root downwards.
// A graph belongs to one thread.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor value);
  Var constant(Tensor value);
  Var parameter(Parameter& p);

  // Adds an op node. `backward` receives the output gradient and must add
  // (never assign) into every non-null entry of input_grads.
  Var apply(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var apply(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
            BackwardFn backward) {
    return apply(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                 std::move(backward));
  }

  // Fills grad of every node reachable from a scalar root. Calling it again
  // before zero_grad() is an error.
  void backward(Var root);
  // Zeroes node-owned gradients and re-arms backward. Parameter gradients
  // are left alone.
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const;
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }

 private:
  struct Node {
    std::string op;
    Tensor own_value;
    Tensor own_grad;
    const Tensor* value_ref = nullptr;
    Tensor* grad_ref = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;

    const Tensor& value() const { return value_ref ? *value_ref : own_value; }
    Tensor& grad() { return grad_ref ? *grad_ref : own_grad; }
    const Tensor& grad() const { return grad_ref ? *grad_ref : own_grad; }
  };

  Var push(Node node);
  void check_owner(Var v) const;

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// Primitive differentiable ops.
Var matmul(Var a, Var b);
Var hadamard(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var x, double factor);
Var relu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var exp(Var x);
Var log(Var x);
Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var reshape(Var x, Shape shape);
Var transpose(Var x);
// Reduces `axis` away; a 1-D input reduces to shape [1].
Var sum(Var x, std::size_t axis);
Var sum_all(Var x);
// Repeats a length-c vector into an [rows x c] matrix.
Var broadcast_rows(Var v, std::size_t rows);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);
Var gather_rows(Var table, std::span<const std::size_t> ids);

// Outer/axis/inner split used by all axis-wise ops.
struct AxisSplit {
  std::size_t outer;
  std::size_t dim;
  std::size_t inner;
};
AxisSplit split_axis(const Shape& shape, std::size_t axis);

namespace debug {
// Test hook: scales the gradient flowing into every node with this op name
// by 1.5 before its backward rule runs. Empty string disables.
void corrupt_backward(std::string op);
}  // namespace debug

}  // namespace mfb
