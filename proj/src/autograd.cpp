#include "mfb/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "mfb/errors.hpp"

namespace mfb {

namespace {

thread_local std::string g_corrupted_op;

}  // namespace

namespace debug {
void corrupt_backward(std::string op) { g_corrupted_op = std::move(op); }
}  // namespace debug

const Tensor& Var::value() const { return graph_->value(id_); }
const Tensor& Var::grad() const { return graph_->grad(id_); }

const Tensor& Graph::value(std::size_t id) const { return nodes_.at(id).value(); }
const Tensor& Graph::grad(std::size_t id) const { return nodes_.at(id).grad(); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Graph::check_owner(Var v) const {
  if (!v.valid() || &v.graph() != this || v.id() >= nodes_.size())
    throw GraphError("variable does not belong to this graph");
}

Var Graph::input(Tensor value) {
  Node n;
  n.op = "input";
  n.own_grad = Tensor::zeros_like(value);
  n.own_value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.own_grad = Tensor::zeros_like(value);
  n.own_value = std::move(value);
  return push(std::move(n));
}

Var Graph::parameter(Parameter& p) {
  if (p.grad.shape() != p.value.shape()) p.grad = Tensor::zeros_like(p.value);
  Node n;
  n.op = "parameter";
  n.value_ref = &p.value;
  n.grad_ref = &p.grad;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Graph::apply(std::string_view op, Tensor value, std::span<const Var> inputs,
                 BackwardFn backward) {
  Node n;
  n.op = std::string(op);
  n.inputs.reserve(inputs.size());
  for (const auto& v : inputs) {
    check_owner(v);
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  n.own_grad = Tensor::zeros_like(value);
  n.own_value = std::move(value);
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Graph::backward(Var root) {
  check_owner(root);
  const auto& rv = nodes_[root.id()].value();
  if (rv.size() != 1)
    throw GraphError("backward: root must be a scalar, got shape " + shape_str(rv.shape()));
  if (backward_done_) throw GraphError("backward: called twice without zero_grad");
  backward_done_ = true;

  std::vector<char> reachable(root.id() + 1, 0);
  reachable[root.id()] = 1;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    if (!reachable[id]) continue;
    for (auto in : nodes_[id].inputs) reachable[in] = 1;
  }

  nodes_[root.id()].grad()[0] += 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!reachable[id] || !node.requires_grad || !node.backward) continue;
    Tensor corrupted;
    const Tensor* grad = &node.grad();
    if (!g_corrupted_op.empty() && node.op == g_corrupted_op) {
      corrupted = *grad;
      for (auto& g : corrupted.data()) g *= 1.5;
      grad = &corrupted;
    }
    BackwardContext ctx{node.value(), *grad, {}, {}};
    ctx.inputs.reserve(node.inputs.size());
    ctx.input_grads.reserve(node.inputs.size());
    for (auto in : node.inputs) {
      Node& parent = nodes_[in];
      ctx.inputs.push_back(&parent.value());
      ctx.input_grads.push_back(parent.requires_grad ? &parent.grad() : nullptr);
    }
    node.backward(ctx);
  }
}

void Graph::zero_grad() {
  for (auto& n : nodes_)
    if (!n.grad_ref) n.own_grad.fill(0.0);
  backward_done_ = false;
}

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  double* d = dst->ptr();
  const double* s = src.ptr();
  for (std::size_t i = 0, n = src.size(); i < n; ++i) d[i] += s[i];
}

// Elementwise unary op; `deriv(x, y)` is dy/dx at input x with output y.
template <typename F, typename D>
Var unary(const char* op, Var x, F f, D deriv) {
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros_like(xv);
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return x.graph().apply(op, std::move(out), {x}, [deriv](const BackwardContext& c) {
    Tensor* dx = c.input_grads[0];
    if (!dx) return;
    const Tensor& xv = *c.inputs[0];
    for (std::size_t i = 0; i < xv.size(); ++i) (*dx)[i] += c.grad[i] * deriv(xv[i], c.value[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeError("matmul: shape mismatch " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  const std::size_t r = av.dim(0), s = av.dim(1), t = bv.dim(1);
  Tensor out({r, t});
  double* o = out.ptr();
  const double* ap = av.ptr();
  const double* bp = bv.ptr();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t k = 0; k < s; ++k) {
      const double aik = ap[i * s + k];
      if (aik == 0.0) continue;
      const double* brow = bp + k * t;
      double* orow = o + i * t;
      for (std::size_t j = 0; j < t; ++j) orow[j] += aik * brow[j];
    }
  return a.graph().apply("matmul", std::move(out), {a, b}, [r, s, t](const BackwardContext& c) {
    const double* g = c.grad.ptr();
    const double* ap = c.inputs[0]->ptr();
    const double* bp = c.inputs[1]->ptr();
    if (Tensor* da = c.input_grads[0]) {
      double* d = da->ptr();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t k = 0; k < s; ++k) {
          const double* grow = g + i * t;
          const double* brow = bp + k * t;
          double acc = 0.0;
          for (std::size_t j = 0; j < t; ++j) acc += grow[j] * brow[j];
          d[i * s + k] += acc;
        }
    }
    if (Tensor* db = c.input_grads[1]) {
      double* d = db->ptr();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t k = 0; k < s; ++k) {
          const double aik = ap[i * s + k];
          if (aik == 0.0) continue;
          const double* grow = g + i * t;
          double* drow = d + k * t;
          for (std::size_t j = 0; j < t; ++j) drow[j] += aik * grow[j];
        }
    }
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape("hadamard", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = Tensor::zeros_like(av);
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return a.graph().apply("hadamard", std::move(out), {a, b}, [](const BackwardContext& c) {
    const Tensor& av = *c.inputs[0];
    const Tensor& bv = *c.inputs[1];
    if (Tensor* da = c.input_grads[0])
      for (std::size_t i = 0; i < av.size(); ++i) (*da)[i] += c.grad[i] * bv[i];
    if (Tensor* db = c.input_grads[1])
      for (std::size_t i = 0; i < av.size(); ++i) (*db)[i] += c.grad[i] * av[i];
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph().apply("add", std::move(out), {a, b}, [](const BackwardContext& c) {
    accumulate(c.input_grads[0], c.grad);
    accumulate(c.input_grads[1], c.grad);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.graph().apply("sub", std::move(out), {a, b}, [](const BackwardContext& c) {
    accumulate(c.input_grads[0], c.grad);
    if (Tensor* db = c.input_grads[1])
      for (std::size_t i = 0; i < c.grad.size(); ++i) (*db)[i] -= c.grad[i];
  });
}

Var scale(Var x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Var relu(Var x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  for (double v : x.value().data())
    if (!(v > 0.0)) throw std::domain_error("log: input must be strictly positive");
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  Shape out_shape = first;
  out_shape.at(axis) = 0;
  std::vector<std::size_t> dims;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (i != axis && s[i] != first[i]) ok = false;
    if (!ok)
      throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " +
                       shape_str(s) + " along axis " + std::to_string(axis));
    dims.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    const std::size_t block = dims[p] * os.inner;
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(v.ptr() + o * block, block, out.ptr() + o * os.dim * os.inner + offset);
    offset += block;
  }
  return parts.front().graph().apply(
      "concat", std::move(out), parts, [dims, os](const BackwardContext& c) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < dims.size(); ++p) {
          const std::size_t block = dims[p] * os.inner;
          if (Tensor* d = c.input_grads[p]) {
            for (std::size_t o = 0; o < os.outer; ++o) {
              const double* src = c.grad.ptr() + o * os.dim * os.inner + offset;
              double* dst = d->ptr() + o * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          offset += block;
        }
      });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.graph().apply("reshape", std::move(out), {x}, [](const BackwardContext& c) {
    if (Tensor* d = c.input_grads[0])
      for (std::size_t i = 0; i < c.grad.size(); ++i) (*d)[i] += c.grad[i];
  });
}

Var transpose(Var x) {
  const Tensor& v = x.value();
  if (v.rank() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(v.shape()));
  const std::size_t r = v.dim(0), cols = v.dim(1);
  Tensor out({cols, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < cols; ++j) out.at(j, i) = v.at(i, j);
  return x.graph().apply("transpose", std::move(out), {x}, [r, cols](const BackwardContext& c) {
    if (Tensor* d = c.input_grads[0])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cols; ++j) d->at(i, j) += c.grad.at(j, i);
  });
}

Var sum(Var x, std::size_t axis) {
  const Tensor& v = x.value();
  const AxisSplit s = split_axis(v.shape(), axis);
  Shape out_shape = v.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t d = 0; d < s.dim; ++d)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += v[(o * s.dim + d) * s.inner + i];
  return x.graph().apply("sum", std::move(out), {x}, [s](const BackwardContext& c) {
    Tensor* dx = c.input_grads[0];
    if (!dx) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t d = 0; d < s.dim; ++d)
        for (std::size_t i = 0; i < s.inner; ++i)
          (*dx)[(o * s.dim + d) * s.inner + i] += c.grad[o * s.inner + i];
  });
}

Var sum_all(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.graph().apply("sum_all", Tensor({1}, total), {x}, [](const BackwardContext& c) {
    if (Tensor* dx = c.input_grads[0])
      for (auto& g : dx->data()) g += c.grad[0];
  });
}

Var broadcast_rows(Var v, std::size_t rows) {
  const Tensor& vv = v.value();
  if (!(vv.rank() == 1 || (vv.rank() == 2 && vv.dim(0) == 1)))
    throw ShapeError("broadcast_rows: expected a vector, got " + shape_str(vv.shape()));
  if (rows == 0) throw ShapeError("broadcast_rows: zero rows");
  const std::size_t cols = vv.size();
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(vv.ptr(), cols, out.ptr() + r * cols);
  return v.graph().apply("broadcast_rows", std::move(out), {v},
                         [rows, cols](const BackwardContext& c) {
                           Tensor* d = c.input_grads[0];
                           if (!d) return;
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < cols; ++j) (*d)[j] += c.grad.at(r, j);
                         });
}

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  const Tensor& v = x.value();
  const AxisSplit s = split_axis(v.shape(), axis);
  if (length == 0 || start + length > s.dim)
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for axis " + std::to_string(axis) + " of " +
                     shape_str(v.shape()));
  Shape out_shape = v.shape();
  out_shape[axis] = length;
  Tensor out(out_shape);
  const std::size_t block = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(v.ptr() + (o * s.dim + start) * s.inner, block, out.ptr() + o * block);
  return x.graph().apply("slice", std::move(out), {x}, [s, start, block](const BackwardContext& c) {
    Tensor* d = c.input_grads[0];
    if (!d) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = d->ptr() + (o * s.dim + start) * s.inner;
      const double* src = c.grad.ptr() + o * block;
      for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& t = table.value();
  if (t.rank() != 2) throw ShapeError("gather_rows: table must be 2-D, got " + shape_str(t.shape()));
  if (ids.empty()) throw ShapeError("gather_rows: no ids");
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  for (auto id : ids)
    if (id >= rows)
      throw ShapeError("gather_rows: id " + std::to_string(id) + " out of range for " +
                       std::to_string(rows) + " rows");
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  Tensor out({idx.size(), cols});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(t.ptr() + idx[r] * cols, cols, out.ptr() + r * cols);
  return table.graph().apply("gather_rows", std::move(out), {table},
                             [idx, cols](const BackwardContext& c) {
                               Tensor* d = c.input_grads[0];
                               if (!d) return;
                               for (std::size_t r = 0; r < idx.size(); ++r)
                                 for (std::size_t j = 0; j < cols; ++j)
                                   d->at(idx[r], j) += c.grad.at(r, j);
                             });
}

}  // namespace mfb
