#include "mfb/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mfb/errors.hpp"

namespace mfb {

void xavier_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data()) v = rng.uniform(-limit, limit);
}

LinearLayer::LinearLayer(std::size_t in, std::size_t out, bool with_bias)
    : in_dim(in), out_dim(out), weight(Tensor({in, out})) {
  if (with_bias) bias.emplace(Tensor({out}));
}

void LinearLayer::init(Rng& rng) {
  xavier_uniform(weight.value, in_dim, out_dim, rng);
  if (bias) bias->value.fill(0.0);
}

std::size_t LinearLayer::param_count() const {
  return weight.size() + (bias ? bias->size() : 0);
}

Var linear_forward(LinearLayer& layer, Var x) {
  Graph& g = x.graph();
  const Shape& s = x.shape();
  const bool vector_input = s.size() == 1;
  if (!(vector_input || s.size() == 2) || s.back() != layer.in_dim)
    throw ShapeError("linear: input " + shape_str(s) + " does not match in_dim " +
                     std::to_string(layer.in_dim));
  Var x2 = vector_input ? reshape(x, {1, layer.in_dim}) : x;
  Var y = matmul(x2, g.parameter(layer.weight));
  if (layer.bias) y = add(y, broadcast_rows(g.parameter(*layer.bias), y.shape()[0]));
  return vector_input ? reshape(y, {layer.out_dim}) : y;
}

EmbeddingLayer::EmbeddingLayer(std::size_t vocab, std::size_t dim) : table(Tensor({vocab, dim})) {}

void EmbeddingLayer::init(Rng& rng) { xavier_uniform(table.value, vocab(), dim(), rng); }

Var embedding_lookup(EmbeddingLayer& layer, Graph& g, std::span<const std::size_t> ids) {
  for (auto id : ids)
    if (id >= layer.vocab())
      throw ShapeError("embedding: token id " + std::to_string(id) + " out of vocabulary of " +
                       std::to_string(layer.vocab()));
  return gather_rows(g.parameter(layer.table), ids);
}

LstmCell::LstmCell(std::size_t input, std::size_t hidden)
    : input_dim(input),
      hidden_dim(hidden),
      w_input(Tensor({input, 4 * hidden})),
      w_hidden(Tensor({hidden, 4 * hidden})),
      bias(Tensor({4 * hidden})) {}

void LstmCell::init(Rng& rng) {
  xavier_uniform(w_input.value, input_dim, 4 * hidden_dim, rng);
  xavier_uniform(w_hidden.value, hidden_dim, 4 * hidden_dim, rng);
  bias.value.fill(0.0);
  for (std::size_t j = hidden_dim; j < 2 * hidden_dim; ++j) bias.value[j] = 1.0;
}

LstmState lstm_recur(LstmCell& cell, Var input_proj, Var h_prev, Var c_prev) {
  const std::size_t h = cell.hidden_dim;
  if (input_proj.shape() != Shape{4 * h} || h_prev.shape() != Shape{h} ||
      c_prev.shape() != Shape{h})
    throw ShapeError("lstm: state shapes " + shape_str(h_prev.shape()) + "/" +
                     shape_str(c_prev.shape()) + " do not match hidden size " + std::to_string(h));
  Graph& g = input_proj.graph();
  Var recur = reshape(matmul(reshape(h_prev, {1, h}), g.parameter(cell.w_hidden)), {4 * h});
  Var z = add(input_proj, recur);
  Var in_gate = sigmoid(slice(z, 0, 0, h));
  Var forget_gate = sigmoid(slice(z, 0, h, h));
  Var candidate = tanh(slice(z, 0, 2 * h, h));
  Var out_gate = sigmoid(slice(z, 0, 3 * h, h));
  Var c = add(hadamard(forget_gate, c_prev), hadamard(in_gate, candidate));
  Var hidden = hadamard(out_gate, tanh(c));
  return {hidden, c};
}

LstmState lstm_step(LstmCell& cell, Var x_t, Var h_prev, Var c_prev) {
  if (x_t.shape() != Shape{cell.input_dim})
    throw ShapeError("lstm: input " + shape_str(x_t.shape()) + " does not match input size " +
                     std::to_string(cell.input_dim));
  Graph& g = x_t.graph();
  const std::size_t gates = 4 * cell.hidden_dim;
  Var proj = reshape(matmul(reshape(x_t, {1, cell.input_dim}), g.parameter(cell.w_input)), {gates});
  proj = add(proj, g.parameter(cell.bias));
  return lstm_recur(cell, proj, h_prev, c_prev);
}

Var dropout(const DropoutSpec& spec, Var x, Rng& rng) {
  if (!(spec.ratio >= 0.0 && spec.ratio < 1.0))
    throw ConfigError("dropout ratio must be in [0, 1), got " + std::to_string(spec.ratio));
  if (spec.mode == Mode::inference || spec.ratio == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - spec.ratio);
  Tensor mask = Tensor::zeros_like(x.value());
  for (auto& m : mask.data()) m = rng.uniform() < spec.ratio ? 0.0 : keep_scale;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.graph().apply("dropout", std::move(out), {x},
                         [mask = std::move(mask)](const BackwardContext& c) {
                           if (Tensor* d = c.input_grads[0])
                             for (std::size_t i = 0; i < mask.size(); ++i)
                               (*d)[i] += c.grad[i] * mask[i];
                         });
}

Var softmax(Var x, std::size_t axis) {
  const Tensor& v = x.value();
  const AxisSplit s = split_axis(v.shape(), axis);
  Tensor out = Tensor::zeros_like(v);
  auto at = [s](std::size_t o, std::size_t d, std::size_t i) {
    return (o * s.dim + d) * s.inner + i;
  };
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t d = 0; d < s.dim; ++d) peak = std::max(peak, v[at(o, d, i)]);
      double total = 0.0;
      for (std::size_t d = 0; d < s.dim; ++d) {
        const double e = std::exp(v[at(o, d, i)] - peak);
        out[at(o, d, i)] = e;
        total += e;
      }
      for (std::size_t d = 0; d < s.dim; ++d) out[at(o, d, i)] /= total;
    }
  return x.graph().apply("softmax", std::move(out), {x}, [s, at](const BackwardContext& c) {
    Tensor* dx = c.input_grads[0];
    if (!dx) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        double dot = 0.0;
        for (std::size_t d = 0; d < s.dim; ++d) dot += c.grad[at(o, d, i)] * c.value[at(o, d, i)];
        for (std::size_t d = 0; d < s.dim; ++d) {
          const std::size_t k = at(o, d, i);
          (*dx)[k] += c.value[k] * (c.grad[k] - dot);
        }
      }
  });
}

QuestionEncoding encode_question(EmbeddingLayer& embedding, LstmCell& cell, Graph& g,
                                 std::span<const std::size_t> tokens, std::size_t max_len,
                                 std::size_t pad_id) {
  if (tokens.empty()) throw ShapeError("empty token sequence");
  if (tokens.size() > max_len)
    throw ShapeError("question of " + std::to_string(tokens.size()) +
                     " tokens exceeds max length " + std::to_string(max_len));
  if (embedding.dim() != cell.input_dim)
    throw ShapeError("embedding dim " + std::to_string(embedding.dim()) +
                     " does not match LSTM input " + std::to_string(cell.input_dim));
  std::vector<std::size_t> ids(tokens.begin(), tokens.end());
  ids.resize(max_len, pad_id);

  const std::size_t h = cell.hidden_dim;
  Var emb = embedding_lookup(embedding, g, ids);
  Var proj = matmul(emb, g.parameter(cell.w_input));
  proj = add(proj, broadcast_rows(g.parameter(cell.bias), max_len));

  LstmState state{g.constant(Tensor({h})), g.constant(Tensor({h}))};
  std::vector<Var> states;
  states.reserve(max_len);
  for (std::size_t t = 0; t < max_len; ++t) {
    Var x_t = reshape(slice(proj, 0, t, 1), {4 * h});
    state = lstm_recur(cell, x_t, state.h, state.c);
    states.push_back(reshape(state.h, {1, h}));
  }
  QuestionEncoding enc;
  enc.all_states = concat(states, 0);
  enc.last_state = reshape(states[tokens.size() - 1], {h});
  enc.pad_mask.assign(max_len, true);
  std::fill_n(enc.pad_mask.begin(), tokens.size(), false);
  return enc;
}

}  // namespace mfb
