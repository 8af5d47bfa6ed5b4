#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mfb/autograd.hpp"
#include "mfb/rng.hpp"

namespace mfb {

// Uniform in [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
void xavier_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// y = x W + b with W stored [in x out].
struct LinearLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Parameter weight;
  std::optional<Parameter> bias;

  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out, bool with_bias = true);

  void init(Rng& rng);
  std::size_t param_count() const;
};

// x: [batch x in] -> [batch x out], or [in] -> [out].
Var linear_forward(LinearLayer& layer, Var x);

struct EmbeddingLayer {
  Parameter table;  // [vocab x dim]

  EmbeddingLayer() = default;
  EmbeddingLayer(std::size_t vocab, std::size_t dim);
  void init(Rng& rng);
  std::size_t vocab() const { return table.value.dim(0); }
  std::size_t dim() const { return table.value.dim(1); }
};

// [len x dim] rows of the table.
Var embedding_lookup(EmbeddingLayer& layer, Graph& g, std::span<const std::size_t> ids);

// Gates are laid out (input, forget, cell-candidate, output) along the 4h axis.
struct LstmCell {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Parameter w_input;   // [in x 4h]
  Parameter w_hidden;  // [h x 4h]
  Parameter bias;      // [4h]

  LstmCell() = default;
  LstmCell(std::size_t input, std::size_t hidden);
  // Xavier weights; forget-gate bias 1, others 0.
  void init(Rng& rng);
};

struct LstmState {
  Var h;  // [h]
  Var c;  // [h]
};

LstmState lstm_step(LstmCell& cell, Var x_t, Var h_prev, Var c_prev);
// Recurrence given the input projection x_t W_input + bias, shape [4h].
LstmState lstm_recur(LstmCell& cell, Var input_proj, Var h_prev, Var c_prev);

enum class Mode { training, inference };

struct DropoutSpec {
  double ratio = 0.0;
  Mode mode = Mode::inference;
};

// Inverted dropout. Inference mode or ratio 0 returns `x` itself.
Var dropout(const DropoutSpec& spec, Var x, Rng& rng);

// Numerically stable softmax along `axis`.
Var softmax(Var x, std::size_t axis);

struct QuestionEncoding {
  Var all_states;  // [T x h]
  Var last_state;  // [h]
  std::vector<bool> pad_mask;  // true at pad positions
};

// Pads `tokens` to `max_len` with `pad_id` and runs the LSTM over every
// position. `last_state` is taken at the last non-pad position.
QuestionEncoding encode_question(EmbeddingLayer& embedding, LstmCell& cell, Graph& g,
                                 std::span<const std::size_t> tokens, std::size_t max_len,
                                 std::size_t pad_id = 0);

}  // namespace mfb
