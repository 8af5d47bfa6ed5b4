#include "mfb/attention.hpp"

#include <algorithm>

#include "mfb/errors.hpp"

namespace mfb {

AttentionHead::AttentionHead(std::size_t in, std::size_t hidden_width, std::size_t glimpses)
    : hidden(in, hidden_width), logits(hidden_width, glimpses) {
  if (glimpses == 0) throw ConfigError("attention: glimpse count must be at least 1");
}

void AttentionHead::init(Rng& rng) {
  hidden.init(rng);
  logits.init(rng);
}

namespace {

// scores: [P x g]; values: [P x d].
GlimpseOutput attend(Var scores, Var values, const std::vector<bool>& mask) {
  Graph& g = scores.graph();
  const std::size_t positions = scores.shape()[0];
  const std::size_t glimpses = scores.shape()[1];
  if (!mask.empty()) {
    Tensor offset({positions, glimpses});
    for (std::size_t p = 0; p < positions; ++p)
      if (mask[p])
        for (std::size_t j = 0; j < glimpses; ++j) offset.at(p, j) = kMaskedLogit;
    scores = add(scores, g.constant(std::move(offset)));
  }
  Var weights = transpose(softmax(scores, 0));  // [g x P]
  Var attended = matmul(weights, values);       // [g x d]
  return {reshape(attended, {glimpses * values.shape()[1]}), weights};
}

Var score(AttentionHead& head, Var features) {
  return linear_forward(head.logits, relu(linear_forward(head.hidden, features)));
}

}  // namespace

GlimpseOutput question_self_attention(AttentionHead& head, Var states,
                                      const std::vector<bool>& pad_mask) {
  if (states.shape().size() != 2)
    throw ShapeError("question attention: states must be [T x h], got " +
                     shape_str(states.shape()));
  const std::size_t positions = states.shape()[0];
  if (pad_mask.size() != positions)
    throw ShapeError("question attention: mask length " + std::to_string(pad_mask.size()) +
                     " does not match " + std::to_string(positions) + " positions");
  if (std::all_of(pad_mask.begin(), pad_mask.end(), [](bool m) { return m; }))
    throw ShapeError("question attention: all positions are masked");
  return attend(score(head, states), states, pad_mask);
}

GlimpseOutput image_attention(AttentionHead& head, MfbBlock& fuse, Var grids, Var q_att, Rng& rng,
                              NormSpec norm) {
  if (grids.shape().size() != 2)
    throw ShapeError("image attention: grids must be [G x d], got " + shape_str(grids.shape()));
  Var fused = mfb(fuse, grids, q_att, rng, norm);  // [G x o]
  return attend(score(head, fused), grids, {});
}

}  // namespace mfb
