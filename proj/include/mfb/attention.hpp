#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mfb/fusion.hpp"

namespace mfb {

// Two 1x1 "convolutions" applied per position: hidden (ReLU) then one logit
// per glimpse.
struct AttentionHead {
  LinearLayer hidden;
  LinearLayer logits;

  AttentionHead() = default;
  AttentionHead(std::size_t in, std::size_t hidden_width, std::size_t glimpses);
  void init(Rng& rng);
  std::size_t glimpses() const { return logits.out_dim; }
};

struct GlimpseOutput {
  Var attended;  // [g * feature_dim], glimpses concatenated
  Var weights;   // [g x positions]
};

// Additive offset applied to logits of masked positions.
inline constexpr double kMaskedLogit = -1e30;

// Attends over question states using the states alone. pad_mask[t] is true
// for positions that must receive no weight.
GlimpseOutput question_self_attention(AttentionHead& head, Var states,
                                      const std::vector<bool>& pad_mask);

// Fuses every grid feature with the question vector through one shared MFB
// block, scores the fused features, and attends over grid positions.
GlimpseOutput image_attention(AttentionHead& head, MfbBlock& fuse, Var grids, Var q_att, Rng& rng,
                              NormSpec norm = {});

}  // namespace mfb
