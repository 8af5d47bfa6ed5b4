#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mfb/layers.hpp"

namespace mfb {

struct MfbConfig {
  std::size_t m = 0;  // x width
  std::size_t n = 0;  // y width
  std::size_t k = 1;  // factors per output
  std::size_t o = 1;  // output width
  double dropout = 0.1;

  void validate() const;
};

struct MfhConfig {
  MfbConfig block;
  std::size_t order = 1;  // p
};

// Which normalizations follow sum pooling. Both on is the standard module.
struct NormSpec {
  bool power = true;
  bool l2 = true;
};

// One MFB block: projections x -> k*o and y -> k*o, dropout after the product.
struct MfbBlock {
  MfbConfig config;
  LinearLayer proj_x;
  LinearLayer proj_y;
  DropoutSpec dropout;

  MfbBlock() = default;
  explicit MfbBlock(const MfbConfig& cfg, bool with_bias = true);
  void init(Rng& rng);
};

// Sums consecutive non-overlapping windows of k along the last axis.
Var sum_pool(Var x, std::size_t k);
// sign(z) * sqrt(|z|). The derivative at exactly 0 is taken as 0.
Var power_norm(Var z);
// z / max(||z||, 1e-12); per row for a matrix.
Var l2_norm(Var z);

// Dropout(proj_x(x) o proj_y(y)). x may be [m] or [B x m]; y may be [n],
// [B x n], or [n] broadcast over the rows of a batched x.
Var mfb_expand(MfbBlock& block, Var x, Var y, Rng& rng);
Var mfb_squeeze(Var z_exp, std::size_t k, NormSpec norm = {});
Var mfb(MfbBlock& block, Var x, Var y, Rng& rng, NormSpec norm = {});

// Cascade of MFB blocks: each expand output is multiplied into the previous
// one (starting from all-ones), every stage is squeezed, and the p outputs
// are concatenated along the last axis.
Var mfh_forward(std::span<MfbBlock> blocks, Var x, Var y, Rng& rng, NormSpec norm = {});

// (U^T x) o (V^T y), no activation.
Var mlb_raw(LinearLayer& proj_x, LinearLayer& proj_y, Var x, Var y);
// tanh((U^T x) o (V^T y)).
Var mlb(LinearLayer& proj_x, LinearLayer& proj_y, Var x, Var y);

std::size_t count_fusion_params(const MfbConfig& cfg, bool with_bias = true);
std::size_t count_fusion_params(const MfhConfig& cfg, bool with_bias = true);

}  // namespace mfb
