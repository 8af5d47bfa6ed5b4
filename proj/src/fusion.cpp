#include "mfb/fusion.hpp"

#include <cmath>
#include <string>

#include "mfb/errors.hpp"

namespace mfb {

namespace {

constexpr double kL2Epsilon = 1e-12;

// Projects x and y and multiplies the results, broadcasting a vector y
// projection over the rows of a batched x.
Var projected_product(LinearLayer& px, LinearLayer& py, Var x, Var y) {
  Var xp = linear_forward(px, x);
  Var yp = linear_forward(py, y);
  if (xp.shape().size() == 2 && yp.shape().size() == 1)
    yp = broadcast_rows(yp, xp.shape()[0]);
  if (xp.shape() != yp.shape())
    throw ShapeError("fusion: projected shapes differ: " + shape_str(xp.shape()) + " vs " +
                     shape_str(yp.shape()));
  return hadamard(xp, yp);
}

}  // namespace

void MfbConfig::validate() const {
  if (m == 0 || n == 0 || k == 0 || o == 0)
    throw ConfigError("MFB dims must be positive (m=" + std::to_string(m) + ", n=" +
                      std::to_string(n) + ", k=" + std::to_string(k) + ", o=" +
                      std::to_string(o) + ")");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw ConfigError("MFB dropout must be in [0, 1), got " + std::to_string(dropout));
}

MfbBlock::MfbBlock(const MfbConfig& cfg, bool with_bias)
    : config(cfg),
      proj_x(cfg.m, cfg.k * cfg.o, with_bias),
      proj_y(cfg.n, cfg.k * cfg.o, with_bias),
      dropout{cfg.dropout, Mode::inference} {
  cfg.validate();
}

void MfbBlock::init(Rng& rng) {
  proj_x.init(rng);
  proj_y.init(rng);
}

Var sum_pool(Var x, std::size_t k) {
  const Tensor& v = x.value();
  const std::size_t width = v.shape().back();
  if (k == 0 || width % k != 0)
    throw ShapeError("sum_pool: last dimension " + std::to_string(width) +
                     " is not divisible by window " + std::to_string(k));
  const std::size_t outer = v.size() / width;
  const std::size_t groups = width / k;
  Shape out_shape = v.shape();
  out_shape.back() = groups;
  Tensor out(out_shape);
  for (std::size_t r = 0; r < outer; ++r)
    for (std::size_t gidx = 0; gidx < groups; ++gidx) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += v[r * width + gidx * k + j];
      out[r * groups + gidx] = acc;
    }
  return x.graph().apply("sum_pool", std::move(out), {x},
                         [outer, groups, k](const BackwardContext& c) {
                           Tensor* d = c.input_grads[0];
                           if (!d) return;
                           const std::size_t width = groups * k;
                           for (std::size_t r = 0; r < outer; ++r)
                             for (std::size_t gidx = 0; gidx < groups; ++gidx)
                               for (std::size_t j = 0; j < k; ++j)
                                 (*d)[r * width + gidx * k + j] += c.grad[r * groups + gidx];
                         });
}

Var power_norm(Var z) {
  const Tensor& v = z.value();
  Tensor out = Tensor::zeros_like(v);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = std::sqrt(std::abs(v[i]));
    out[i] = v[i] > 0.0 ? r : (v[i] < 0.0 ? -r : 0.0);
  }
  return z.graph().apply("power_norm", std::move(out), {z}, [](const BackwardContext& c) {
    Tensor* d = c.input_grads[0];
    if (!d) return;
    for (std::size_t i = 0; i < c.value.size(); ++i) {
      const double r = std::abs(c.value[i]);
      if (r > 0.0) (*d)[i] += c.grad[i] * 0.5 / r;
    }
  });
}

Var l2_norm(Var z) {
  const Tensor& v = z.value();
  const std::size_t width = v.shape().back();
  const std::size_t rows = v.size() / width;
  Tensor out = Tensor::zeros_like(v);
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < width; ++j) sq += v[r * width + j] * v[r * width + j];
    norms[r] = std::max(std::sqrt(sq), kL2Epsilon);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = v[r * width + j] / norms[r];
  }
  return z.graph().apply(
      "l2_norm", std::move(out), {z}, [rows, width, norms](const BackwardContext& c) {
        Tensor* d = c.input_grads[0];
        if (!d) return;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = c.value.ptr() + r * width;
          const double* g = c.grad.ptr() + r * width;
          double* dz = d->ptr() + r * width;
          if (norms[r] > kL2Epsilon) {
            double dot = 0.0;
            for (std::size_t j = 0; j < width; ++j) dot += y[j] * g[j];
            for (std::size_t j = 0; j < width; ++j) dz[j] += (g[j] - y[j] * dot) / norms[r];
          } else {
            // Clamped branch: y = z / eps is linear in z.
            for (std::size_t j = 0; j < width; ++j) dz[j] += g[j] / kL2Epsilon;
          }
        }
      });
}

Var mfb_expand(MfbBlock& block, Var x, Var y, Rng& rng) {
  if (x.shape().back() != block.config.m || y.shape().back() != block.config.n)
    throw ShapeError("mfb: inputs " + shape_str(x.shape()) + ", " + shape_str(y.shape()) +
                     " do not match m=" + std::to_string(block.config.m) +
                     ", n=" + std::to_string(block.config.n));
  return dropout(block.dropout, projected_product(block.proj_x, block.proj_y, x, y), rng);
}

Var mfb_squeeze(Var z_exp, std::size_t k, NormSpec norm) {
  Var z = sum_pool(z_exp, k);
  if (norm.power) z = power_norm(z);
  if (norm.l2) z = l2_norm(z);
  return z;
}

Var mfb(MfbBlock& block, Var x, Var y, Rng& rng, NormSpec norm) {
  return mfb_squeeze(mfb_expand(block, x, y, rng), block.config.k, norm);
}

Var mfh_forward(std::span<MfbBlock> blocks, Var x, Var y, Rng& rng, NormSpec norm) {
  if (blocks.empty()) throw ConfigError("mfh: order must be at least 1");
  const MfbConfig& first = blocks.front().config;
  for (const auto& b : blocks)
    if (b.config.m != first.m || b.config.n != first.n || b.config.k != first.k ||
        b.config.o != first.o)
      throw ConfigError("mfh: all blocks must share m, n, k, o");
  std::vector<Var> outputs;
  outputs.reserve(blocks.size());
  Var z_exp;
  for (auto& block : blocks) {
    Var expanded = mfb_expand(block, x, y, rng);
    // The cascade starts from an all-ones vector, so the first stage is the
    // block's own expand output.
    z_exp = z_exp.valid() ? hadamard(z_exp, expanded) : expanded;
    outputs.push_back(mfb_squeeze(z_exp, first.k, norm));
  }
  if (outputs.size() == 1) return outputs.front();
  return concat(outputs, outputs.front().shape().size() - 1);
}

Var mlb_raw(LinearLayer& proj_x, LinearLayer& proj_y, Var x, Var y) {
  if (proj_x.out_dim != proj_y.out_dim)
    throw ShapeError("mlb: projection widths differ: " + std::to_string(proj_x.out_dim) +
                     " vs " + std::to_string(proj_y.out_dim));
  return projected_product(proj_x, proj_y, x, y);
}

Var mlb(LinearLayer& proj_x, LinearLayer& proj_y, Var x, Var y) {
  return tanh(mlb_raw(proj_x, proj_y, x, y));
}

std::size_t count_fusion_params(const MfbConfig& cfg, bool with_bias) {
  const std::size_t ko = cfg.k * cfg.o;
  return cfg.m * ko + cfg.n * ko + (with_bias ? 2 * ko : 0);
}

std::size_t count_fusion_params(const MfhConfig& cfg, bool with_bias) {
  return cfg.order * count_fusion_params(cfg.block, with_bias);
}

}  // namespace mfb
